"""Multi-label domain classifier over hashed n-gram features.

One-vs-rest logistic regression trained with seeded SGD; lightweight
enough to stream through very large corpora. Records whose only label is
the reserved "none" marker act as negatives for every domain.
"""

from __future__ import annotations

import json
import logging
import math
import random
import struct
import zlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

from .errors import (
    CorruptModel,
    EmptyText,
    InsufficientData,
    IoFailure,
    NonFiniteLoss,
    VersionMismatch,
)
from .hashutil import stable64
from .miner import LabeledRecord

log = logging.getLogger(__name__)

NONE_LABEL = "none"

_MAGIC = b"SMCLS1\x00\x00"
_VERSION = 1


def featurize(
    text: str, buckets: int = 2**20, ngram_orders: Sequence[int] = (1, 2)
) -> dict[int, float]:
    """Hashed, L2-normalized n-gram counts over lowercased whitespace tokens."""
    tokens = text.lower().split()
    if not tokens:
        raise EmptyText("cannot featurize empty text")
    counts: dict[int, float] = {}
    for order in ngram_orders:
        for i in range(len(tokens) - order + 1):
            gram = "_".join(tokens[i : i + order])
            bucket = stable64(gram) % buckets
            counts[bucket] = counts.get(bucket, 0.0) + 1.0
    norm = math.sqrt(sum(v * v for v in counts.values()))
    return {k: v / norm for k, v in counts.items()}


@dataclass(frozen=True)
class TrainParams:
    buckets: int = 2**20
    ngram_orders: tuple[int, ...] = (1, 2)
    learning_rate: float = 0.5
    epochs: int = 20
    seed: int = 0
    threshold: float = 0.5  # dev-selection threshold


@dataclass
class ClassifierModel:
    labels: tuple[str, ...]
    buckets: int
    ngram_orders: tuple[int, ...]
    weights: np.ndarray  # shape (n_labels, buckets)
    bias: np.ndarray  # shape (n_labels,)
    params: TrainParams
    metadata: dict = field(default_factory=dict)


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-np.clip(z, -500.0, 500.0)))


def logistic_loss_and_grad(
    weights: np.ndarray,
    bias: float,
    features: Sequence[Mapping[int, float]],
    targets: Sequence[float],
) -> tuple[float, dict[int, float], float]:
    """Mean log-loss with gradients for one label's weight vector.

    Returns (loss, weight gradient on the touched buckets, bias gradient).
    Kept analytic and side-effect free so it can be checked against finite
    differences.
    """
    n = len(features)
    loss = 0.0
    grad_w: dict[int, float] = {}
    grad_b = 0.0
    for x, y in zip(features, targets):
        z = bias + sum(weights[k] * v for k, v in x.items())
        p = 1.0 / (1.0 + math.exp(-max(-500.0, min(500.0, z))))
        eps = 1e-12
        loss -= y * math.log(p + eps) + (1.0 - y) * math.log(1.0 - p + eps)
        g = p - y
        for k, v in x.items():
            grad_w[k] = grad_w.get(k, 0.0) + g * v
        grad_b += g
    return loss / n, {k: v / n for k, v in grad_w.items()}, grad_b / n


def _predict_sets(
    weights: np.ndarray,
    bias: np.ndarray,
    labels: tuple[str, ...],
    features: Sequence[Mapping[int, float]],
    threshold: float,
) -> list[set[str]]:
    out = []
    for x in features:
        keys = np.fromiter(x.keys(), dtype=np.int64, count=len(x))
        vals = np.fromiter(x.values(), dtype=np.float64, count=len(x))
        scores = _sigmoid(weights[:, keys] @ vals + bias)
        out.append({labels[j] for j in range(len(labels)) if scores[j] >= threshold})
    return out


def _micro_f1(gold: Sequence[set[str]], predicted: Sequence[set[str]]) -> float:
    tp = fp = fn = 0
    for g, p in zip(gold, predicted):
        tp += len(g & p)
        fp += len(p - g)
        fn += len(g - p)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


def train(
    train_records: Sequence[LabeledRecord],
    dev_records: Sequence[LabeledRecord],
    params: TrainParams | None = None,
) -> ClassifierModel:
    """One-vs-rest logistic regression via seeded SGD over shuffled epochs.

    Returns the epoch snapshot with the best dev micro-F1 (earliest epoch
    on ties). If the loss goes non-finite the learning rate is halved and
    training restarts, up to three times, before NonFiniteLoss is raised;
    any reduction is reported in the model metadata.
    """
    params = params or TrainParams()
    if not train_records:
        raise InsufficientData("no training records")
    labels = tuple(
        sorted({l for r in train_records for l in r.labels if l != NONE_LABEL})
    )
    if not labels:
        raise InsufficientData("no trainable labels (only negatives present)")
    dev_only = {
        l for r in dev_records for l in r.labels if l != NONE_LABEL
    } - set(labels)
    if dev_only:
        raise ValueError(f"dev contains labels unseen in train: {sorted(dev_only)}")
    for label in labels:
        if not any(label in r.labels for r in train_records):
            raise InsufficientData(f"label {label!r} has no positive training records")

    feats = [featurize(r.text, params.buckets, params.ngram_orders) for r in train_records]
    keys = [np.fromiter(x.keys(), dtype=np.int64, count=len(x)) for x in feats]
    vals = [np.fromiter(x.values(), dtype=np.float64, count=len(x)) for x in feats]
    targets = np.zeros((len(train_records), len(labels)))
    for i, rec in enumerate(train_records):
        for j, label in enumerate(labels):
            if label in rec.labels:
                targets[i, j] = 1.0
    dev_feats = [featurize(r.text, params.buckets, params.ngram_orders) for r in dev_records]
    dev_gold = [set(r.labels) - {NONE_LABEL} for r in dev_records]

    lr = params.learning_rate
    reductions = 0
    while True:
        result = _sgd_run(keys, vals, targets, labels, dev_feats, dev_gold, params, lr)
        if result is not None:
            weights, bias, best_epoch, best_f1 = result
            break
        reductions += 1
        if reductions > 3:
            raise NonFiniteLoss(
                f"loss diverged at learning rate {lr * 2}; reduce it further"
            )
        lr /= 2.0
        log.warning("non-finite loss; restarting with learning_rate=%g", lr)

    metadata = {
        "train_records": len(train_records),
        "dev_records": len(dev_records),
        "label_counts": {
            label: int(targets[:, j].sum()) for j, label in enumerate(labels)
        },
        "best_epoch": best_epoch,
        "best_dev_micro_f1": best_f1,
        "learning_rate_used": lr,
        "learning_rate_reductions": reductions,
        "seed": params.seed,
    }
    imbalance = max(metadata["label_counts"].values()) / max(
        1, min(metadata["label_counts"].values())
    )
    metadata["label_imbalance_ratio"] = round(imbalance, 3)
    return ClassifierModel(
        labels=labels,
        buckets=params.buckets,
        ngram_orders=params.ngram_orders,
        weights=weights,
        bias=bias,
        params=replace(params, learning_rate=lr),
        metadata=metadata,
    )


def _sgd_run(keys, vals, targets, labels, dev_feats, dev_gold, params, lr):
    n = len(keys)
    weights = np.zeros((len(labels), params.buckets))
    bias = np.zeros(len(labels))
    rng = random.Random(params.seed)
    order = list(range(n))
    best: tuple[float, int, np.ndarray, np.ndarray] | None = None
    for epoch in range(params.epochs):
        rng.shuffle(order)
        epoch_loss = 0.0
        for i in order:
            k, v = keys[i], vals[i]
            z = weights[:, k] @ v + bias
            p = _sigmoid(z)
            eps = 1e-12
            y = targets[i]
            epoch_loss += -float(
                np.sum(y * np.log(p + eps) + (1.0 - y) * np.log(1.0 - p + eps))
            )
            g = p - y
            weights[:, k] -= lr * np.outer(g, v)
            bias -= lr * g
        if not math.isfinite(epoch_loss) or not np.all(np.isfinite(weights)):
            return None
        if dev_feats:
            predicted = _predict_sets(weights, bias, labels, dev_feats, params.threshold)
            f1 = _micro_f1(dev_gold, predicted)
        else:
            f1 = -epoch_loss / n
        # ties go to the later epoch: equally accurate but better converged
        if best is None or f1 >= best[0]:
            best = (f1, epoch, weights.copy(), bias.copy())
    assert best is not None
    f1, epoch, w, b = best
    return w, b, epoch, f1 if dev_feats else 0.0


def predict(
    model: ClassifierModel, text: str, threshold: float = 0.5
) -> list[tuple[str, float]]:
    """Per-label sigmoid scores; labels at or above threshold, best first."""
    x = featurize(text, model.buckets, model.ngram_orders)
    k = np.fromiter(x.keys(), dtype=np.int64, count=len(x))
    v = np.fromiter(x.values(), dtype=np.float64, count=len(x))
    scores = _sigmoid(model.weights[:, k] @ v + model.bias)
    chosen = [
        (label, float(scores[j]))
        for j, label in enumerate(model.labels)
        if scores[j] >= threshold
    ]
    chosen.sort(key=lambda t: (-t[1], t[0]))
    return chosen


@dataclass(frozen=True)
class EvalReport:
    per_label: dict[str, dict[str, float]]
    micro_f1: float
    macro_f1: float
    confusion: dict[str, dict[str, int]]  # gold label -> predicted label counts

    def to_record(self) -> dict:
        return {
            "per_label": self.per_label,
            "micro_f1": self.micro_f1,
            "macro_f1": self.macro_f1,
            "confusion": self.confusion,
        }


def evaluate(
    model: ClassifierModel, test_records: Sequence[LabeledRecord], threshold: float = 0.5
) -> EvalReport:
    """Per-label precision/recall/F1 plus a gold-vs-predicted co-occurrence matrix."""
    if not test_records:
        raise ValueError("test records must be nonempty")
    gold = [set(r.labels) - {NONE_LABEL} for r in test_records]
    predicted = []
    confusion: dict[str, dict[str, int]] = {}
    for rec, g in zip(test_records, gold):
        p = {label for label, _ in predict(model, rec.text, threshold)}
        predicted.append(p)
        for gl in sorted(g) or [NONE_LABEL]:
            row = confusion.setdefault(gl, {})
            for pl in sorted(p) or [NONE_LABEL]:
                row[pl] = row.get(pl, 0) + 1

    per_label = {}
    f1s = []
    for label in model.labels:
        tp = sum(1 for g, p in zip(gold, predicted) if label in g and label in p)
        fp = sum(1 for g, p in zip(gold, predicted) if label not in g and label in p)
        fn = sum(1 for g, p in zip(gold, predicted) if label in g and label not in p)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_label[label] = {
            "precision": precision,
            "recall": recall,
            "f1": f1,
            "support": tp + fn,
        }
        f1s.append(f1)
    return EvalReport(
        per_label=per_label,
        micro_f1=_micro_f1(gold, predicted),
        macro_f1=sum(f1s) / len(f1s),
        confusion=confusion,
    )


def classify_corpus(
    model: ClassifierModel,
    docs: Iterable[Mapping],
    threshold: float = 0.5,
    text_field: str = "text",
) -> Iterator[dict]:
    """Annotate a document stream with predicted labels and scores.

    Streaming and order-preserving; per-document failures are logged and
    the document passes through with an empty prediction list.
    """
    for doc in docs:
        out = dict(doc)
        try:
            preds = predict(model, doc[text_field], threshold)
        except EmptyText:
            log.warning("empty text for doc %s; no prediction", doc.get("id"))
            preds = []
        out["predicted"] = [{"label": label, "score": score} for label, score in preds]
        yield out


def save_model(model: ClassifierModel, path: str | Path) -> None:
    """Versioned binary: JSON header, then per-label sparse weights, crc-checked."""
    path = Path(path)
    header = json.dumps(
        {
            "labels": list(model.labels),
            "buckets": model.buckets,
            "ngram_orders": list(model.ngram_orders),
            "params": {
                "buckets": model.params.buckets,
                "ngram_orders": list(model.params.ngram_orders),
                "learning_rate": model.params.learning_rate,
                "epochs": model.params.epochs,
                "seed": model.params.seed,
                "threshold": model.params.threshold,
            },
            "metadata": model.metadata,
        },
        sort_keys=True,
    ).encode("utf-8")
    body = bytearray()
    body += struct.pack("<I", len(header))
    body += header
    for j in range(len(model.labels)):
        row = model.weights[j]
        nonzero = np.nonzero(row)[0]
        body += struct.pack("<dI", float(model.bias[j]), len(nonzero))
        body += nonzero.astype("<u4").tobytes()
        body += row[nonzero].astype("<f8").tobytes()
    framed = _MAGIC + struct.pack("<HI", _VERSION, zlib.crc32(bytes(body))) + bytes(body)
    tmp = path.with_suffix(path.suffix + ".tmp")
    try:
        tmp.write_bytes(framed)
        tmp.replace(path)
    except OSError as exc:
        raise IoFailure(f"cannot save model to {path}: {exc}") from exc


def load_model(path: str | Path) -> ClassifierModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read model from {path}: {exc}") from exc
    prefix = len(_MAGIC) + struct.calcsize("<HI")
    if len(raw) < prefix or raw[: len(_MAGIC)] != _MAGIC:
        raise CorruptModel(f"bad magic in model file: {path}")
    version, crc = struct.unpack_from("<HI", raw, len(_MAGIC))
    if version != _VERSION:
        raise VersionMismatch(f"model format v{version} unsupported (expected v{_VERSION})")
    body = raw[prefix:]
    if zlib.crc32(body) != crc:
        raise CorruptModel(f"checksum mismatch in model file: {path}")
    try:
        off = 0
        (hlen,) = struct.unpack_from("<I", body, off)
        off += 4
        header = json.loads(body[off : off + hlen].decode("utf-8"))
        off += hlen
        labels = tuple(header["labels"])
        buckets = int(header["buckets"])
        weights = np.zeros((len(labels), buckets))
        bias = np.zeros(len(labels))
        for j in range(len(labels)):
            b, nnz = struct.unpack_from("<dI", body, off)
            off += struct.calcsize("<dI")
            idx = np.frombuffer(body, dtype="<u4", count=nnz, offset=off)
            off += 4 * nnz
            val = np.frombuffer(body, dtype="<f8", count=nnz, offset=off)
            off += 8 * nnz
            weights[j, idx] = val
            bias[j] = b
        if off != len(body):
            raise CorruptModel(f"model payload size mismatch: {path}")
        p = header["params"]
        params = TrainParams(
            buckets=int(p["buckets"]),
            ngram_orders=tuple(p["ngram_orders"]),
            learning_rate=float(p["learning_rate"]),
            epochs=int(p["epochs"]),
            seed=int(p["seed"]),
            threshold=float(p["threshold"]),
        )
    except (struct.error, ValueError, KeyError, UnicodeDecodeError) as exc:
        raise CorruptModel(f"model file structure invalid: {path}") from exc
    return ClassifierModel(
        labels=labels,
        buckets=buckets,
        ngram_orders=tuple(header["ngram_orders"]),
        weights=weights,
        bias=bias,
        params=params,
        metadata=header.get("metadata", {}),
    )
