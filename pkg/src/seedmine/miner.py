"""Seed-guided mining: thresholded nearest neighbors and multi-label assignment.

Each seed document is embedded and queried against the frozen index; hits
at or above the similarity threshold inherit the seed's domain labels. A
chunk retrieved for several domains carries the union of them, and a chunk
retrieved by a multi-domain seed carries all of that seed's domains. A
document is considered labeled if any of its chunks is.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

from .errors import InsufficientData
from .hashutil import stable64
from .index import HnswIndex, Neighbor
from .seedgen import SeedDocument


@dataclass(frozen=True)
class MiningParams:
    k: int = 200
    t_sim: float = 0.85
    evidence_cap: int = 10

    def __post_init__(self):
        if not 0.0 < self.t_sim <= 1.0:
            raise ValueError("t_sim must be in (0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.evidence_cap < 1:
            raise ValueError("evidence_cap must be >= 1")


@dataclass(frozen=True)
class LabeledRecord:
    """A mined chunk with its domain labels and similarity provenance."""

    doc_id: str
    text: str
    labels: frozenset[str]
    evidence: dict[str, tuple[tuple[str, float], ...]]  # label -> ((seed_id, sim), ...)

    def __hash__(self):
        return hash((self.doc_id, self.labels))

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "text": self.text,
            "labels": sorted(self.labels),
            "evidence": [
                {"label": label, "seed_id": sid, "sim": sim}
                for label in sorted(self.evidence)
                for sid, sim in self.evidence[label]
            ],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LabeledRecord":
        evidence: dict[str, list[tuple[str, float]]] = {}
        for item in rec.get("evidence", []):
            evidence.setdefault(item["label"], []).append((item["seed_id"], float(item["sim"])))
        out = {k: tuple(v) for k, v in evidence.items()}
        for label in rec["labels"]:
            # synthetic negatives carry a label with no mining evidence
            out.setdefault(label, ())
        return cls(
            doc_id=rec["doc_id"],
            text=rec["text"],
            labels=frozenset(rec["labels"]),
            evidence=out,
        )


@dataclass(frozen=True)
class SeedHits:
    """Neighbors retrieved for one seed, tagged with the seed's domains."""

    seed_id: str
    domains: tuple[str, ...]
    neighbors: tuple[Neighbor, ...]


def mine_neighbors(
    seed: SeedDocument, index: HnswIndex, embedder, params: MiningParams
) -> list[Neighbor]:
    """Top-k neighbors of the seed's DOCUMENT field at or above t_sim."""
    vector = embedder.embed(seed.document)
    neighbors = index.query(vector, k=params.k)
    return [n for n in neighbors if n.similarity >= params.t_sim]


def assign_labels(
    hit_sets: Iterable[SeedHits],
    texts: Mapping[str, str],
    evidence_cap: int = 10,
) -> list[LabeledRecord]:
    """Merge per-seed hits into records keyed by doc id.

    Labels are the union of the domains of every seed that retrieved the
    doc. Evidence lists keep only the evidence_cap highest-similarity
    (seed, sim) pairs per label, ordered by similarity descending. The
    merge is a commutative set union, so hit order never matters.
    """
    acc: dict[str, dict[str, list[tuple[float, str]]]] = {}
    for hits in hit_sets:
        for neighbor in hits.neighbors:
            per_label = acc.setdefault(neighbor.id, {})
            for label in hits.domains:
                per_label.setdefault(label, []).append((neighbor.similarity, hits.seed_id))

    records = []
    for doc_id in sorted(acc):
        evidence = {}
        for label, pairs in acc[doc_id].items():
            # order on the similarity rounded to 1e-9 so mathematically
            # tied entries sort by seed id regardless of float summation
            # order in whatever produced them
            pairs.sort(key=lambda p: (-round(p[0], 9), p[1]))
            evidence[label] = tuple((sid, sim) for sim, sid in pairs[:evidence_cap])
        records.append(
            LabeledRecord(
                doc_id=doc_id,
                text=texts[doc_id],
                labels=frozenset(evidence),
                evidence=evidence,
            )
        )
    return records


def aggregate_doc_labels(
    records: Iterable[LabeledRecord], chunk_to_doc: Mapping[str, str]
) -> dict[str, set[str]]:
    """Document-level labels: the union over the document's labeled chunks."""
    out: dict[str, set[str]] = {}
    for rec in records:
        doc = chunk_to_doc[rec.doc_id]
        out.setdefault(doc, set()).update(rec.labels)
    return out


@dataclass(frozen=True)
class TrainingSplits:
    train: tuple[LabeledRecord, ...]
    dev: tuple[LabeledRecord, ...]
    test: tuple[LabeledRecord, ...]
    train_label_counts: dict[str, int]


def build_training_set(
    records: Iterable[LabeledRecord],
    split: tuple[float, float, float] = (0.8, 0.1, 0.1),
    min_label_records: int = 10,
) -> TrainingSplits:
    """Deterministic train/dev/test split by hash of doc_id.

    Records are ordered by a stable hash of their doc id and sliced into
    fraction-sized parts (largest-remainder rounding), so no doc id can
    land in two splits and rerunning reproduces the same split. Raises
    InsufficientData when any label has fewer than min_label_records
    training records.
    """
    fractions = tuple(split)
    if len(fractions) != 3 or any(f < 0 for f in fractions):
        raise ValueError("split must be three nonnegative fractions")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must sum to 1, got {sum(fractions)}")

    ordered = sorted(records, key=lambda r: (stable64(r.doc_id), r.doc_id))
    n = len(ordered)
    sizes = [int(f * n) for f in fractions]
    remainders = [f * n - s for f, s in zip(fractions, sizes)]
    for _ in range(n - sum(sizes)):
        i = max(range(3), key=lambda j: (remainders[j], -j))
        sizes[i] += 1
        remainders[i] = -1.0
    train = tuple(ordered[: sizes[0]])
    dev = tuple(ordered[sizes[0] : sizes[0] + sizes[1]])
    test = tuple(ordered[sizes[0] + sizes[1] :])

    counts: dict[str, int] = {}
    for rec in train:
        for label in rec.labels:
            counts[label] = counts.get(label, 0) + 1
    all_labels = {label for rec in ordered for label in rec.labels}
    for label in sorted(all_labels):
        if counts.get(label, 0) < min_label_records:
            raise InsufficientData(
                f"label {label!r} has {counts.get(label, 0)} training records"
                f" (< {min_label_records})"
            )
    return TrainingSplits(train=train, dev=dev, test=test, train_label_counts=counts)
