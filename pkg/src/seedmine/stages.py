"""Pipeline stages over shared config with resumable file checkpoints.

Each stage declares its input files, output files, and the config sections
it depends on. A stage is skipped as up-to-date when its inputs and config
hash match the recorded state and its outputs exist; outputs are written
atomically (temp + rename, committed together) so a failed stage never
leaves partial files. Stage reports (counts, parameters, wall time, config
hash) land in <workdir>/reports and are metadata, not stage outputs.
"""

from __future__ import annotations

import io
import json
import logging
import random
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Iterator

import numpy as np

from . import classifier as clf
from . import corpus as corpus_mod
from . import evalkit, miner, mixer, seedgen
from .config import ConfigError, PipelineConfig
from .embed import HashedBowEmbedder, RemoteEmbedder
from .errors import DimensionMismatch, SeedMineError
from .hashutil import stable64, stable_digest
from .index import HnswIndex, IndexParams

log = logging.getLogger(__name__)

STAGE_ORDER = (
    "ingest",
    "embed",
    "index",
    "seedgen",
    "mine",
    "train",
    "classify",
    "metrics",
    "judge",
    "mix",
)


class PrerequisiteError(SeedMineError):
    """A required input file for the stage does not exist."""


class LockHeld(SeedMineError):
    """Another run holds the pipeline directory lock."""


def read_jsonl(path: Path) -> Iterator[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def jsonl_bytes(records: Iterable[dict]) -> bytes:
    # sorted keys keep reruns byte-identical
    out = io.StringIO()
    for rec in records:
        out.write(json.dumps(rec, sort_keys=True, ensure_ascii=False))
        out.write("\n")
    return out.getvalue().encode("utf-8")


class StageWriter:
    """Collects output files and commits them together via temp + rename."""

    def __init__(self):
        self._pending: dict[Path, Path] = {}

    def _tmp_for(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".stage-tmp")
        self._pending[path] = tmp
        return tmp

    def write_bytes(self, path: Path, data: bytes) -> None:
        self._tmp_for(path).write_bytes(data)

    def write_text(self, path: Path, text: str) -> None:
        self.write_bytes(path, text.encode("utf-8"))

    def write_jsonl(self, path: Path, records: Iterable[dict]) -> None:
        self.write_bytes(path, jsonl_bytes(records))

    def write_json(self, path: Path, obj) -> None:
        self.write_bytes(path, json.dumps(obj, sort_keys=True, indent=1).encode("utf-8"))

    def stage_file(self, path: Path) -> Path:
        """Temp path for writers that produce their own files (index, model)."""
        return self._tmp_for(path)

    def commit(self) -> None:
        for final, tmp in self._pending.items():
            tmp.replace(final)
        self._pending.clear()

    def abort(self) -> None:
        for tmp in self._pending.values():
            tmp.unlink(missing_ok=True)
        self._pending.clear()


def _build_embedder(cfg: PipelineConfig):
    section = cfg.section("embedder")
    backend = section.get("backend", "reference")
    dim = int(section.get("dim", 1024))
    if backend == "reference":
        return HashedBowEmbedder(dim=dim)
    if backend == "remote":
        endpoint = section.get("endpoint")
        if not endpoint:
            raise ConfigError("embedder.endpoint required for the remote backend")
        return RemoteEmbedder(
            endpoint=endpoint,
            dim=dim,
            batch_size=int(section.get("batch_size", 32)),
            timeout=float(section.get("timeout", 10.0)),
            max_retries=int(section.get("max_retries", 2)),
            max_in_flight=int(section.get("max_in_flight", 4)),
        )
    raise ConfigError(f"unknown embedder backend: {backend!r}")


def _build_generator(cfg: PipelineConfig, section_name: str):
    section = cfg.section(section_name)
    backend = section.get("backend", "stub")
    if backend == "stub":
        if section_name == "judge":
            return evalkit.StubJudgeGenerator()
        fixtures = section.get("fixtures")
        if fixtures:
            path = Path(fixtures)
            if not path.is_absolute():
                path = cfg.base_dir / path
            return seedgen.StubTextGenerator.from_jsonl(path)
        return seedgen.StubTextGenerator()
    if backend == "remote":
        endpoint = section.get("endpoint")
        if not endpoint:
            raise ConfigError(f"{section_name}.endpoint required for the remote backend")
        return seedgen.RemoteTextGenerator(
            endpoint=endpoint, max_retries=int(section.get("retries", 2))
        )
    raise ConfigError(f"unknown {section_name} backend: {backend!r}")


# --- stage bodies -----------------------------------------------------------


def _stage_ingest(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("filter")
    rules = corpus_mod.FilterRules(
        min_tokens=int(section["min_tokens"]),
        max_tokens=int(section["max_tokens"]),
        mean_word_length_min=float(section["mean_word_length_min"]),
        mean_word_length_max=float(section["mean_word_length_max"]),
        alpha_word_ratio_min=float(section["alpha_word_ratio_min"]),
        bullet_line_ratio_max=float(section["bullet_line_ratio_max"]),
        ellipsis_line_ratio_max=float(section["ellipsis_line_ratio_max"]),
        symbol_word_ratio_max=float(section["symbol_word_ratio_max"]),
    )
    malformed: list[corpus_mod.MalformedRecord] = []
    rejects: list[dict] = []
    parsed = 0
    kept: list[corpus_mod.Document] = []
    with open(cfg.path("corpus_in"), "rb") as fh:
        for doc in corpus_mod.parse_records(fh, malformed=malformed):
            parsed += 1
            verdict = corpus_mod.quality_filter(doc, rules)
            if verdict.kept:
                kept.append(doc)
            else:
                rejects.append({"id": doc.id, "reason": verdict.reason})

    def on_drop(doc: corpus_mod.Document, reason: str) -> None:
        rejects.append({"id": doc.id, "reason": reason})

    deduped = list(corpus_mod.dedup_exact(kept, on_drop=on_drop))
    docs = corpus_mod.dedup_subdoc(
        deduped, int(section["subdoc_frequency_threshold"]), on_drop=on_drop
    )
    max_words = int(section["chunk_max_words"])
    chunk_rows = []
    for doc in docs:
        for chunk in corpus_mod.chunk_document(doc, max_words=max_words):
            chunk_rows.append(
                {
                    "id": f"{chunk.doc_id}#{chunk.index:04d}",
                    "doc_id": chunk.doc_id,
                    "index": chunk.index,
                    "text": chunk.text,
                    "word_count": chunk.word_count,
                    "oversize": chunk.oversize,
                }
            )
    writer.write_jsonl(
        cfg.path("clean"),
        (
            {
                "id": d.id,
                "text": d.text,
                "source": d.source,
                "word_count": d.word_count,
                "token_count": d.token_count,
            }
            for d in docs
        ),
    )
    writer.write_jsonl(cfg.path("chunks"), chunk_rows)
    writer.write_jsonl(
        cfg.path("malformed"),
        ({"line_number": m.line_number, "reason": m.reason} for m in malformed),
    )
    writer.write_jsonl(cfg.path("rejects"), rejects)
    reject_reasons: dict[str, int] = {}
    for row in rejects:
        reject_reasons[row["reason"]] = reject_reasons.get(row["reason"], 0) + 1
    counts.update(
        parsed=parsed,
        malformed=len(malformed),
        rejected=len(rejects),
        rejected_by_reason=reject_reasons,
        docs_out=len(docs),
        chunks_out=len(chunk_rows),
    )


def _stage_embed(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    chunks = list(read_jsonl(cfg.path("chunks")))
    embedder = _build_embedder(cfg)
    vectors = embedder.embed_batch([c["text"] for c in chunks])
    matrix = (
        np.stack([v.values for v in vectors])
        if vectors
        else np.zeros((0, embedder.dim))
    )
    buf = io.BytesIO()
    np.save(buf, matrix)
    writer.write_bytes(cfg.path("embeddings"), buf.getvalue())
    writer.write_json(cfg.path("embedding_ids"), [c["id"] for c in chunks])
    counts.update(chunks=len(chunks), dim=int(matrix.shape[1]) if matrix.size else embedder.dim)


def _stage_index(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("index")
    ids = json.loads(cfg.path("embedding_ids").read_text())
    matrix = np.load(cfg.path("embeddings"))
    params = IndexParams(
        dim=int(matrix.shape[1]),
        m=int(section["m"]),
        ef_construction=int(section["ef_construction"]),
        ef_search=int(section["ef_search"]),
        seed=cfg.stage_seed("index", section.get("seed")),
    )
    index = HnswIndex.build(params)
    for item_id, vector in zip(ids, matrix):
        index.insert(item_id, vector)
    index.persist(writer.stage_file(cfg.path("index")))
    counts.update(items=index.size(), m=params.m, ef_construction=params.ef_construction)


def _stage_seedgen(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("seedgen")
    domains = section.get("domains") or []
    if not domains:
        raise ConfigError("seedgen.domains must list at least one industry")
    llm = _build_generator(cfg, "seedgen")
    seeds = seedgen.generate_batch(
        domains,
        count=int(section["count_per_domain"]),
        llm=llm,
        multi_domain_prob=float(section["multi_domain_prob"]),
        rng_seed=cfg.stage_seed("seedgen", section.get("seed")),
        retries=int(section["retries"]),
        failure_ceiling=float(section["failure_ceiling"]),
        max_tokens=int(section["max_tokens"]),
        temperature=float(section["temperature"]),
        max_workers=int(section["max_workers"]),
    )
    writer.write_jsonl(cfg.path("seeds"), (s.to_record() for s in seeds))
    multi = sum(1 for s in seeds if len(s.spec.industries) == 2)
    counts.update(seeds=len(seeds), domains=len(domains), multi_domain_seeds=multi)


def _stage_mine(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("mining")
    index = HnswIndex.load(cfg.path("index"))
    embedder = _build_embedder(cfg)
    if embedder.dim != index.params.dim:
        raise DimensionMismatch(
            f"embedder dim {embedder.dim} != index dim {index.params.dim}"
        )
    params = miner.MiningParams(
        k=int(section["k"]),
        t_sim=float(section["t_sim"]),
        evidence_cap=int(section["evidence_cap"]),
    )
    seeds = [seedgen.SeedDocument.from_record(r) for r in read_jsonl(cfg.path("seeds"))]
    texts = {c["id"]: c["text"] for c in read_jsonl(cfg.path("chunks"))}
    hit_sets = []
    for seed in seeds:
        neighbors = tuple(miner.mine_neighbors(seed, index, embedder, params))
        hit_sets.append(miner.SeedHits(seed.id, seed.spec.industries, neighbors))
    records = miner.assign_labels(hit_sets, texts, evidence_cap=params.evidence_cap)
    writer.write_jsonl(cfg.path("labels"), (r.to_record() for r in records))
    counts.update(
        seeds=len(seeds),
        labeled_chunks=len(records),
        label_pairs=sum(len(r.labels) for r in records),
        multi_label_chunks=sum(1 for r in records if len(r.labels) > 1),
    )


def _stage_train(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("classifier")
    records = [miner.LabeledRecord.from_record(r) for r in read_jsonl(cfg.path("labels"))]
    mined_ids = {r.doc_id for r in records}
    unmined = [
        (c["id"], c["text"])
        for c in read_jsonl(cfg.path("chunks"))
        if c["id"] not in mined_ids
    ]
    unmined.sort()
    train_seed = cfg.stage_seed("train", section.get("seed"))
    # negatives sampling gets its own stream even when a seed is configured
    rng = random.Random(stable64(f"{train_seed}:negatives"))
    wanted = int(float(section["negatives_ratio"]) * len(records))
    chosen = rng.sample(unmined, min(wanted, len(unmined)))
    negatives = [
        miner.LabeledRecord(
            doc_id=doc_id,
            text=text,
            labels=frozenset({clf.NONE_LABEL}),
            evidence={clf.NONE_LABEL: ()},
        )
        for doc_id, text in sorted(chosen)
    ]
    splits = miner.build_training_set(
        records + negatives,
        split=tuple(float(f) for f in section["split"]),
        min_label_records=int(section["min_label_records"]),
    )
    splits_dir = cfg.path("splits_dir")
    for part, rows in (("train", splits.train), ("dev", splits.dev), ("test", splits.test)):
        writer.write_jsonl(splits_dir / f"{part}.jsonl", (r.to_record() for r in rows))
    params = clf.TrainParams(
        buckets=int(section["buckets"]),
        ngram_orders=tuple(int(n) for n in section["ngram_orders"]),
        learning_rate=float(section["learning_rate"]),
        epochs=int(section["epochs"]),
        seed=cfg.stage_seed("train", section.get("seed")),
        threshold=float(section["threshold"]),
    )
    model = clf.train(list(splits.train), list(splits.dev), params)
    clf.save_model(model, writer.stage_file(cfg.path("model")))
    counts.update(
        train=len(splits.train),
        dev=len(splits.dev),
        test=len(splits.test),
        negatives=len(negatives),
        labels=list(model.labels),
        best_dev_micro_f1=model.metadata["best_dev_micro_f1"],
    )
    if splits.test:
        report = clf.evaluate(model, list(splits.test), threshold=params.threshold)
        counts["test_micro_f1"] = report.micro_f1
        counts["test_macro_f1"] = report.macro_f1


def _stage_classify(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("classifier")
    model = clf.load_model(cfg.path("model"))
    docs = read_jsonl(cfg.path("clean"))
    labeled = 0
    rows = []
    for row in clf.classify_corpus(model, docs, threshold=float(section["threshold"])):
        labeled += bool(row["predicted"])
        rows.append(row)
    writer.write_jsonl(cfg.path("classified"), rows)
    counts.update(docs=len(rows), docs_with_labels=labeled)


def _stage_metrics(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("metrics")
    real = [d["text"] for d in read_jsonl(cfg.path("clean"))]
    synth = [
        seedgen.SeedDocument.from_record(r).document for r in read_jsonl(cfg.path("seeds"))
    ]
    if not real or not synth:
        raise ValueError("metrics stage needs nonempty clean corpus and seeds")
    rng = random.Random(cfg.stage_seed("metrics", section.get("seed")))
    size = int(section["sample_size"])
    if len(real) > size:
        real = rng.sample(real, size)
    if len(synth) > size:
        synth = rng.sample(synth, size)
    comparison = evalkit.compare_corpora(real, synth)
    writer.write_json(
        cfg.path("metrics"),
        {"real_docs": len(real), "synthetic_docs": len(synth), **comparison.to_record()},
    )
    writer.write_text(cfg.path("metrics_table"), comparison.format_table() + "\n")
    counts.update(real_docs=len(real), synthetic_docs=len(synth))


def _stage_judge(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("judge")
    items = []
    for row in read_jsonl(cfg.path("classified")):
        predictions = [(p["label"], float(p["score"])) for p in row.get("predicted", [])]
        if predictions:
            items.append((row["id"], row["text"], predictions))
    rng = random.Random(cfg.stage_seed("judge", section.get("seed")))
    size = int(section["sample_size"])
    if len(items) > size:
        items = rng.sample(items, size)
    llm = _build_generator(cfg, "judge")
    verdicts = evalkit.judge_predictions(
        items,
        llm,
        rng,
        retries=int(section["retries"]),
        max_tokens=int(section["max_tokens"]),
    )
    writer.write_jsonl(cfg.path("verdicts"), (v.to_record() for v in verdicts))
    if verdicts:
        report = evalkit.agreement_stats(verdicts)
        writer.write_json(cfg.path("agreement"), report.to_record())
        counts["overall_agreement_pct"] = report.overall_pct
    else:
        writer.write_json(cfg.path("agreement"), {"per_domain": {}, "overall_pct": None, "total_ratings": 0})
    counts.update(judged_docs=len(verdicts))


def _stage_mix(cfg: PipelineConfig, writer: StageWriter, counts: dict) -> None:
    section = cfg.section("mixer")
    target = section.get("target_domain")
    if not target:
        raise ConfigError("mixer.target_domain must be set")
    domain_rows = {}
    general_rows = {}
    for row in read_jsonl(cfg.path("classified")):
        labels = {p["label"] for p in row.get("predicted", [])}
        (domain_rows if target in labels else general_rows)[row["id"]] = row
    domain_pool = [(doc_id, len(r["text"].split())) for doc_id, r in domain_rows.items()]
    general_pool = [(doc_id, len(r["text"].split())) for doc_id, r in general_rows.items()]
    plan = mixer.plan_mix(
        domain_pool,
        general_pool,
        target_total_tokens=int(section["target_total_tokens"]),
        domain_fraction=float(section["domain_fraction"]),
        seed=cfg.stage_seed("mix", section.get("seed")),
        allow_repetition=bool(section["allow_repetition"]),
    )
    writer.write_json(cfg.path("mix_manifest"), plan.to_manifest())
    writer.write_jsonl(cfg.path("mixed"), emit_rows(plan, domain_rows, general_rows))
    counts.update(
        domain_pool=len(domain_pool),
        general_pool=len(general_pool),
        domain_tokens=plan.domain_tokens,
        general_tokens=plan.general_tokens,
        achieved_fraction=plan.achieved_fraction,
    )


def emit_rows(plan, domain_rows, general_rows):
    for row in mixer.emit_mix(plan, domain_rows, general_rows):
        row.pop("predicted", None)
        yield row


# --- stage registry and runner ----------------------------------------------


@dataclass(frozen=True)
class StageDef:
    name: str
    sections: tuple[str, ...]
    inputs: Callable[[PipelineConfig], list[Path]]
    outputs: Callable[[PipelineConfig], list[Path]]
    run: Callable[[PipelineConfig, StageWriter, dict], None]


def _seedgen_inputs(cfg: PipelineConfig) -> list[Path]:
    section = cfg.section("seedgen")
    fixtures = section.get("fixtures")
    if section.get("backend", "stub") == "stub" and fixtures:
        path = Path(fixtures)
        return [path if path.is_absolute() else cfg.base_dir / path]
    return []


STAGES: dict[str, StageDef] = {
    "ingest": StageDef(
        "ingest",
        ("filter",),
        lambda c: [c.path("corpus_in")],
        lambda c: [c.path("clean"), c.path("chunks"), c.path("malformed"), c.path("rejects")],
        _stage_ingest,
    ),
    "embed": StageDef(
        "embed",
        ("embedder",),
        lambda c: [c.path("chunks")],
        lambda c: [c.path("embeddings"), c.path("embedding_ids")],
        _stage_embed,
    ),
    "index": StageDef(
        "index",
        ("index",),
        lambda c: [c.path("embeddings"), c.path("embedding_ids")],
        lambda c: [c.path("index")],
        _stage_index,
    ),
    "seedgen": StageDef(
        "seedgen",
        ("seedgen",),
        _seedgen_inputs,
        lambda c: [c.path("seeds")],
        _stage_seedgen,
    ),
    "mine": StageDef(
        "mine",
        ("mining", "embedder"),
        lambda c: [c.path("index"), c.path("seeds"), c.path("chunks")],
        lambda c: [c.path("labels")],
        _stage_mine,
    ),
    "train": StageDef(
        "train",
        ("classifier",),
        lambda c: [c.path("labels"), c.path("chunks")],
        lambda c: [
            c.path("model"),
            c.path("splits_dir") / "train.jsonl",
            c.path("splits_dir") / "dev.jsonl",
            c.path("splits_dir") / "test.jsonl",
        ],
        _stage_train,
    ),
    "classify": StageDef(
        "classify",
        ("classifier",),
        lambda c: [c.path("model"), c.path("clean")],
        lambda c: [c.path("classified")],
        _stage_classify,
    ),
    "metrics": StageDef(
        "metrics",
        ("metrics",),
        lambda c: [c.path("clean"), c.path("seeds")],
        lambda c: [c.path("metrics"), c.path("metrics_table")],
        _stage_metrics,
    ),
    "judge": StageDef(
        "judge",
        ("judge",),
        lambda c: [c.path("classified")],
        lambda c: [c.path("verdicts"), c.path("agreement")],
        _stage_judge,
    ),
    "mix": StageDef(
        "mix",
        ("mixer",),
        lambda c: [c.path("classified")],
        lambda c: [c.path("mix_manifest"), c.path("mixed")],
        _stage_mix,
    ),
}


@dataclass
class StageOutcome:
    stage: str
    status: str  # "ok" | "up-to-date"
    report: dict


class _PipelineLock:
    # one stage at a time per pipeline directory
    def __init__(self, workdir: Path):
        self.path = workdir / ".lock"

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = self.path.open("x")
        except FileExistsError:
            raise LockHeld(f"pipeline lock already held: {self.path}") from None
        with fd:
            fd.write(str(time.time()))
        return self

    def __exit__(self, *exc):
        self.path.unlink(missing_ok=True)
        return False


def _fingerprint(path: Path) -> str:
    return stable_digest(path.read_bytes())


def run_stage(name: str, cfg: PipelineConfig) -> StageOutcome:
    """Run one pipeline stage with prerequisite, checkpoint, and lock handling."""
    stage = STAGES.get(name)
    if stage is None:
        raise ConfigError(f"unknown stage: {name!r} (choose from {', '.join(STAGE_ORDER)})")
    workdir = cfg.workdir
    workdir.mkdir(parents=True, exist_ok=True)
    with _PipelineLock(workdir):
        inputs = stage.inputs(cfg)
        for path in inputs:
            if not path.exists():
                raise PrerequisiteError(f"missing input for stage {name}: {path}")
        config_hash = cfg.config_hash(list(stage.sections))
        input_prints = {str(p): _fingerprint(p) for p in sorted(inputs)}
        state_path = workdir / ".stages" / f"{name}.json"
        outputs = stage.outputs(cfg)
        if state_path.exists():
            state = json.loads(state_path.read_text())
            if (
                state.get("config_hash") == config_hash
                and state.get("inputs") == input_prints
                and all(p.exists() for p in outputs)
            ):
                return StageOutcome(stage=name, status="up-to-date", report=state.get("report", {}))

        writer = StageWriter()
        counts: dict = {}
        started = time.perf_counter()
        try:
            stage.run(cfg, writer, counts)
            writer.commit()
        except BaseException:
            writer.abort()
            raise
        wall = time.perf_counter() - started
        report = {
            "stage": name,
            "status": "ok",
            "config_hash": config_hash,
            "inputs": input_prints,
            "outputs": {str(p): _fingerprint(p) for p in outputs},
            "params": {s: cfg.data.get(s) for s in stage.sections},
            "seed": cfg.seed,
            "counts": counts,
            "wall_time_s": round(wall, 3),
        }
        state_path.parent.mkdir(parents=True, exist_ok=True)
        state_path.write_text(
            json.dumps(
                {"config_hash": config_hash, "inputs": input_prints, "report": report},
                sort_keys=True,
                indent=1,
            )
        )
        reports_dir = workdir / "reports"
        reports_dir.mkdir(parents=True, exist_ok=True)
        (reports_dir / f"{name}.json").write_text(json.dumps(report, sort_keys=True, indent=1))
        return StageOutcome(stage=name, status="ok", report=report)
