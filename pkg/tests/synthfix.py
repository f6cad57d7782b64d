"""Synthetic 3-domain corpus fixtures with known ground-truth labels.

Each domain owns three subtopics with disjoint 20-word vocabularies. Pure
documents are small perturbations of one subtopic's base multiset, so two
documents from the same subtopic land around cosine 0.93 under the hashed
bag-of-words embedder while cross-subtopic pairs stay near zero. Mixed
documents take half their mass from each of two subtopics in different
domains, putting them around 0.47 of any pure seed (below the 0.85 mining
threshold) but around 0.93 of a matching mixed seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

import numpy as np

from seedmine.index import Neighbor
from seedmine.miner import LabeledRecord, MiningParams, SeedHits, assign_labels
from seedmine.seedgen import SeedDocument, SeedSpec

DOMAINS = ("Financial Services", "Healthcare & Life Sciences", "Sports")
_PREFIX = {"Financial Services": "fin", "Healthcare & Life Sciences": "med", "Sports": "spt"}
SUBTOPICS = 3
VOCAB = 20

# One designated subtopic pairing per domain pair; mixed docs and mixed
# seeds are built from these.
PAIR_TYPES = (
    ((DOMAINS[0], 0), (DOMAINS[1], 0)),
    ((DOMAINS[1], 1), (DOMAINS[2], 1)),
    ((DOMAINS[0], 2), (DOMAINS[2], 2)),
)

NOISE_VOCAB = [f"noise{i:02d}" for i in range(30)]


def subtopic_vocab(domain: str, subtopic: int) -> list[str]:
    return [f"{_PREFIX[domain]}{subtopic}w{i:02d}" for i in range(VOCAB)]


def _compose(rng: random.Random, base: list[str], extra_pool: list[str], uid: str) -> str:
    words = base + [rng.choice(extra_pool) for _ in range(2)] + [uid]
    rng.shuffle(words)
    return " ".join(words)


def pure_text(rng: random.Random, domain: str, subtopic: int, uid: str) -> str:
    vocab = subtopic_vocab(domain, subtopic)
    return _compose(rng, vocab * 2, vocab, uid)


def mixed_text(rng: random.Random, pair, uid: str) -> str:
    (dom_a, sub_a), (dom_b, sub_b) = pair
    half_a = subtopic_vocab(dom_a, sub_a)[:10]
    half_b = subtopic_vocab(dom_b, sub_b)[:10]
    return _compose(rng, half_a * 2 + half_b * 2, half_a + half_b, uid)


def noise_text(rng: random.Random, uid: str) -> str:
    words = [rng.choice(NOISE_VOCAB) for _ in range(25)] + [uid]
    rng.shuffle(words)
    return " ".join(words)


@dataclass
class SynthCorpus:
    docs: list[dict] = field(default_factory=list)  # {id, text, source}
    truth: dict[str, frozenset[str]] = field(default_factory=dict)
    pure_ids: list[str] = field(default_factory=list)
    mixed_ids: list[str] = field(default_factory=list)
    noise_ids: list[str] = field(default_factory=list)

    def texts(self) -> dict[str, str]:
        return {d["id"]: d["text"] for d in self.docs}


def build_corpus(seed: int = 0, per_domain: int = 400, mixed: int = 300, noise: int = 0) -> SynthCorpus:
    """Corpus of per_domain pure docs per domain plus mixed and noise docs."""
    rng = random.Random(seed)
    out = SynthCorpus()
    serial = 0

    def uid() -> str:
        nonlocal serial
        serial += 1
        return f"uid{serial:06d}"

    for domain in DOMAINS:
        for i in range(per_domain):
            subtopic = i % SUBTOPICS
            doc_id = f"{_PREFIX[domain]}-{i:04d}"
            out.docs.append(
                {"id": doc_id, "text": pure_text(rng, domain, subtopic, uid()), "source": "synth"}
            )
            out.truth[doc_id] = frozenset({domain})
            out.pure_ids.append(doc_id)
    for j in range(mixed):
        pair = PAIR_TYPES[j % len(PAIR_TYPES)]
        doc_id = f"mix-{j:04d}"
        out.docs.append({"id": doc_id, "text": mixed_text(rng, pair, uid()), "source": "synth"})
        out.truth[doc_id] = frozenset({pair[0][0], pair[1][0]})
        out.mixed_ids.append(doc_id)
    for j in range(noise):
        doc_id = f"bg-{j:04d}"
        out.docs.append({"id": doc_id, "text": noise_text(rng, uid()), "source": "synth"})
        out.truth[doc_id] = frozenset()
        out.noise_ids.append(doc_id)
    return out


def _seed_doc(spec: SeedSpec, document: str) -> SeedDocument:
    return SeedDocument(
        id=f"s{spec.rng_seed:016x}",
        spec=spec,
        topic="synthetic fixture seed",
        premise="fixture premise",
        author="fixture author",
        audience="fixture audience",
        motive="fixture motive",
        document=document,
        raw=document,
    )


def build_seeds(seed: int = 1, per_subtopic: int = 3, per_pair: int = 2) -> list[SeedDocument]:
    """Directly constructed seed documents covering every subtopic and pair."""
    rng = random.Random(seed)
    seeds: list[SeedDocument] = []
    counter = 0

    def next_spec(industries) -> SeedSpec:
        nonlocal counter
        counter += 1
        return SeedSpec(
            doc_type="report",
            industries=industries,
            length="short",
            demeanor="professional",
            rng_seed=counter,
        )

    serial = 900_000
    for domain in DOMAINS:
        for subtopic in range(SUBTOPICS):
            for _ in range(per_subtopic):
                serial += 1
                seeds.append(
                    _seed_doc(
                        next_spec((domain,)),
                        pure_text(rng, domain, subtopic, f"uid{serial:06d}"),
                    )
                )
    for pair in PAIR_TYPES:
        for _ in range(per_pair):
            serial += 1
            seeds.append(
                _seed_doc(
                    next_spec((pair[0][0], pair[1][0])),
                    mixed_text(rng, pair, f"uid{serial:06d}"),
                )
            )
    return seeds


def mixed_seed_texts_by_pair(seeds: list[SeedDocument]) -> dict[frozenset, list[str]]:
    out: dict[frozenset, list[str]] = {}
    for s in seeds:
        if len(s.spec.industries) == 2:
            out.setdefault(frozenset(s.spec.industries), []).append(s.document)
    return out


def embed_corpus(corpus: SynthCorpus, embedder) -> tuple[list[str], np.ndarray]:
    ids = [d["id"] for d in corpus.docs]
    matrix = np.stack([embedder.embed(d["text"]).values for d in corpus.docs])
    return ids, matrix


def brute_force_mine(
    seeds, embedder, ids: list[str], matrix: np.ndarray, texts, params: MiningParams
) -> list[LabeledRecord]:
    """Mining oracle: exact kNN by exhaustive cosine ranking replaces the index."""
    hit_sets = []
    for seed in seeds:
        q = embedder.embed(seed.document).values
        sims = matrix @ q
        order = sorted(range(len(ids)), key=lambda i: (-sims[i], ids[i]))[: params.k]
        neighbors = tuple(
            Neighbor(id=ids[i], similarity=float(min(1.0, max(-1.0, sims[i]))))
            for i in order
            if sims[i] >= params.t_sim
        )
        hit_sets.append(SeedHits(seed.id, seed.spec.industries, neighbors))
    return assign_labels(hit_sets, texts, evidence_cap=params.evidence_cap)


def record_fingerprint(record: LabeledRecord):
    """Comparable shape of a record: labels plus evidence seed ids per label."""
    return (
        record.doc_id,
        tuple(sorted(record.labels)),
        tuple((label, tuple(sid for sid, _ in record.evidence[label])) for label in sorted(record.evidence)),
    )


def separable_records(
    seed: int = 5, per_label: int = 700, none_count: int = 700
) -> list[LabeledRecord]:
    """Linearly separable labeled records for classifier tests.

    Each domain doc draws 30 tokens from the domain's full vocabulary;
    negatives draw from the noise vocabulary and carry the reserved
    "none" label.
    """
    rng = random.Random(seed)
    records = []
    for domain in DOMAINS:
        pool = [w for s in range(SUBTOPICS) for w in subtopic_vocab(domain, s)]
        for i in range(per_label):
            text = " ".join(rng.choice(pool) for _ in range(30))
            records.append(
                LabeledRecord(
                    doc_id=f"{_PREFIX[domain]}-cls-{i:05d}",
                    text=text,
                    labels=frozenset({domain}),
                    evidence={domain: ((f"fixture-{i}", 0.9),)},
                )
            )
    for i in range(none_count):
        text = " ".join(rng.choice(NOISE_VOCAB) for _ in range(30))
        records.append(
            LabeledRecord(
                doc_id=f"none-cls-{i:05d}",
                text=text,
                labels=frozenset({"none"}),
                evidence={"none": ((f"fixture-{i}", 0.0),)},
            )
        )
    return records


# --- hermetic end-to-end helpers -------------------------------------------


def completion_for(document: str) -> str:
    """Well-formed six-field generation wrapping a fixture document."""
    return (
        "- TOPIC: Synthetic fixture topic\n"
        "- PREMISE: A fixture premise for the hermetic pipeline run.\n"
        "- AUTHOR: A fixture author from the target industry.\n"
        "- AUDIENCE: Fixture readers.\n"
        "- MOTIVE: Exercise the pipeline end to end.\n"
        f"- DOCUMENT: {document}"
    )


def stub_fixture_entries(seed: int = 2, per_kind: int = 3) -> list[dict]:
    """Stub-generator fixtures keyed by prompt substrings.

    Multi-domain entries come first (their prompts would not match the
    single-domain patterns, but the specific-first order keeps that
    obvious). Single-domain entries cycle through the domain's subtopics.
    """
    rng = random.Random(seed)
    serial = 800_000
    entries: list[dict] = []

    def uid() -> str:
        nonlocal serial
        serial += 1
        return f"uid{serial:06d}"

    for pair in PAIR_TYPES:
        comps = [completion_for(mixed_text(rng, pair, uid())) for _ in range(per_kind)]
        (dom_a, _), (dom_b, _) = pair
        entries.append({"match": f"2 industries: {dom_a} and {dom_b}", "completions": comps})
        entries.append({"match": f"2 industries: {dom_b} and {dom_a}", "completions": comps})
    for domain in DOMAINS:
        comps = [
            completion_for(pure_text(rng, domain, subtopic, uid()))
            for _ in range(per_kind)
            for subtopic in range(SUBTOPICS)
        ]
        entries.append({"match": f"about {domain} using", "completions": comps})
    return entries


def write_e2e_workspace(root, corpus_seed: int = 0, per_domain: int = 400,
                        mixed: int = 300, noise: int = 300) -> dict:
    """Write corpus, stub fixtures, and a pipeline config under `root`."""
    import json as _json
    from pathlib import Path as _Path

    root = _Path(root)
    root.mkdir(parents=True, exist_ok=True)
    corpus = build_corpus(seed=corpus_seed, per_domain=per_domain, mixed=mixed, noise=noise)
    # size the mix budget to the corpus: the healthcare side is the domain
    # pool, everything else the general pool, with 20% slack on each
    target_domain = DOMAINS[1]
    domain_tokens = sum(
        len(d["text"].split()) for d in corpus.docs if target_domain in corpus.truth[d["id"]]
    )
    general_tokens = sum(
        len(d["text"].split()) for d in corpus.docs if target_domain not in corpus.truth[d["id"]]
    )
    target_total = int(min(domain_tokens / 0.25, general_tokens / 0.75) * 0.8)
    corpus_path = root / "corpus.jsonl"
    with open(corpus_path, "w") as fh:
        for doc in corpus.docs:
            fh.write(_json.dumps(doc, sort_keys=True) + "\n")
    fixtures_path = root / "stub_fixtures.jsonl"
    with open(fixtures_path, "w") as fh:
        for entry in stub_fixture_entries():
            fh.write(_json.dumps(entry, sort_keys=True) + "\n")
    config_path = root / "pipeline.yaml"
    config_path.write_text(
        "\n".join(
            [
                "seed: 1234",
                "workdir: work",
                "paths:",
                f"  corpus_in: {corpus_path}",
                "embedder:",
                "  backend: reference",
                "  dim: 1024",
                "seedgen:",
                "  backend: stub",
                f"  fixtures: {fixtures_path}",
                "  domains:",
            ]
            + [f"    - {d}" for d in DOMAINS]
            + [
                "  count_per_domain: 12",
                "  multi_domain_prob: 0.25",
                "classifier:",
                "  buckets: 262144",
                "  epochs: 12",
                "metrics:",
                "  sample_size: 200",
                "judge:",
                "  sample_size: 50",
                "mixer:",
                f"  target_domain: {target_domain}",
                f"  target_total_tokens: {target_total}",
                "  domain_fraction: 0.25",
                "",
            ]
        )
    )
    return {
        "corpus": corpus,
        "corpus_path": corpus_path,
        "fixtures_path": fixtures_path,
        "config_path": config_path,
        "workdir": root / "work",
    }
