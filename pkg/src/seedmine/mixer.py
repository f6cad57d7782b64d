"""Data-mix planning: hit a target domain/general token ratio for CPT.

Selection is document-granular: the last document drawn on each side may
overshoot its budget by its own length, and the realized share is recorded
as achieved_fraction. Token counts are whitespace counts (consistent with
the corpus module); the manifest records the counting method so a
downstream trainer can recount with its own tokenizer.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping, Sequence

from .errors import (
    InsufficientDomainTokens,
    InsufficientGeneralTokens,
    MissingDocument,
)
from .hashutil import stable64

TOKEN_COUNTING = "whitespace"


def count_tokens(docs: Iterable[Mapping], text_field: str = "text") -> tuple[dict[str, int], int]:
    """Whitespace token counts per doc and in total, in one streaming pass."""
    per_doc: dict[str, int] = {}
    total = 0
    for doc in docs:
        n = len(doc[text_field].split())
        per_doc[doc["id"]] = n
        total += n
    return per_doc, total


@dataclass(frozen=True)
class MixEntry:
    doc_id: str
    tokens: int
    repeated: bool = False


@dataclass(frozen=True)
class MixPlan:
    target_total_tokens: int
    domain_fraction: float
    seed: int
    domain_entries: tuple[MixEntry, ...]
    general_entries: tuple[MixEntry, ...]
    domain_tokens: int
    general_tokens: int
    achieved_fraction: float
    token_counting: str = TOKEN_COUNTING

    def to_manifest(self) -> dict:
        return {
            "target_total_tokens": self.target_total_tokens,
            "domain_fraction": self.domain_fraction,
            "seed": self.seed,
            "domain_tokens": self.domain_tokens,
            "general_tokens": self.general_tokens,
            "achieved_fraction": self.achieved_fraction,
            "token_counting": self.token_counting,
            "domain_docs": [
                {"id": e.doc_id, "tokens": e.tokens, "repeated": e.repeated}
                for e in self.domain_entries
            ],
            "general_docs": [
                {"id": e.doc_id, "tokens": e.tokens, "repeated": e.repeated}
                for e in self.general_entries
            ],
        }

    @classmethod
    def from_manifest(cls, manifest: dict) -> "MixPlan":
        entries = lambda key: tuple(
            MixEntry(doc_id=d["id"], tokens=int(d["tokens"]), repeated=bool(d.get("repeated")))
            for d in manifest[key]
        )
        return cls(
            target_total_tokens=int(manifest["target_total_tokens"]),
            domain_fraction=float(manifest["domain_fraction"]),
            seed=int(manifest["seed"]),
            domain_entries=entries("domain_docs"),
            general_entries=entries("general_docs"),
            domain_tokens=int(manifest["domain_tokens"]),
            general_tokens=int(manifest["general_tokens"]),
            achieved_fraction=float(manifest["achieved_fraction"]),
            token_counting=manifest.get("token_counting", TOKEN_COUNTING),
        )

    def save(self, path) -> None:
        from pathlib import Path

        Path(path).write_text(json.dumps(self.to_manifest(), sort_keys=True, indent=1))

    @classmethod
    def load(cls, path) -> "MixPlan":
        from pathlib import Path

        return cls.from_manifest(json.loads(Path(path).read_text()))


def _draw_side(
    pool: Sequence[tuple[str, int]],
    budget: float,
    rng: random.Random,
    allow_repetition: bool,
    error_cls,
) -> tuple[list[MixEntry], int]:
    # Shuffle-then-prefix is uniform sampling without replacement; sorting
    # first makes the draw independent of the pool's input order.
    order = sorted(pool)
    rng.shuffle(order)
    selected: list[MixEntry] = []
    total = 0
    i = 0
    reuse_round = 0
    while total < budget:
        if i == len(order):
            pool_tokens = sum(t for _, t in order)
            if not allow_repetition or pool_tokens == 0:
                raise error_cls(
                    f"pool holds {total} of {budget:.0f} budgeted tokens"
                    + ("" if allow_repetition else " and repetition is disabled")
                )
            reuse_round += 1
            rng.shuffle(order)
            i = 0
        doc_id, tokens = order[i]
        selected.append(MixEntry(doc_id=doc_id, tokens=tokens, repeated=reuse_round > 0))
        total += tokens
        i += 1
    return selected, total


def plan_mix(
    domain_pool: Sequence[tuple[str, int]],
    general_pool: Sequence[tuple[str, int]],
    target_total_tokens: int,
    domain_fraction: float = 0.25,
    seed: int = 0,
    allow_repetition: bool = False,
) -> MixPlan:
    """Seeded uniform sampling without replacement until each budget is met.

    Pools are (doc_id, token_count) pairs. The domain side receives
    fraction * target tokens and the general side the remainder, each met
    within one document's overshoot. With allow_repetition an exhausted
    pool is reshuffled and re-drawn, flagging reused docs; otherwise the
    matching Insufficient*Tokens error is raised.
    """
    if target_total_tokens < 1:
        raise ValueError("target_total_tokens must be >= 1")
    if not 0.0 <= domain_fraction <= 1.0:
        raise ValueError("domain_fraction must be in [0, 1]")
    domain_rng = random.Random(stable64(f"{seed}:domain"))
    general_rng = random.Random(stable64(f"{seed}:general"))
    domain_budget = domain_fraction * target_total_tokens
    general_budget = (1.0 - domain_fraction) * target_total_tokens
    domain_entries, domain_tokens = _draw_side(
        domain_pool, domain_budget, domain_rng, allow_repetition, InsufficientDomainTokens
    )
    general_entries, general_tokens = _draw_side(
        general_pool, general_budget, general_rng, allow_repetition, InsufficientGeneralTokens
    )
    total = domain_tokens + general_tokens
    return MixPlan(
        target_total_tokens=target_total_tokens,
        domain_fraction=domain_fraction,
        seed=seed,
        domain_entries=tuple(domain_entries),
        general_entries=tuple(general_entries),
        domain_tokens=domain_tokens,
        general_tokens=general_tokens,
        achieved_fraction=domain_tokens / total if total else 0.0,
    )


def emit_mix(
    plan: MixPlan,
    domain_store: Mapping[str, Mapping],
    general_store: Mapping[str, Mapping],
) -> Iterator[dict]:
    """Stream the planned docs in a seeded global shuffle.

    Domain and general selections interleave; each record gains a
    mix_source field. Emitted counts and token totals match the plan
    exactly (repeated entries are emitted once per selection).
    """
    queue: list[tuple[dict, str]] = []
    for entry in plan.domain_entries:
        record = domain_store.get(entry.doc_id)
        if record is None:
            raise MissingDocument(entry.doc_id)
        queue.append((dict(record), "domain"))
    for entry in plan.general_entries:
        record = general_store.get(entry.doc_id)
        if record is None:
            raise MissingDocument(entry.doc_id)
        queue.append((dict(record), "general"))
    rng = random.Random(stable64(f"{plan.seed}:emit"))
    rng.shuffle(queue)
    for record, side in queue:
        record["mix_source"] = side
        yield record
