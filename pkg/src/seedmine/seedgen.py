"""Synthetic seed-document generation.

Samples prompt dimensions (document type, industry, length, demeanor),
renders a stepwise chain-of-thought prompt, calls a text-generation
backend, and parses the completion into the six TOPIC..DOCUMENT fields.
An offline stub backend makes the whole pipeline runnable without any
network service.
"""

from __future__ import annotations

import itertools
import logging
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Protocol

import requests

from .errors import (
    GenerationUnavailable,
    MissingField,
    UnknownDomain,
    UnparseableGeneration,
)
from .hashutil import stable64

log = logging.getLogger(__name__)

DOC_TYPES = (
    "report",
    "blog post",
    "news article",
    "list of tweets",
    "press release",
    "email",
    "technical report",
    "textbook chapter",
    "research paper",
    "short story",
    "advertisement",
    "product proposal",
    "research proposal",
    "status update",
    "legal brief",
    "contract",
    "memo",
)

INDUSTRIES = (
    "Media & Entertainment",
    "Financial Services",
    "Sports",
    "Public Sector",
    "Education",
    "Gaming",
    "Retail",
    "Software & Internet",
    "Travel & Hospitality",
    "Agriculture",
    "Utilities",
    "Healthcare & Life Sciences",
    "Real Estate & Construction",
    "Manufacturing",
    "Telecommunications",
    "Automotive",
    "Services",
    "Consumer Goods",
    "Transportation & Logistics",
    "Law",
    "Energy",
)

LENGTHS = ("very long", "long", "short")

# Prompt wording for each length bucket, matching the phrasing the
# rendered prompts are expected to carry.
LENGTH_PHRASES = {
    "very long": "very long (more than 1500 words)",
    "long": "long (more than 500 words)",
    "short": "short (less than 500 words)",
}

DEMEANORS = (
    "professional",
    "angry",
    "bored",
    "informal",
    "sad",
    "excited",
    "confident",
    "exacting",
    "poetic",
    "pedantic",
    "attentive to detail",
)

_DOC_TYPE_BY_LOWER = {d.lower(): d for d in DOC_TYPES}
_INDUSTRY_BY_LOWER = {d.lower(): d for d in INDUSTRIES}
_LENGTH_BY_LOWER = {d.lower(): d for d in LENGTHS}
_DEMEANOR_BY_LOWER = {d.lower(): d for d in DEMEANORS}

FIELD_NAMES = ("TOPIC", "PREMISE", "AUTHOR", "AUDIENCE", "MOTIVE", "DOCUMENT")

_RESPONSE_FORMAT = (
    "Your response should be in the following format.\n"
    "\n"
    "    - TOPIC:\n"
    "    - PREMISE:\n"
    "    - AUTHOR:\n"
    "    - AUDIENCE:\n"
    "    - MOTIVE:\n"
    "    - DOCUMENT:\n"
    "\n"
    "Response:"
)

_SINGLE_TEMPLATE = (
    "Write a {doc_type} about {industry} using the following steps.\n"
    "\n"
    "1. Generate a random topic from {industry} domain.\n"
    "2. Write a short premise for the {doc_type} about topic from the {industry}.\n"
    "3. Write a short description of the author of the {doc_type}. The author "
    "should be a practicing member of the {industry} industry.\n"
    "4. Describe the {doc_type}'s audience.\n"
    "5. Give the author's motive in writing the document for the audience. "
    "The author's demeanor is {demeanor}.\n"
    "6. Write a {doc_type} about {industry} based on the topic generated, "
    "premise, from the perspective and motive of the author targeting to the audience.\n"
    "The resulting document should be {length}.\n"
    "\n" + _RESPONSE_FORMAT
)

_MULTI_TEMPLATE = (
    "Write a {doc_type} about 2 industries: {a} and {b} using the following steps.\n"
    "\n"
    "1. Generate a random topic from {a} and {b} domains\n"
    "2. Write a short premise(less than 30 words) for the {doc_type} about the "
    "topic from {a} and {b} domains.\n"
    "3. Write a short description(less than 30 words) of the author of the {doc_type}.\n"
    "4. Describe the {doc_type}'s audience.\n"
    "5. Give the author's motive(less than 30 words) in writing the document "
    "for the audience. The author's demeanor is {demeanor}.\n"
    "6. Write a {doc_type} about {a} and {b} industries based on the topic "
    "generated, premise from the perspective and motive of the author.\n"
    "The resulting document should be {length}.\n"
    "\n" + _RESPONSE_FORMAT
)


def canonical_industry(name: str) -> str:
    got = _INDUSTRY_BY_LOWER.get(name.strip().lower())
    if got is None:
        raise UnknownDomain(f"unknown industry domain: {name!r}")
    return got


def _canonical(value: str, table: dict[str, str], what: str) -> str:
    got = table.get(value.strip().lower())
    if got is None:
        raise ValueError(f"unknown {what}: {value!r}")
    return got


@dataclass(frozen=True)
class SeedSpec:
    """Sampled prompt dimensions for one seed generation."""

    doc_type: str
    industries: tuple[str, ...]
    length: str
    demeanor: str
    rng_seed: int

    def __post_init__(self):
        object.__setattr__(self, "doc_type", _canonical(self.doc_type, _DOC_TYPE_BY_LOWER, "doc_type"))
        object.__setattr__(self, "length", _canonical(self.length, _LENGTH_BY_LOWER, "length"))
        object.__setattr__(self, "demeanor", _canonical(self.demeanor, _DEMEANOR_BY_LOWER, "demeanor"))
        canon = tuple(canonical_industry(i) for i in self.industries)
        if not 1 <= len(canon) <= 2 or len(set(canon)) != len(canon):
            raise ValueError("industries must hold 1 or 2 distinct entries")
        object.__setattr__(self, "industries", canon)

    def to_record(self) -> dict:
        return {
            "doc_type": self.doc_type,
            "industries": list(self.industries),
            "length": self.length,
            "demeanor": self.demeanor,
            "rng_seed": self.rng_seed,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SeedSpec":
        return cls(
            doc_type=rec["doc_type"],
            industries=tuple(rec["industries"]),
            length=rec["length"],
            demeanor=rec["demeanor"],
            rng_seed=int(rec["rng_seed"]),
        )


@dataclass(frozen=True)
class SeedDocument:
    """Parsed generation plus the spec that produced it."""

    id: str
    spec: SeedSpec
    topic: str
    premise: str
    author: str
    audience: str
    motive: str
    document: str
    raw: str

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "spec": self.spec.to_record(),
            "topic": self.topic,
            "premise": self.premise,
            "author": self.author,
            "audience": self.audience,
            "motive": self.motive,
            "document": self.document,
            "raw": self.raw,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "SeedDocument":
        return cls(
            id=rec["id"],
            spec=SeedSpec.from_record(rec["spec"]),
            topic=rec["topic"],
            premise=rec["premise"],
            author=rec["author"],
            audience=rec["audience"],
            motive=rec["motive"],
            document=rec["document"],
            raw=rec["raw"],
        )


def _draw_dimensions(srng: random.Random) -> tuple[str, str, str]:
    return srng.choice(DOC_TYPES), srng.choice(LENGTHS), srng.choice(DEMEANORS)


def sample_spec(
    rng: random.Random, domains: Iterable[str], multi_domain_prob: float = 0.0
) -> SeedSpec:
    """Uniform independent draws per dimension, deterministic given the rng.

    With probability multi_domain_prob (and at least two candidate domains)
    a second distinct industry is drawn, producing a multi-domain spec.
    """
    pool = [canonical_industry(d) for d in domains]
    if not pool:
        raise UnknownDomain("domains must be nonempty")
    if not 0.0 <= multi_domain_prob <= 1.0:
        raise ValueError("multi_domain_prob must be in [0, 1]")
    spec_seed = rng.getrandbits(64)
    srng = random.Random(spec_seed)
    primary = srng.choice(pool)
    industries: tuple[str, ...] = (primary,)
    if len(set(pool)) >= 2 and srng.random() < multi_domain_prob:
        second = srng.choice([d for d in pool if d != primary])
        industries = (primary, second)
    doc_type, length, demeanor = _draw_dimensions(srng)
    return SeedSpec(doc_type, industries, length, demeanor, spec_seed)


def render_prompt(spec: SeedSpec) -> str:
    """Instantiate the stepwise generation template for the spec.

    Single-industry specs use the six-step base template; two-industry
    specs use the "2 industries" variant. Every prompt ends with the
    six-line response-format block and the "Response:" sentinel.
    """
    length = LENGTH_PHRASES[spec.length]
    if len(spec.industries) == 1:
        return _SINGLE_TEMPLATE.format(
            doc_type=spec.doc_type,
            industry=spec.industries[0],
            demeanor=spec.demeanor,
            length=length,
        )
    return _MULTI_TEMPLATE.format(
        doc_type=spec.doc_type,
        a=spec.industries[0],
        b=spec.industries[1],
        demeanor=spec.demeanor,
        length=length,
    )


_HEADER_PATTERNS = {
    name: re.compile(rf"^[ \t]*[-–—•]*[ \t]*{name}[ \t]*:", re.IGNORECASE | re.MULTILINE)
    for name in FIELD_NAMES
}


def parse_generation(text: str) -> dict[str, str]:
    """Extract the six response fields by order-insensitive header scan.

    Headers match case-insensitively at line starts, tolerating leading
    dashes and whitespace. Each field's body runs to the next header (so
    DOCUMENT, normally last, captures everything after its header).
    """
    positions: list[tuple[int, int, str]] = []
    for name, pattern in _HEADER_PATTERNS.items():
        match = pattern.search(text)
        if match is None:
            raise MissingField(name)
        positions.append((match.start(), match.end(), name))
    positions.sort()
    fields: dict[str, str] = {}
    for (start, end, name), nxt in itertools.zip_longest(positions, positions[1:]):
        body = text[end : nxt[0] if nxt else len(text)].strip()
        if not body:
            raise MissingField(name)
        fields[name.lower()] = body
    return fields


class TextGenerator(Protocol):
    def generate(self, prompt: str, max_tokens: int, temperature: float) -> str: ...


_FALLBACK_WORDS = (
    "insight overview analysis update summary detail review outline "
    "context figure measure factor signal record note draft plan brief"
).split()


def _synthesize_completion(prompt: str) -> str:
    """Deterministic well-formed filler completion keyed by prompt hash."""
    rng = random.Random(stable64(prompt))
    words = lambda n: " ".join(rng.choice(_FALLBACK_WORDS) for _ in range(n))
    return (
        f"- TOPIC: {words(4).title()}\n"
        f"- PREMISE: {words(12).capitalize()}.\n"
        f"- AUTHOR: {words(10).capitalize()}.\n"
        f"- AUDIENCE: {words(8).capitalize()}.\n"
        f"- MOTIVE: {words(10).capitalize()}.\n"
        f"- DOCUMENT: {words(120).capitalize()}."
    )


class StubTextGenerator:
    """Offline backend serving canned completions.

    Fixtures are {"match": substring-or-null, "completions": [...]} entries;
    the first entry whose match occurs in the prompt serves round-robin from
    its list. With no matching fixture, a deterministic synthesized
    completion keyed by the prompt hash is returned (or GenerationUnavailable
    raised when synthesis is disabled).
    """

    def __init__(self, fixtures: list[dict] | None = None, synthesize_fallback: bool = True):
        self.fixtures = fixtures or []
        self.synthesize_fallback = synthesize_fallback
        self._cursors = [0] * len(self.fixtures)
        # round-robin cursors shared across concurrent batch workers
        self._lock = threading.Lock()

    @classmethod
    def from_jsonl(cls, path, synthesize_fallback: bool = True) -> "StubTextGenerator":
        import json
        from pathlib import Path

        fixtures = [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
        return cls(fixtures, synthesize_fallback=synthesize_fallback)

    def generate(self, prompt: str, max_tokens: int = 2048, temperature: float = 1.0) -> str:
        for i, fixture in enumerate(self.fixtures):
            match = fixture.get("match")
            if match is None or match in prompt:
                completions = fixture["completions"]
                with self._lock:
                    text = completions[self._cursors[i] % len(completions)]
                    self._cursors[i] += 1
                return text
        if self.synthesize_fallback:
            return _synthesize_completion(prompt)
        raise GenerationUnavailable("no stub fixture matches the prompt")


@dataclass
class RemoteTextGenerator:
    """HTTP text-generation client: POST {prompt, max_tokens, temperature} -> {text}."""

    endpoint: str
    timeout: float = 60.0
    max_retries: int = 2
    backoff: float = 0.5
    session: requests.Session = field(default_factory=requests.Session, repr=False)

    def generate(self, prompt: str, max_tokens: int = 2048, temperature: float = 1.0) -> str:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                resp = self.session.post(
                    self.endpoint,
                    json={"prompt": prompt, "max_tokens": max_tokens, "temperature": temperature},
                    timeout=self.timeout,
                )
                resp.raise_for_status()
                text = resp.json().get("text")
                if not isinstance(text, str):
                    raise ValueError("generator response missing text field")
                return text
            except (requests.RequestException, ValueError) as exc:
                last_error = exc
                if attempt < self.max_retries:
                    time.sleep(self.backoff * (2**attempt))
        raise GenerationUnavailable(f"generator at {self.endpoint} unavailable: {last_error}")


def generate(
    spec: SeedSpec,
    llm: TextGenerator,
    retries: int = 2,
    max_tokens: int = 2048,
    temperature: float = 1.0,
) -> SeedDocument:
    """Render, complete, and parse one seed; retry the same prompt on failure."""
    prompt = render_prompt(spec)
    last_error: Exception | None = None
    for _ in range(retries + 1):
        try:
            raw = llm.generate(prompt, max_tokens=max_tokens, temperature=temperature)
        except GenerationUnavailable as exc:
            last_error = exc
            continue
        try:
            fields = parse_generation(raw)
        except MissingField as exc:
            last_error = exc
            continue
        return SeedDocument(
            id=f"s{spec.rng_seed:016x}",
            spec=spec,
            topic=fields["topic"],
            premise=fields["premise"],
            author=fields["author"],
            audience=fields["audience"],
            motive=fields["motive"],
            document=fields["document"],
            raw=raw,
        )
    if isinstance(last_error, MissingField):
        raise UnparseableGeneration(
            f"generation unparseable after {retries + 1} attempts: {last_error}"
        )
    raise GenerationUnavailable(str(last_error))


def _spec_for_domain(
    rng: random.Random, domain: str, domains: list[str], multi_domain_prob: float
) -> SeedSpec:
    # Like sample_spec, but the primary industry is pinned so per-domain
    # batch counts stay exact; the optional second industry is drawn from
    # the remaining batch domains.
    spec_seed = rng.getrandbits(64)
    srng = random.Random(spec_seed)
    industries: tuple[str, ...] = (domain,)
    others = [d for d in domains if d != domain]
    if others and srng.random() < multi_domain_prob:
        industries = (domain, srng.choice(others))
    doc_type, length, demeanor = _draw_dimensions(srng)
    return SeedSpec(doc_type, industries, length, demeanor, spec_seed)


def generate_batch(
    domains: Iterable[str],
    count: int = 200,
    llm: TextGenerator | None = None,
    *,
    multi_domain_prob: float = 0.0,
    rng_seed: int = 0,
    retries: int = 2,
    failure_ceiling: float = 0.5,
    max_tokens: int = 2048,
    temperature: float = 1.0,
    max_workers: int = 1,
) -> list[SeedDocument]:
    """Generate `count` seeds per domain with iid sampled specs.

    Failed generations are logged and skipped; the batch aborts with
    GenerationUnavailable once the failure rate exceeds failure_ceiling.
    Output is sorted by (domain, spec rng_seed) so downstream stages see a
    deterministic order regardless of request concurrency.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if llm is None:
        raise GenerationUnavailable("no text-generation backend configured")
    pool = [canonical_industry(d) for d in domains]
    rng = random.Random(rng_seed)
    seeds: list[SeedDocument] = []
    attempts = 0
    failures = 0
    executor = ThreadPoolExecutor(max_workers=max_workers) if max_workers > 1 else None
    try:
        def run(sp: SeedSpec) -> SeedDocument:
            return generate(sp, llm, retries=retries, max_tokens=max_tokens, temperature=temperature)

        for domain in pool:
            produced = 0
            while produced < count:
                want = count - produced
                specs = [
                    _spec_for_domain(rng, domain, pool, multi_domain_prob) for _ in range(want)
                ]
                outcomes: list[SeedDocument | Exception] = []
                if executor is not None:
                    for fut in [executor.submit(run, sp) for sp in specs]:
                        try:
                            outcomes.append(fut.result())
                        except (UnparseableGeneration, GenerationUnavailable) as exc:
                            outcomes.append(exc)
                else:
                    for sp in specs:
                        try:
                            outcomes.append(run(sp))
                        except (UnparseableGeneration, GenerationUnavailable) as exc:
                            outcomes.append(exc)
                round_successes = 0
                for outcome in outcomes:
                    attempts += 1
                    if isinstance(outcome, SeedDocument):
                        seeds.append(outcome)
                        produced += 1
                        round_successes += 1
                    else:
                        failures += 1
                        log.warning("seed generation failed: %s", outcome)
                        if attempts >= 10 and failures / attempts > failure_ceiling:
                            raise GenerationUnavailable(
                                f"failure rate {failures}/{attempts} exceeds ceiling {failure_ceiling}"
                            )
                if round_successes == 0:
                    raise GenerationUnavailable(
                        f"no successful generations in a round of {want} for {domain}"
                    )
    finally:
        if executor is not None:
            executor.shutdown(wait=False)
    seeds.sort(key=lambda s: (s.spec.industries[0], s.spec.rng_seed))
    return seeds
