"""Corpus ingestion: record parsing, quality filtering, deduplication, chunking.

Input is newline-delimited JSON records with at least {id, text}. Documents
flow through parse -> quality_filter -> dedup_exact -> dedup_subdoc and are
then chunked to a maximum word count respecting sentence boundaries.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Iterable, Iterator

log = logging.getLogger(__name__)

# Rejection causes, in the order the checks run. The min-token rule is
# always active; alphabetic-word ratio is checked before the symbol ratio
# so pure-symbol documents report the more specific cause.
REJECT_MIN_TOKENS = "min_tokens"
REJECT_WORD_COUNT_RANGE = "word_count_range"
REJECT_MEAN_WORD_LENGTH = "mean_word_length"
REJECT_ALPHA_WORD_RATIO = "alpha_word_ratio"
REJECT_BULLET_RATIO = "bullet_ratio"
REJECT_ELLIPSIS_RATIO = "ellipsis_ratio"
REJECT_SYMBOL_RATIO = "symbol_ratio"
REJECT_DUPLICATE_EXACT = "duplicate_exact"
REJECT_DUPLICATE_SUBDOC = "duplicate_subdoc"

BULLET_CHARS = ("•", "-", "*", "‣", "▪", "·")

# "..." is treated as an ellipsis alongside the single-character form,
# since web text uses both interchangeably.
_ASCII_ELLIPSIS = re.compile(r"\.\.\.+")

_PARAGRAPH_SPLIT = re.compile(r"\n\s*\n")

_SENTENCE_OPENERS = set('"\'(«[“‘')

# Tokens that end with "." but do not terminate a sentence.
_ABBREVIATIONS = {
    "mr.", "mrs.", "ms.", "dr.", "prof.", "sr.", "jr.", "st.", "vs.",
    "etc.", "e.g.", "i.e.", "cf.", "fig.", "eq.", "no.", "inc.", "ltd.",
    "co.", "corp.", "dept.", "est.", "approx.", "al.", "a.m.", "p.m.",
    "u.s.", "u.k.",
}
_INITIAL = re.compile(r"^[A-Z]\.$")


@dataclass(frozen=True)
class Document:
    """One corpus text unit with provenance and token accounting."""

    id: str
    text: str
    source: str = ""
    word_count: int = 0
    token_count: int = 0

    @classmethod
    def from_text(cls, id: str, text: str, source: str = "") -> "Document":
        # token_count uses whitespace tokenization, so it equals word_count;
        # the fields stay separate so a subword tokenizer could plug in.
        n = len(text.split())
        return cls(id=id, text=text, source=source, word_count=n, token_count=n)


@dataclass(frozen=True)
class Chunk:
    """A slice of a document, at most max_words long unless oversize."""

    doc_id: str
    index: int
    text: str
    word_count: int
    oversize: bool = False


@dataclass(frozen=True)
class FilterVerdict:
    kept: bool
    reason: str | None = None


@dataclass(frozen=True)
class MalformedRecord:
    line_number: int
    reason: str


@dataclass(frozen=True)
class FilterRules:
    """Quality-filter thresholds; each check is individually configurable.

    Defaults follow the canonical web-corpus quality heuristics: document
    length bounds, mean word length 3-10 characters, a floor on the share
    of words containing an alphabetic character, and caps on bullet lines,
    ellipsis line endings, and the symbol-to-word ratio for "#"/ellipses.
    """

    min_tokens: int = 20
    max_tokens: int = 200_000
    mean_word_length_min: float = 3.0
    mean_word_length_max: float = 10.0
    alpha_word_ratio_min: float = 0.8
    bullet_line_ratio_max: float = 0.9
    ellipsis_line_ratio_max: float = 0.3
    symbol_word_ratio_max: float = 0.1


def parse_records(
    lines: Iterable[str | bytes],
    malformed: list[MalformedRecord] | None = None,
) -> Iterator[Document]:
    """Yield one Document per well-formed NDJSON record, in input order.

    Bad lines (undecodable, invalid JSON, missing/blank id or text, reused
    id) are reported into `malformed` (and logged) rather than silently
    dropped. Blank lines are skipped. Stream-level I/O errors propagate.
    """

    def report(lineno: int, reason: str) -> None:
        rec = MalformedRecord(line_number=lineno, reason=reason)
        if malformed is not None:
            malformed.append(rec)
        log.warning("malformed record at line %d: %s", lineno, reason)

    seen_ids: set[str] = set()
    for lineno, raw in enumerate(lines, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError:
                report(lineno, "invalid utf-8")
                continue
        line = raw.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            report(lineno, "invalid json")
            continue
        if not isinstance(obj, dict):
            report(lineno, "record is not an object")
            continue
        doc_id = obj.get("id")
        text = obj.get("text")
        if not isinstance(doc_id, str) or not doc_id:
            report(lineno, "missing id field")
            continue
        if not isinstance(text, str) or not text.strip():
            report(lineno, "missing text field")
            continue
        if doc_id in seen_ids:
            report(lineno, f"duplicate id: {doc_id}")
            continue
        seen_ids.add(doc_id)
        source = obj.get("source") or ""
        yield Document.from_text(id=doc_id, text=text, source=str(source))


def _symbol_count(text: str) -> int:
    return text.count("#") + text.count("…") + len(_ASCII_ELLIPSIS.findall(text))


def quality_filter(doc: Document, rules: FilterRules | None = None) -> FilterVerdict:
    """Deterministic keep/reject verdict against the configured rule set."""
    rules = rules or FilterRules()
    tokens = doc.text.split()
    n = len(tokens)

    if doc.token_count < rules.min_tokens:
        return FilterVerdict(kept=False, reason=REJECT_MIN_TOKENS)
    if doc.token_count > rules.max_tokens:
        return FilterVerdict(kept=False, reason=REJECT_WORD_COUNT_RANGE)

    mean_len = sum(len(t) for t in tokens) / n
    if not rules.mean_word_length_min <= mean_len <= rules.mean_word_length_max:
        return FilterVerdict(kept=False, reason=REJECT_MEAN_WORD_LENGTH)

    alpha_words = sum(1 for t in tokens if any(c.isalpha() for c in t))
    if alpha_words / n < rules.alpha_word_ratio_min:
        return FilterVerdict(kept=False, reason=REJECT_ALPHA_WORD_RATIO)

    stripped_lines = [ln.strip() for ln in doc.text.splitlines()]
    nonblank = [ln for ln in stripped_lines if ln]
    if nonblank:
        bullets = sum(1 for ln in nonblank if ln.startswith(BULLET_CHARS))
        if bullets / len(nonblank) > rules.bullet_line_ratio_max:
            return FilterVerdict(kept=False, reason=REJECT_BULLET_RATIO)
        ellipses = sum(
            1 for ln in nonblank if ln.endswith("…") or ln.endswith("...")
        )
        if ellipses / len(nonblank) > rules.ellipsis_line_ratio_max:
            return FilterVerdict(kept=False, reason=REJECT_ELLIPSIS_RATIO)

    if _symbol_count(doc.text) / n > rules.symbol_word_ratio_max:
        return FilterVerdict(kept=False, reason=REJECT_SYMBOL_RATIO)

    return FilterVerdict(kept=True)


def _normalized_hash(text: str) -> bytes:
    # Normalization (trim, collapse whitespace runs, lowercase) is applied
    # for hashing only; survivors keep their original text.
    norm = " ".join(text.split()).lower()
    return hashlib.blake2b(norm.encode("utf-8"), digest_size=16).digest()


OnDrop = Callable[[Document, str], None]


def dedup_exact(docs: Iterable[Document], on_drop: OnDrop | None = None) -> Iterator[Document]:
    """Keep the first occurrence of each normalized text; drop later copies."""
    seen: set[bytes] = set()
    for doc in docs:
        h = _normalized_hash(doc.text)
        if h in seen:
            if on_drop is not None:
                on_drop(doc, REJECT_DUPLICATE_EXACT)
            continue
        seen.add(h)
        yield doc


def dedup_subdoc(
    docs: Iterable[Document],
    frequency_threshold: int = 2,
    on_drop: OnDrop | None = None,
) -> list[Document]:
    """Remove paragraphs repeated at least frequency_threshold times corpus-wide.

    Paragraphs are blank-line-delimited spans, hashed after whitespace/case
    normalization. The globally first occurrence of a repeated paragraph is
    kept; every later occurrence is removed. Documents emptied by removal
    are dropped. Two passes, so the input is materialized.
    """
    if frequency_threshold < 2:
        raise ValueError("frequency_threshold must be >= 2")
    materialized = list(docs)

    counts: Counter[bytes] = Counter()
    for doc in materialized:
        for para in _PARAGRAPH_SPLIT.split(doc.text):
            if para.strip():
                counts[_normalized_hash(para)] += 1

    kept_first: set[bytes] = set()
    out: list[Document] = []
    for doc in materialized:
        kept_paras: list[str] = []
        changed = False
        for para in _PARAGRAPH_SPLIT.split(doc.text):
            if not para.strip():
                continue
            h = _normalized_hash(para)
            if counts[h] >= frequency_threshold:
                if h in kept_first:
                    changed = True
                    continue
                kept_first.add(h)
            kept_paras.append(para)
        if not kept_paras:
            if on_drop is not None:
                on_drop(doc, REJECT_DUPLICATE_SUBDOC)
            continue
        if changed:
            out.append(Document.from_text(doc.id, "\n\n".join(kept_paras), doc.source))
        else:
            out.append(doc)
    return out


def _is_abbreviation(flat: str, period_idx: int) -> bool:
    start = flat.rfind(" ", 0, period_idx) + 1
    token = flat[start : period_idx + 1]
    return token.lower() in _ABBREVIATIONS or bool(_INITIAL.match(token))


def split_sentences(text: str) -> list[str]:
    """Rule-based sentence splitter.

    Splits after ".", "!" or "?" (plus any closing quotes/brackets) when
    followed by whitespace and an uppercase or opening character, with an
    abbreviation stop-list. Whitespace runs inside sentences are collapsed
    to single spaces, so rejoining sentences on single spaces reproduces
    the normalized document.
    """
    flat = " ".join(text.split())
    if not flat:
        return []
    sentences: list[str] = []
    start = 0
    i = 0
    n = len(flat)
    while i < n:
        c = flat[i]
        if c in ".!?":
            j = i + 1
            while j < n and flat[j] in "\"')]»’”":
                j += 1
            if (
                j < n
                and flat[j] == " "
                and j + 1 < n
                and (flat[j + 1].isupper() or flat[j + 1] in _SENTENCE_OPENERS)
                and not (c == "." and _is_abbreviation(flat, i))
            ):
                sentences.append(flat[start:j])
                start = j + 1
                i = j
        i += 1
    if start < n:
        sentences.append(flat[start:])
    return sentences


def chunk_document(doc: Document, max_words: int = 2500) -> list[Chunk]:
    """Greedily pack whole sentences into chunks of at most max_words.

    A single sentence longer than max_words is hard-split at word
    boundaries and every resulting piece is flagged oversize. Final
    remainder chunks below any minimum are kept.
    """
    if max_words < 1:
        raise ValueError("max_words must be >= 1")
    chunks: list[Chunk] = []
    current: list[str] = []
    current_words = 0

    def flush() -> None:
        nonlocal current, current_words
        if current:
            text = " ".join(current)
            chunks.append(Chunk(doc.id, len(chunks), text, current_words))
            current = []
            current_words = 0

    for sentence in split_sentences(doc.text):
        words = sentence.split()
        if len(words) > max_words:
            flush()
            for off in range(0, len(words), max_words):
                piece = words[off : off + max_words]
                chunks.append(
                    Chunk(doc.id, len(chunks), " ".join(piece), len(piece), oversize=True)
                )
        elif current_words + len(words) > max_words:
            flush()
            current = [sentence]
            current_words = len(words)
        else:
            current.append(sentence)
            current_words += len(words)
    flush()
    return chunks
