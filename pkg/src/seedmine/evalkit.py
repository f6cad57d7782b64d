"""Evaluation toolkit: lexical metrics and the LLM-as-judge protocol.

The lexical metrics quantify how closely synthetic seed documents resemble
real corpus text. Each is labeled by its actual realization: type-token
ratio over a 1000-token window (ttr_1000), Flesch-Kincaid grade (fk_grade),
hapax ratio, and MTLD with the canonical 0.72 threshold.

The judge harness renders agree/disagree prompts over classifier
predictions, shuffling the domain list per prompt to counter position
bias, and pools the verdicts into agreement percentages.
"""

from __future__ import annotations

import ast
import logging
import random
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from . import corpus as corpus_mod
from . import seedgen
from .errors import EmptyText, MalformedJudgement, TooShort

log = logging.getLogger(__name__)

TTR_WINDOW = 1000
MTLD_THRESHOLD = 0.72

_VOWELS = set("aeiouy")


def lexical_diversity(text: str, window: int = TTR_WINDOW) -> float:
    """Type-token ratio over the first `window` lowercased tokens."""
    tokens = text.lower().split()
    if not tokens:
        raise EmptyText("lexical_diversity requires at least one token")
    tokens = tokens[:window]
    return len(set(tokens)) / len(tokens)


def hapax_ratio(text: str) -> float:
    """Fraction of vocabulary types occurring exactly once."""
    tokens = text.lower().split()
    if not tokens:
        raise EmptyText("hapax_ratio requires at least one token")
    counts: dict[str, int] = {}
    for t in tokens:
        counts[t] = counts.get(t, 0) + 1
    singles = sum(1 for c in counts.values() if c == 1)
    return singles / len(counts)


def count_syllables(word: str) -> int:
    """Heuristic syllable count: vowel groups, silent trailing e, minimum 1."""
    w = "".join(c for c in word.lower() if c.isalpha())
    if not w:
        return 1
    groups = 0
    prev_vowel = False
    for c in w:
        is_vowel = c in _VOWELS
        if is_vowel and not prev_vowel:
            groups += 1
        prev_vowel = is_vowel
    if w.endswith("e"):
        sounded_le = w.endswith("le") and len(w) >= 3 and w[-3] not in _VOWELS
        if not sounded_le:
            groups -= 1
    return max(groups, 1)


def flesch_kincaid_grade(text: str) -> float:
    """0.39*(words/sentences) + 11.8*(syllables/words) - 15.59."""
    sentences = corpus_mod.split_sentences(text)
    words = text.split()
    if not sentences or not words:
        raise EmptyText("flesch_kincaid_grade requires at least one sentence")
    syllables = sum(count_syllables(w) for w in words)
    return 0.39 * (len(words) / len(sentences)) + 11.8 * (syllables / len(words)) - 15.59


def _mtld_factors(tokens: Sequence[str], threshold: float) -> float:
    """Factor count for one directional pass.

    Full factors end where the running TTR first drops to or below the
    threshold; the trailing partial factor is (1 - TTR) / (1 - threshold).
    """
    factors = 0.0
    seg_types: set[str] = set()
    seg_len = 0
    for token in tokens:
        seg_types.add(token)
        seg_len += 1
        if len(seg_types) / seg_len <= threshold:
            factors += 1.0
            seg_types = set()
            seg_len = 0
    if seg_len:
        ttr = len(seg_types) / seg_len
        factors += (1.0 - ttr) / (1.0 - threshold)
    return factors


def mtld(text: str, ttr_threshold: float = MTLD_THRESHOLD) -> float:
    """Measure of Textual Lexical Diversity, mean of forward and reverse passes.

    A pass whose running TTR never drops to the threshold contributes only
    a partial factor; when that leaves the factor count at zero (fully
    distinct tokens) the pass falls back to the token count, keeping the
    result finite.
    """
    tokens = text.lower().split()
    if len(tokens) < 10:
        raise TooShort(f"mtld requires >= 10 tokens, got {len(tokens)}")
    values = []
    for seq in (tokens, tokens[::-1]):
        factors = _mtld_factors(seq, ttr_threshold)
        values.append(len(tokens) / factors if factors > 0 else float(len(tokens)))
    return sum(values) / 2.0


@dataclass(frozen=True)
class LexicalReport:
    lexical_diversity: float
    flesch_kincaid_grade: float
    hapax_ratio: float
    lexical_richness_mtld: float
    token_count: int


def lexical_report(text: str) -> LexicalReport:
    tokens = text.split()
    return LexicalReport(
        lexical_diversity=lexical_diversity(text),
        flesch_kincaid_grade=flesch_kincaid_grade(text),
        hapax_ratio=hapax_ratio(text),
        lexical_richness_mtld=mtld(text) if len(tokens) >= 10 else 0.0,
        token_count=len(tokens),
    )


_METRICS = (
    ("ttr_1000", lexical_diversity),
    ("fk_grade", flesch_kincaid_grade),
    ("hapax_ratio", hapax_ratio),
    ("mtld", mtld),
)


@dataclass(frozen=True)
class CorpusComparison:
    """Per-metric means over two corpora with absolute deltas."""

    metrics: dict[str, dict[str, float]]

    def format_table(self) -> str:
        lines = [f"{'metric':<12} {'real':>10} {'synthetic':>10} {'delta':>10}"]
        for name, row in self.metrics.items():
            lines.append(
                f"{name:<12} {row['real_mean']:>10.4f} {row['synthetic_mean']:>10.4f}"
                f" {row['delta']:>10.4f}"
            )
        return "\n".join(lines)

    def to_record(self) -> dict:
        return {"metrics": self.metrics}


def compare_corpora(real_texts: Sequence[str], seed_texts: Sequence[str]) -> CorpusComparison:
    """Mean lexical metrics for each corpus and their absolute differences.

    Documents that fail a metric's precondition (too short, empty) are
    excluded from that metric's mean; the per-metric sample sizes are
    reported alongside.
    """
    if not real_texts or not seed_texts:
        raise ValueError("both corpora must be nonempty")

    def means(texts):
        out = {}
        for name, fn in _METRICS:
            values = []
            for t in texts:
                try:
                    values.append(fn(t))
                except (EmptyText, TooShort):
                    continue
            out[name] = (sum(values) / len(values) if values else 0.0, len(values))
        return out

    real = means(real_texts)
    synth = means(seed_texts)
    metrics = {}
    for name, _ in _METRICS:
        rm, rn = real[name]
        sm, sn = synth[name]
        metrics[name] = {
            "real_mean": rm,
            "synthetic_mean": sm,
            "delta": abs(rm - sm),
            "real_n": rn,
            "synthetic_n": sn,
        }
    return CorpusComparison(metrics=metrics)


# --- LLM-as-judge ---------------------------------------------------------


def judge_domain_name(industry: str) -> str:
    """Display form used in judge prompts: separators collapsed to underscores."""
    return re.sub(r"\s*[&/]\s*|\s+", "_", industry.strip())


JUDGE_DOMAINS = tuple(judge_domain_name(d) for d in seedgen.INDUSTRIES)

_JUDGE_TEMPLATE = (
    "Please act as an impartial judge and evaluate the industry domains "
    "assigned by a ML model to the document displayed below. The document "
    "belongs to one or more of the industry domains listed below:\n"
    "\n"
    "{domains}\n"
    "\n"
    "[Document]\n"
    "[Start of document]\n"
    "{document}\n"
    "[The End of document]\n"
    "ML model predicted industry domains and respective scores:\n"
    "{predictions}\n"
    "\n"
    "Please judge the domains assigned by the ML model by stating if you "
    "agree or disagree with them. Provide your reasoning for the judgement "
    "within\n"
    "<COMMENTS> reasoning <\\COMMENTS> tags.\n"
    "Please strictly follow the below format for your judgement response.\n"
    "<Judgement>\n"
    "{{'ML predicted domain' : 'rating'}}\n"
    "<\\Judgement>\n"
    "\n"
    "for example:\n"
    "<COMMENTS> reasoning <\\COMMENTS>\n"
    "<Judgement>\n"
    "{{'ML predicted domain': 'disagree'}}\n"
    "<\\Judgement>"
)


@dataclass(frozen=True)
class JudgePrompt:
    text: str
    domain_order: tuple[str, ...]


@dataclass(frozen=True)
class JudgeVerdict:
    doc_id: str
    ratings: dict[str, str]  # predicted label -> "agree" | "disagree"
    comments: str
    shuffled_domain_order: tuple[str, ...]

    def to_record(self) -> dict:
        return {
            "doc_id": self.doc_id,
            "ratings": dict(self.ratings),
            "comments": self.comments,
            "shuffled_domain_order": list(self.shuffled_domain_order),
        }


def render_judge_prompt(
    document: str,
    predictions: Sequence[tuple[str, float]],
    rng: random.Random,
    domains: Sequence[str] = JUDGE_DOMAINS,
) -> JudgePrompt:
    """Judge prompt with the domain list uniformly shuffled per prompt.

    The shuffle order is returned alongside the text so it can be persisted
    for position-bias audits. Predictions render as "label : score" with
    two decimals.
    """
    if not predictions:
        raise ValueError("at least one prediction is required")
    order = list(domains)
    rng.shuffle(order)
    pred_lines = "\n".join(f"{label} : {score:.2f}" for label, score in predictions)
    text = _JUDGE_TEMPLATE.format(
        domains="\n".join(order), document=document, predictions=pred_lines
    )
    return JudgePrompt(text=text, domain_order=tuple(order))


_JUDGEMENT_RE = re.compile(r"<Judgement>(.*?)<[\\/]Judgement>", re.IGNORECASE | re.DOTALL)
_COMMENTS_RE = re.compile(r"<COMMENTS>(.*?)<[\\/]COMMENTS>", re.IGNORECASE | re.DOTALL)


def parse_judgement(
    response: str,
    doc_id: str = "",
    domain_order: Sequence[str] = (),
) -> JudgeVerdict:
    """Extract the rating map and comments from a judge response.

    Ratings normalize case-insensitively to {agree, disagree}. Missing
    judgement tags, an unparseable map, or any other rating value raise
    MalformedJudgement. Comments are optional.
    """
    match = _JUDGEMENT_RE.search(response)
    if match is None:
        raise MalformedJudgement("response has no <Judgement> tags")
    inner = match.group(1)
    start, end = inner.find("{"), inner.rfind("}")
    if start < 0 or end <= start:
        raise MalformedJudgement("judgement tags contain no rating map")
    try:
        mapping = ast.literal_eval(inner[start : end + 1])
    except (ValueError, SyntaxError) as exc:
        raise MalformedJudgement(f"rating map unparseable: {exc}") from exc
    if not isinstance(mapping, dict) or not mapping:
        raise MalformedJudgement("rating map must be a nonempty dict")
    ratings = {}
    for label, rating in mapping.items():
        norm = str(rating).strip().lower()
        if norm not in ("agree", "disagree"):
            raise MalformedJudgement(f"unmappable rating {rating!r} for {label!r}")
        ratings[str(label)] = norm
    comments_match = _COMMENTS_RE.search(response)
    comments = comments_match.group(1).strip() if comments_match else ""
    return JudgeVerdict(
        doc_id=doc_id,
        ratings=ratings,
        comments=comments,
        shuffled_domain_order=tuple(domain_order),
    )


def judge_predictions(
    items: Iterable[tuple[str, str, Sequence[tuple[str, float]]]],
    llm,
    rng: random.Random,
    domains: Sequence[str] = JUDGE_DOMAINS,
    retries: int = 2,
    max_tokens: int = 512,
) -> list[JudgeVerdict]:
    """Run the judge over (doc_id, text, predictions) items.

    Each verdict must rate every predicted label exactly once; responses
    violating that (or unparseable ones) are retried, then raised.
    """
    verdicts = []
    for doc_id, text, predictions in items:
        if not predictions:
            continue
        prompt = render_judge_prompt(text, predictions, rng, domains)
        expected = {label for label, _ in predictions}
        last_error: Exception | None = None
        verdict = None
        for _ in range(retries + 1):
            response = llm.generate(prompt.text, max_tokens=max_tokens, temperature=0.0)
            try:
                verdict = parse_judgement(response, doc_id=doc_id, domain_order=prompt.domain_order)
                if set(verdict.ratings) != expected:
                    raise MalformedJudgement(
                        f"ratings cover {sorted(verdict.ratings)}, expected {sorted(expected)}"
                    )
                break
            except MalformedJudgement as exc:
                last_error = exc
                verdict = None
        if verdict is None:
            raise MalformedJudgement(f"judge failed for doc {doc_id}: {last_error}")
        verdicts.append(verdict)
    return verdicts


@dataclass(frozen=True)
class AgreementReport:
    per_domain: dict[str, dict[str, float]]
    overall_pct: float
    total_ratings: int

    def to_record(self) -> dict:
        return {
            "per_domain": self.per_domain,
            "overall_pct": self.overall_pct,
            "total_ratings": self.total_ratings,
        }


def agreement_stats(verdicts: Sequence[JudgeVerdict]) -> AgreementReport:
    """Percent agreement per domain and pooled over all (doc, label) ratings."""
    if not verdicts:
        raise ValueError("at least one verdict is required")
    per: dict[str, dict[str, float]] = {}
    agrees = total = 0
    for verdict in verdicts:
        for label, rating in verdict.ratings.items():
            row = per.setdefault(label, {"agree": 0, "disagree": 0})
            row[rating] += 1
            agrees += rating == "agree"
            total += 1
    for label, row in per.items():
        row["pct"] = 100.0 * row["agree"] / (row["agree"] + row["disagree"])
    return AgreementReport(
        per_domain=per, overall_pct=100.0 * agrees / total, total_ratings=total
    )


class StubJudgeGenerator:
    """Offline judge backend fulfilling the text-generation contract.

    Extracts the predicted labels from the prompt's score block and rates
    each one deterministically (hash-keyed, mostly agree), so hermetic
    runs exercise the full render -> generate -> parse loop.
    """

    def __init__(self, disagree_every: int = 8):
        self.disagree_every = max(disagree_every, 1)

    def generate(self, prompt: str, max_tokens: int = 512, temperature: float = 0.0) -> str:
        from .hashutil import stable64

        marker = "ML model predicted industry domains and respective scores:\n"
        start = prompt.find(marker)
        labels = []
        if start >= 0:
            block = prompt[start + len(marker) :].split("\n\n", 1)[0]
            for line in block.splitlines():
                if " : " in line:
                    labels.append(line.rsplit(" : ", 1)[0].strip())
        ratings = {
            label: "disagree" if stable64(prompt[:64] + label) % self.disagree_every == 0 else "agree"
            for label in labels
        }
        return (
            "<COMMENTS> ratings derived from the predicted score block <\\COMMENTS>\n"
            f"<Judgement>\n{ratings!r}\n<\\Judgement>"
        )
