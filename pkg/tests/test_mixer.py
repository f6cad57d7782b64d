"""Mix planning: budgets, determinism, conservation, emission."""

import random

import pytest

from seedmine.errors import (
    InsufficientDomainTokens,
    InsufficientGeneralTokens,
    MissingDocument,
)
from seedmine.mixer import MixPlan, count_tokens, emit_mix, plan_mix


def make_pool(prefix, n, tokens_low=20, tokens_high=120, seed=0):
    rng = random.Random(seed)
    return [(f"{prefix}{i:04d}", rng.randint(tokens_low, tokens_high)) for i in range(n)]


def stores_for(pool, prefix):
    return {
        doc_id: {"id": doc_id, "text": " ".join(["w"] * tokens)} for doc_id, tokens in pool
    }


class TestCountTokens:
    def test_simple(self):
        per_doc, total = count_tokens([{"id": "a", "text": "a b c"}])
        assert per_doc == {"a": 3}
        assert total == 3

    def test_empty_stream(self):
        per_doc, total = count_tokens([])
        assert per_doc == {} and total == 0

    def test_arithmetic(self):
        docs = [{"id": f"d{i}", "text": " ".join(["tok"] * 10)} for i in range(1000)]
        _, total = count_tokens(docs)
        assert total == 10_000


class TestPlanMix:
    def test_quarter_fraction_within_half_percent(self):
        domain = make_pool("dom", 2000, seed=1)
        general = make_pool("gen", 6000, seed=2)
        plan = plan_mix(domain, general, target_total_tokens=100_000, domain_fraction=0.25, seed=3)
        assert abs(plan.achieved_fraction - 0.25) <= 0.005

    def test_zero_fraction_only_general(self):
        domain = make_pool("dom", 50, seed=1)
        general = make_pool("gen", 500, seed=2)
        plan = plan_mix(domain, general, target_total_tokens=5_000, domain_fraction=0.0, seed=3)
        assert plan.domain_entries == ()
        assert plan.general_tokens >= 5_000

    def test_insufficient_domain_tokens(self):
        domain = [("only", 1000)]
        general = make_pool("gen", 500, seed=2)
        with pytest.raises(InsufficientDomainTokens):
            plan_mix(domain, general, target_total_tokens=100_000, domain_fraction=0.25, seed=3)

    def test_insufficient_general_tokens(self):
        domain = make_pool("dom", 500, seed=1)
        general = [("only", 10)]
        with pytest.raises(InsufficientGeneralTokens):
            plan_mix(domain, general, target_total_tokens=10_000, domain_fraction=0.25, seed=3)

    def test_repetition_flags_reused_docs(self):
        domain = [("d1", 300), ("d2", 400)]
        general = make_pool("gen", 500, seed=2)
        plan = plan_mix(
            domain, general, target_total_tokens=10_000, domain_fraction=0.25,
            seed=3, allow_repetition=True,
        )
        assert plan.domain_tokens >= 2500
        assert any(e.repeated for e in plan.domain_entries)
        first_round = [e for e in plan.domain_entries if not e.repeated]
        assert len(first_round) == 2  # the whole pool before any reuse

    def test_no_doc_selected_twice_without_repetition(self):
        domain = make_pool("dom", 300, seed=4)
        general = make_pool("gen", 900, seed=5)
        plan = plan_mix(domain, general, target_total_tokens=20_000, domain_fraction=0.3, seed=6)
        d_ids = [e.doc_id for e in plan.domain_entries]
        g_ids = [e.doc_id for e in plan.general_entries]
        assert len(d_ids) == len(set(d_ids))
        assert len(g_ids) == len(set(g_ids))

    def test_deterministic_given_seed(self):
        domain = make_pool("dom", 300, seed=4)
        general = make_pool("gen", 900, seed=5)
        a = plan_mix(domain, general, 20_000, 0.3, seed=6)
        b = plan_mix(domain, general, 20_000, 0.3, seed=6)
        assert a == b

    def test_pool_order_irrelevant(self):
        domain = make_pool("dom", 300, seed=4)
        general = make_pool("gen", 900, seed=5)
        a = plan_mix(domain, general, 20_000, 0.3, seed=6)
        b = plan_mix(list(reversed(domain)), list(reversed(general)), 20_000, 0.3, seed=6)
        assert a == b

    def test_monotone_in_fraction(self):
        domain = make_pool("dom", 800, seed=4)
        general = make_pool("gen", 800, seed=5)
        previous = -1
        for fraction in (0.0, 0.1, 0.25, 0.5, 0.75):
            plan = plan_mix(domain, general, 30_000, fraction, seed=6)
            assert plan.domain_tokens >= previous
            previous = plan.domain_tokens

    def test_overshoot_at_most_one_doc(self):
        domain = make_pool("dom", 500, tokens_high=80, seed=1)
        general = make_pool("gen", 1500, tokens_high=80, seed=2)
        plan = plan_mix(domain, general, 20_000, 0.25, seed=9)
        assert plan.domain_tokens - 0.25 * 20_000 < 80
        assert plan.general_tokens - 0.75 * 20_000 < 80

    def test_validation(self):
        with pytest.raises(ValueError):
            plan_mix([], [], target_total_tokens=0)
        with pytest.raises(ValueError):
            plan_mix([], [], target_total_tokens=10, domain_fraction=1.5)

    def test_manifest_roundtrip(self, tmp_path):
        domain = make_pool("dom", 100, seed=4)
        general = make_pool("gen", 300, seed=5)
        plan = plan_mix(domain, general, 5_000, 0.25, seed=6)
        path = tmp_path / "mix.json"
        plan.save(path)
        assert MixPlan.load(path) == plan


class TestEmitMix:
    def setup_method(self):
        self.domain = make_pool("dom", 120, seed=7)
        self.general = make_pool("gen", 360, seed=8)
        self.plan = plan_mix(self.domain, self.general, 8_000, 0.25, seed=9)
        self.domain_store = stores_for(self.domain, "dom")
        self.general_store = stores_for(self.general, "gen")

    def test_multiset_matches_plan(self):
        out = list(emit_mix(self.plan, self.domain_store, self.general_store))
        want = sorted(
            [e.doc_id for e in self.plan.domain_entries]
            + [e.doc_id for e in self.plan.general_entries]
        )
        assert sorted(r["id"] for r in out) == want
        assert all(r["mix_source"] in ("domain", "general") for r in out)

    def test_conservation_exact(self):
        out = list(emit_mix(self.plan, self.domain_store, self.general_store))
        emitted = sum(len(r["text"].split()) for r in out)
        assert emitted == self.plan.domain_tokens + self.plan.general_tokens

    def test_same_seed_same_order(self):
        a = [r["id"] for r in emit_mix(self.plan, self.domain_store, self.general_store)]
        b = [r["id"] for r in emit_mix(self.plan, self.domain_store, self.general_store)]
        assert a == b

    def test_sources_interleaved(self):
        out = list(emit_mix(self.plan, self.domain_store, self.general_store))
        sources = [r["mix_source"] for r in out]
        # a seeded global shuffle should not leave all domain docs contiguous
        first_domain = sources.index("domain")
        last_domain = len(sources) - 1 - sources[::-1].index("domain")
        assert any(s == "general" for s in sources[first_domain:last_domain])

    def test_missing_document_named(self):
        store = dict(self.domain_store)
        victim = self.plan.domain_entries[0].doc_id
        del store[victim]
        with pytest.raises(MissingDocument) as err:
            list(emit_mix(self.plan, store, self.general_store))
        assert err.value.doc_id == victim
