from __future__ import annotations

import pytest

from bridgelab.core import Document, QAExample, RewrittenDocument
from bridgelab.gateway import Gateway, MockBackend, RetryPolicy
from bridgelab.preference import (
    CategorizedDoc,
    CompositionPolicy,
    LabeledSet,
    build_pairs,
    build_pairs_naive,
    build_pool,
    categorize,
    compose_sets,
    generate_dpo_dataset,
    label_set,
    load_dpo_records,
    save_dpo_records,
    score_individual,
)
from bridgelab.supervision import scale_rewrites
from bridgelab.synthetic import SyntheticQAHandler


def _gateway():
    return Gateway(MockBackend(handler=SyntheticQAHandler()), retry=RetryPolicy(max_retries=0))


def _pref_example() -> QAExample:
    """One full-evidence doc (C), two partials (B), two traps (A), one decoy."""
    return QAExample(
        id="pref1",
        query="what is the registry phrase of corvi site 3?",
        gold_answers=("crimson falcon",),
        documents=(
            Document(doc_id="d1", rank=1, text="Archives note. [fact: crimson falcon]"),
            Document(doc_id="d2", rank=2, text="Ledger extract. [fact: crimson]"),
            Document(doc_id="d3", rank=3, text="Field diary. [fact: falcon]"),
            Document(doc_id="d4", rank=4, text="Stray sheet. [trap: gravel]"),
            Document(doc_id="d5", rank=5, text="Margin scribble. [trap: static]"),
            Document(doc_id="d6", rank=6, text="Unrelated flyer. [decoy: rubber]"),
        ),
    )


def _cdoc(rank: int, category: str) -> CategorizedDoc:
    f1 = {"A": 0.0, "B": 0.5, "C": 1.0}[category]
    return CategorizedDoc(
        rewritten=RewrittenDocument(source_doc_id=f"d{rank}", status="rewritten", text=f"text {rank}"),
        rank=rank,
        individual_f1=f1,
    )


class TestCategorize:
    def test_exact_boundaries(self):
        assert categorize(0.0) == "A"
        assert categorize(1.0) == "C"
        assert categorize(0.5) == "B"
        assert categorize(1e-12) == "B"
        assert categorize(1 - 1e-12) == "B"

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            categorize(-0.1)
        with pytest.raises(ValueError):
            categorize(1.1)


class TestScoreIndividual:
    def test_exact_gold_scores_one(self):
        example = _pref_example()
        doc = RewrittenDocument(source_doc_id="d1", status="rewritten", text="[fact: crimson falcon]")
        assert score_individual(example, doc, _gateway(), "gen") == 1.0

    def test_disjoint_scores_zero(self):
        example = _pref_example()
        doc = RewrittenDocument(source_doc_id="d4", status="rewritten", text="[fact: gravel]")
        assert score_individual(example, doc, _gateway(), "gen") == 0.0

    def test_gold_plus_extra_token_matches_f1_oracle(self):
        # Hand-derived with the token-F1 definition: two-token gold, answer
        # carries both gold tokens plus one extra: P=2/3, R=1 -> F1=0.8.
        example = _pref_example()
        doc = RewrittenDocument(
            source_doc_id="d1", status="rewritten", text="[fact: crimson falcon chrome]"
        )
        assert score_individual(example, doc, _gateway(), "gen") == pytest.approx(0.8, abs=1e-12)

    def test_rejects_non_rewritten(self):
        example = _pref_example()
        with pytest.raises(ValueError):
            score_individual(
                example,
                RewrittenDocument(source_doc_id="d6", status="no_rewrite"),
                _gateway(),
                "gen",
            )

    def test_pool_categories_from_scripted_teacher(self):
        example = _pref_example()
        gw = _gateway()
        rewrite_set = scale_rewrites(example, gw, "teacher")
        pool = build_pool(example, rewrite_set, gw, "gen")
        by_rank = {doc.rank: doc.category for doc in pool}
        # The decoy document is skipped (no_rewrite), traps rewrite to wrong
        # evidence (A), partials to partial evidence (B), full to C.
        assert by_rank == {1: "C", 2: "B", 3: "B", 4: "A", 5: "A"}


class TestComposeSets:
    def test_two_doc_pool_single_set(self):
        pool = [_cdoc(1, "A"), _cdoc(2, "A")]
        sets = compose_sets(pool, CompositionPolicy(), seed=0)
        assert [tuple(m.rank for m in s) for s in sets] == [(1, 2)]

    def test_named_families_enumerated(self):
        # Pool {a1, b1, c1}: A-only impossible (needs two A docs), A+B is
        # {a,b}, B+C is {b,c}, and the contains-C family covers {a,c} and
        # {a,b,c}. Enumerated by hand over all subsets of size >= 2.
        pool = [_cdoc(1, "A"), _cdoc(2, "B"), _cdoc(3, "C")]
        sets = compose_sets(pool, CompositionPolicy(), seed=0)
        ranks = [tuple(m.rank for m in s) for s in sets]
        assert ranks == [(1, 2), (2, 3), (1, 3), (1, 2, 3)]

    def test_deterministic_given_seed(self):
        pool = [_cdoc(i, c) for i, c in enumerate("ABCABC", start=1)]
        policy = CompositionPolicy(max_per_family=3)
        a = compose_sets(pool, policy, seed=11)
        b = compose_sets(pool, policy, seed=11)
        assert a == b
        c = compose_sets(pool, policy, seed=12)
        assert a != c  # with six docs and a cap, sampling must differ

    def test_no_duplicate_sets(self):
        pool = [_cdoc(i, c) for i, c in enumerate("AABBCC", start=1)]
        sets = compose_sets(pool, CompositionPolicy(), seed=0)
        keys = [tuple(sorted(m.rank for m in s)) for s in sets]
        assert len(keys) == len(set(keys))

    def test_size_bounds(self):
        pool = [_cdoc(i, "C") for i in range(1, 7)]
        sets = compose_sets(pool, CompositionPolicy(min_size=2, max_size=3), seed=0)
        assert all(2 <= len(s) <= 3 for s in sets)


class TestLabelSet:
    def test_positive_negative_discarded(self):
        example = _pref_example()
        gw = _gateway()
        c1, b2, a4 = (
            CategorizedDoc(
                rewritten=RewrittenDocument(
                    source_doc_id="d1", status="rewritten", text="[fact: crimson falcon]"
                ),
                rank=1,
                individual_f1=1.0,
            ),
            CategorizedDoc(
                rewritten=RewrittenDocument(
                    source_doc_id="d2", status="rewritten", text="[fact: crimson]"
                ),
                rank=2,
                individual_f1=0.5,
            ),
            CategorizedDoc(
                rewritten=RewrittenDocument(
                    source_doc_id="d4", status="rewritten", text="[fact: gravel]"
                ),
                rank=4,
                individual_f1=0.0,
            ),
        )
        assert label_set(example, [c1], gw, "gen").label == "positive"
        assert label_set(example, [a4], gw, "gen").label == "negative"
        assert label_set(example, [b2, a4], gw, "gen").label == "discarded"

    def test_member_from_other_example_rejected(self):
        example = _pref_example()
        alien = CategorizedDoc(
            rewritten=RewrittenDocument(source_doc_id="zz", status="rewritten", text="t"),
            rank=1,
            individual_f1=1.0,
        )
        with pytest.raises(ValueError):
            label_set(example, [alien], _gateway(), "gen")


def _labeled(example_id, ranks, categories, label):
    f1 = {"positive": 1.0, "negative": 0.0, "discarded": 0.5}[label]
    members = tuple(_cdoc(r, c) for r, c in zip(ranks, categories))
    return LabeledSet(example_id=example_id, members=members, set_f1=f1)


class TestBuildPairs:
    def _examples(self):
        return {"pref1": _pref_example()}

    def test_one_positive_one_negative(self):
        labeled = [
            _labeled("pref1", (1,), "C", "positive"),
            _labeled("pref1", (4,), "A", "negative"),
        ]
        records = build_pairs(labeled, self._examples())
        assert len(records) == 1
        assert records[0].chosen_composition == ("C",)
        assert records[0].rejected_composition == ("A",)

    def test_no_positive_no_pairs(self):
        labeled = [
            _labeled("pref1", (4,), "A", "negative"),
            _labeled("pref1", (2, 4), "BA", "discarded"),
        ]
        assert build_pairs(labeled, self._examples()) == []

    def test_cap_and_preference_order_hand_enumerated(self):
        # Two positives, three negatives, cap 4. Candidate symmetric
        # differences of category multisets, computed by hand:
        #   P1=(C@1,B@2) vs N1=(A@4,A@5): 4   vs N2=(A@6,): 3   vs N3=(B@2,A@4): 2
        #   P2=(C@3,)    vs N1: 3             vs N2: 2          vs N3: 3
        # Descending difference with lexical (chosen ranks, rejected ranks)
        # tie-break: (P1,N1), (P1,N2), (P2,N3), (P2,N1).
        labeled = [
            _labeled("pref1", (1, 2), "CB", "positive"),
            _labeled("pref1", (3,), "C", "positive"),
            _labeled("pref1", (4, 5), "AA", "negative"),
            _labeled("pref1", (6,), "A", "negative"),
            _labeled("pref1", (2, 4), "BA", "negative"),
        ]
        records = build_pairs(labeled, self._examples(), pairs_per_example=4)
        got = [(r.chosen_composition, r.rejected_composition) for r in records]
        assert got == [
            (("C", "B"), ("A", "A")),
            (("C", "B"), ("A",)),
            (("C",), ("B", "A")),
            (("C",), ("A", "A")),
        ]

    def test_pairs_stay_within_example(self):
        labeled = [
            _labeled("pref1", (1,), "C", "positive"),
            _labeled("other", (4,), "A", "negative"),
        ]
        assert build_pairs(labeled, {**self._examples(), "other": _pref_example()}) == []


class TestBuildPairsNaive:
    def test_one_c_one_a(self):
        records = build_pairs_naive(_pref_example(), [_cdoc(1, "C"), _cdoc(4, "A")])
        assert len(records) == 1

    def test_all_b_no_pairs(self):
        assert build_pairs_naive(_pref_example(), [_cdoc(1, "B"), _cdoc(2, "B")]) == []

    def test_cartesian_product(self):
        pool = [_cdoc(1, "C"), _cdoc(2, "C"), _cdoc(3, "A"), _cdoc(4, "A")]
        records = build_pairs_naive(_pref_example(), pool)
        assert len(records) == 4


class TestSupersetProperty:
    def test_augmented_strictly_extends_naive_when_b_exists(self):
        example = _pref_example()
        gw = _gateway()
        rewrite_set = scale_rewrites(example, gw, "teacher")
        pool = build_pool(example, rewrite_set, gw, "gen")
        assert any(d.category == "B" for d in pool)

        naive = build_pairs_naive(example, pool)
        assert naive  # C and A both present

        # Admit singletons so the naive pairs are reachable, label every
        # candidate set, and pair with a generous cap.
        policy = CompositionPolicy(min_size=1)
        labeled = [label_set(example, members, gw, "gen") for members in compose_sets(pool, policy, seed=0)]
        augmented = build_pairs(labeled, {example.id: example}, pairs_per_example=10_000)

        naive_keys = {(r.prompt, r.chosen, r.rejected) for r in naive}
        augmented_keys = {(r.prompt, r.chosen, r.rejected) for r in augmented}
        assert naive_keys <= augmented_keys
        assert naive_keys != augmented_keys


class TestEndToEnd:
    def test_deterministic_and_round_trips(self, tmp_path):
        example = _pref_example()
        gw = _gateway()
        rewrite_sets = {example.id: scale_rewrites(example, gw, "teacher")}

        def run():
            return generate_dpo_dataset(
                [example], rewrite_sets, _gateway(), "gen", seed=3
            )

        records_a, stats_a = run()
        records_b, stats_b = run()
        assert records_a == records_b
        assert stats_a == stats_b
        assert stats_a.pairs == len(records_a) > 0

        path = tmp_path / "dpo.jsonl"
        save_dpo_records(records_a, path)
        assert load_dpo_records(path) == records_a

    def test_naive_variant(self):
        example = _pref_example()
        gw = _gateway()
        rewrite_sets = {example.id: scale_rewrites(example, gw, "teacher")}
        records, _ = generate_dpo_dataset(
            [example], rewrite_sets, _gateway(), "gen", naive=True
        )
        # One C doc, two A docs -> 2 naive pairs.
        assert len(records) == 2
        assert all(r.chosen_composition == ("C",) for r in records)
        assert all(r.rejected_composition == ("A",) for r in records)
