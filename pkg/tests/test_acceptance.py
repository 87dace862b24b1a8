"""Acceptance gate: each test enforces one release criterion at its stated
tolerance and prints one PASS/FAIL line (run with -s to see them inline)."""

from __future__ import annotations

import json
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest
from click.testing import CliRunner

from bridgelab.cli import main as cli_main
from bridgelab.core import QAExample, load_dataset
from bridgelab.derivation import (
    check_factorization,
    check_importance_identity,
    ideal_rewrite_posterior,
    monte_carlo_objective,
    random_world,
)
from bridgelab.gateway import Gateway, MockBackend, RetryPolicy
from bridgelab.metrics import SliceLabels, ScoredPrediction, aggregate, exact_match, token_f1
from bridgelab.preference import (
    build_pairs,
    build_pairs_naive,
    build_pool,
    categorize,
    compose_sets,
    CompositionPolicy,
    label_set,
)
from bridgelab.prompts import NO_REWRITE, document_line
from bridgelab.supervision import (
    build_rewrite_prompt,
    extract_step2,
    parse_rewrite_output,
    parse_rewrite_set,
    scale_rewrites,
    assemble_sft_record,
)
from bridgelab.synthetic import SyntheticQAHandler, generate_corpus

from oracles import posterior_by_enumeration


@contextmanager
def criterion(name: str):
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL")
        raise
    print(f"[ACCEPTANCE] {name}: PASS")


def _scripted_gateway():
    return Gateway(MockBackend(handler=SyntheticQAHandler()), retry=RetryPolicy(max_retries=0))


# ---------------------------------------------------------------------------
# Derivation identities + Bayes oracle (the same 1,000 worlds)
# ---------------------------------------------------------------------------

N_WORLDS = 1000
IDENTITY_TOL = 1e-12


def _thousand_worlds():
    rng = np.random.default_rng(20240501)
    return [random_world(rng, min_size=1, max_size=8) for _ in range(N_WORLDS)]


def test_derivation_identities_on_1000_worlds():
    with criterion("derivation identities (1000 worlds, <=1e-12, <10s)"):
        start = time.perf_counter()
        worlds = _thousand_worlds()
        worst_fact = 0.0
        worst_imp = 0.0
        for world in worlds:
            worst_fact = max(worst_fact, check_factorization(world))
            for j in range(len(world.answers)):
                if world.baseline[j] <= 0.0:
                    continue
                worst_imp = max(worst_imp, check_importance_identity(world, j).discrepancy)
        elapsed = time.perf_counter() - start
        assert worst_fact <= IDENTITY_TOL, f"factorization residual {worst_fact}"
        assert worst_imp <= IDENTITY_TOL, f"importance discrepancy {worst_imp}"
        assert elapsed < 10.0, f"took {elapsed:.2f}s"


def test_bayes_posterior_matches_enumeration_oracle():
    with criterion("Bayes posterior vs brute-force enumeration oracle (<=1e-12)"):
        worst = 0.0
        for world in _thousand_worlds():
            for j in range(len(world.answers)):
                if world.baseline[j] <= 0.0:
                    continue
                got = ideal_rewrite_posterior(world, j)
                expected = posterior_by_enumeration(world, j)
                worst = max(worst, float(np.max(np.abs(got - np.asarray(expected)))))
        assert worst <= IDENTITY_TOL, f"worst posterior deviation {worst}"


def test_monte_carlo_convergence_on_50_worlds():
    with criterion("Monte-Carlo estimate within 3 stderr on 50 worlds (n=1e6)"):
        rng = np.random.default_rng(77)
        for i in range(50):
            world = random_world(rng)
            j = int(rng.integers(0, len(world.answers)))
            exact = check_importance_identity(world, j).rhs
            estimate = monte_carlo_objective(world, j, n_samples=10**6, seed=1000 + i)
            assert abs(estimate.value - exact) <= 3 * estimate.stderr, (
                f"world {i}: |{estimate.value} - {exact}| > 3*{estimate.stderr}"
            )


# ---------------------------------------------------------------------------
# Metric goldens
# ---------------------------------------------------------------------------

TWO_THIRDS = float(Fraction(2, 3))

# (prediction, golds, em, f1) — every f1 hand-derived from the token counts
# via 2*overlap/(|pred|+|gold|) on normalized tokens.
GOLDEN_TABLE = [
    ("Paris", ["paris"], 1, 1.0),
    ("Paris, France", ["paris"], 0, TWO_THIRDS),
    ("the answer", ["answer"], 1, 1.0),
    ("The Eiffel Tower!", ["eiffel tower"], 1, 1.0),
    ("paris france", ["paris"], 0, TWO_THIRDS),
    ("", [""], 1, 1.0),
    ("red", ["blue"], 0, 0.0),
    ("red blue", ["blue red"], 0, 1.0),
    ("cat cat", ["cat"], 0, TWO_THIRDS),
    ("a cat", ["cat"], 1, 1.0),
    ("forty-two", ["forty two"], 1, 1.0),
    ("yes", ["yes", "no"], 1, 1.0),
    ("no way", ["yes", "no"], 0, TWO_THIRDS),
    ("one two three", ["one two"], 0, 0.8),
    ("one two", ["one two three four"], 0, TWO_THIRDS),
    ("alpha beta gamma", ["beta gamma delta"], 0, TWO_THIRDS),
    ("the", ["a"], 1, 1.0),
    ("the", ["red"], 0, 0.0),
    ("Tower", ["tower!"], 1, 1.0),
    ("x y z w", ["x"], 0, 0.4),
]


def test_metric_goldens():
    with criterion("20-case EM/F1 golden table exact + Table-1 averages (0.05)"):
        assert len(GOLDEN_TABLE) == 20
        for prediction, golds, em, f1 in GOLDEN_TABLE:
            assert exact_match(prediction, golds) == em, (prediction, golds)
            assert token_f1(prediction, golds) == f1, (prediction, golds)

        # Published per-dataset means: EM 52.8/47.2/38.4/12.1 and
        # F1 64.4/63.8/52.0/20.2 must macro-average to 37.6 EM / 50.1 F1.
        spec = [
            ("ambigqa", 528, 116),
            ("hotpotqa", 472, 166),
            ("2wiki", 384, 136),
            ("musique", 121, 81),
        ]
        scored, slices = [], {}
        for block, (name, n_em, n_f1_only) in enumerate(spec):
            for i in range(1000):
                ex_id = f"{name}-{block * 1000 + i}"
                em = 1 if i < n_em else 0
                f1 = 1.0 if i < n_em + n_f1_only else 0.0
                scored.append(
                    ScoredPrediction(example_id=ex_id, prediction="p", em=em, f1=f1)
                )
                slices[ex_id] = SliceLabels(dataset=name)
        pct = aggregate(scored, slices).as_percent()
        assert abs(pct["average"]["em"] - 37.6) <= 0.05
        assert abs(pct["average"]["f1"] - 50.1) <= 0.05


# ---------------------------------------------------------------------------
# Prompt contract
# ---------------------------------------------------------------------------


def test_prompt_contract_on_100_example_corpus():
    with criterion("prompt contract on 100-example corpus (target-last, parse, no leakage)"):
        corpus = generate_corpus(100, seed=31)
        gw = _scripted_gateway()
        for example in corpus:
            k = len(example.documents)
            for target in range(1, k + 1):
                prompt = build_rewrite_prompt(example, target).rendered_text
                offsets = {
                    doc.rank: prompt.rfind(document_line(doc.rank, doc.text, doc.title))
                    for doc in example.documents
                }
                assert all(pos >= 0 for pos in offsets.values()), example.id
                assert all(
                    pos < offsets[target] for rank, pos in offsets.items() if rank != target
                ), f"{example.id}: target {target} not last"

        # parse-of-rendered-output identity, sentinel, and failure paths.
        rendered = "Step 1. Document rewrite: Some rewrite text.\nStep 2. Explain and answer: why."
        parsed = parse_rewrite_output(rendered)
        assert (parsed.status, parsed.text) == ("rewritten", "Some rewrite text.")
        assert parse_rewrite_output(
            f"Step 1. Document rewrite: {NO_REWRITE}\nStep 2. Explain and answer: skip."
        ).status == "no_rewrite"
        assert parse_rewrite_output("I cannot comply.").status == "parse_failure"

        # Leakage audit: the full Step-2 region of every teacher output must
        # not appear anywhere in the assembled target; nor may the step
        # markers themselves.
        hits = 0
        for example in corpus[:40]:
            raws: list[str] = []
            rewrite_set = scale_rewrites(example, gw, "teacher", raw_outputs=raws)
            record = assemble_sft_record(example, rewrite_set, teacher_model="teacher")
            if record is None:
                continue
            assert parse_rewrite_set(record.target, example) == rewrite_set
            for raw in raws:
                step2 = extract_step2(raw)
                if step2 and step2 in record.target:
                    hits += 1
            for marker in ("Step 2.", "Explain and answer"):
                if marker in record.target:
                    hits += 1
        assert hits == 0, f"leakage audit found {hits} hits"


# ---------------------------------------------------------------------------
# Preference construction
# ---------------------------------------------------------------------------


def _preference_example() -> QAExample:
    from bridgelab.core import Document

    return QAExample(
        id="accept-pref",
        query="what is the registry phrase of elmswood site 6?",
        gold_answers=("copper lantern",),
        documents=(
            Document(doc_id="d1", rank=1, text="Archive. [fact: copper lantern]"),
            Document(doc_id="d2", rank=2, text="Ledger. [fact: copper]"),
            Document(doc_id="d3", rank=3, text="Diary. [fact: lantern]"),
            Document(doc_id="d4", rank=4, text="Sheet. [trap: gravel]"),
            Document(doc_id="d5", rank=5, text="Scribble. [trap: static]"),
        ),
    )


def test_preference_construction():
    with criterion("preference boundaries exact + naive-subset + reproducible gen-dpo"):
        # Exact category boundaries.
        assert categorize(0.0) == "A" and categorize(1.0) == "C"
        for x in (1e-15, 0.25, 0.5, 1 - 1e-15):
            assert categorize(x) == "B"

        # Strict superset under singleton admission whenever B exists.
        example = _preference_example()
        gw = _scripted_gateway()
        pool = build_pool(example, scale_rewrites(example, gw, "teacher"), gw, "gen")
        assert {d.category for d in pool} == {"A", "B", "C"}
        naive = build_pairs_naive(example, pool)
        labeled = [
            label_set(example, members, gw, "gen")
            for members in compose_sets(pool, CompositionPolicy(min_size=1), seed=0)
        ]
        augmented = build_pairs(labeled, {example.id: example}, pairs_per_example=10_000)
        naive_keys = {(r.prompt, r.chosen, r.rejected) for r in naive}
        augmented_keys = {(r.prompt, r.chosen, r.rejected) for r in augmented}
        assert naive_keys and naive_keys < augmented_keys  # strict superset

        # Bit-reproducible gen-dpo across two CLI invocations.
        runner = CliRunner()
        with runner.isolated_filesystem():
            from bridgelab.core import save_dataset

            with open("bridgelab.toml", "w") as f:
                f.write('[backend]\ntype = "mock"\nhandler = "synthetic-qa"\n')
            save_dataset(generate_corpus(20, seed=13), "data.jsonl")
            base = [
                "--config", "bridgelab.toml",
            ]
            r = runner.invoke(
                cli_main,
                ["gen-sft", "--dataset", "data.jsonl", "--out", "sft.jsonl",
                 "--teacher-model", "teacher", *base],
                catch_exceptions=False,
            )
            assert r.exit_code == 0, r.output
            for out in ("dpo_a.jsonl", "dpo_b.jsonl"):
                r = runner.invoke(
                    cli_main,
                    ["gen-dpo", "--rewrites", "sft.jsonl", "--dataset", "data.jsonl",
                     "--generator-model", "gen", "--out", out, "--seed", "5", *base],
                    catch_exceptions=False,
                )
                assert r.exit_code == 0, r.output
            with open("dpo_a.jsonl", "rb") as fa, open("dpo_b.jsonl", "rb") as fb:
                a, b = fa.read(), fb.read()
            assert a == b and a, "gen-dpo output not bit-identical or empty"


# ---------------------------------------------------------------------------
# End-to-end mock pipeline
# ---------------------------------------------------------------------------


def _run_pipeline(runner: CliRunner, tag: str) -> dict:
    base = ["--config", "bridgelab.toml"]
    r = runner.invoke(
        cli_main,
        ["gen-sft", "--dataset", "data.jsonl", "--out", f"sft_{tag}.jsonl",
         "--teacher-model", "teacher", *base],
        catch_exceptions=False,
    )
    assert r.exit_code == 0, r.output
    r = runner.invoke(
        cli_main,
        ["gen-dpo", "--rewrites", f"sft_{tag}.jsonl", "--dataset", "data.jsonl",
         "--generator-model", "gen", "--out", f"dpo_{tag}.jsonl", "--seed", "2", *base],
        catch_exceptions=False,
    )
    assert r.exit_code == 0, r.output
    reports = {}
    for mode, extra in (
        ("naive", []),
        ("bridged", ["--bridge-model", "rewriter", "--bridge-style", "student"]),
        ("identity", ["--bridge-model", "identity-bridge", "--bridge-style", "student"]),
    ):
        pipeline = "naive" if mode == "naive" else "bridged"
        out = f"report_{mode}_{tag}.json"
        r = runner.invoke(
            cli_main,
            ["eval", "--dataset", "data.jsonl", "--pipeline", pipeline,
             "--generator-model", "gen", "--judge-model", "judge", "--out", out, *base, *extra],
            catch_exceptions=False,
        )
        assert r.exit_code == 0, r.output
        with open(out) as f:
            reports[mode] = json.load(f)["results"]
    with open(f"sft_{tag}.jsonl", "rb") as f:
        sft_bytes = f.read()
    with open(f"dpo_{tag}.jsonl", "rb") as f:
        dpo_bytes = f.read()
    return {"sft": sft_bytes, "dpo": dpo_bytes, "reports": reports}


def test_end_to_end_mock_pipeline():
    with criterion("end-to-end gen-sft -> gen-dpo -> eval (<60s, deterministic, identity==naive)"):
        start = time.perf_counter()
        runner = CliRunner()
        with runner.isolated_filesystem():
            from bridgelab.core import save_dataset

            with open("bridgelab.toml", "w") as f:
                f.write('[backend]\ntype = "mock"\nhandler = "synthetic-qa"\n')
            save_dataset(generate_corpus(50, seed=2024), "data.jsonl")
            assert len(load_dataset("data.jsonl")) == 50

            first = _run_pipeline(runner, "a")
            second = _run_pipeline(runner, "b")

        elapsed = time.perf_counter() - start
        assert first["sft"] == second["sft"], "gen-sft output differs between runs"
        assert first["dpo"] == second["dpo"], "gen-dpo output differs between runs"
        assert first["reports"] == second["reports"], "eval results differ between runs"

        naive = first["reports"]["naive"]["pipelines"][0]["metrics"]
        identity = first["reports"]["identity"]["pipelines"][0]["metrics"]
        assert naive == identity, "identity bridge is not metric-equivalent to naive"
        assert elapsed < 60.0, f"end-to-end took {elapsed:.1f}s"
