"""End-to-end pipelines (naive and bridged) and the evaluation driver.

The bridged pipeline supports two styles: a single-pass student bridge that
emits the whole rewrite set in one call (parsed with the same block grammar
it was trained on), and a k-call teacher bridge that fans out one rewrite
call per document. Skip sentinels are stripped before generation; a bridge
whose output cannot be parsed falls back to the naive pipeline for that
example, with a counted warning.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

from .core import QAExample, RewriteSet, classify_answer_type, load_dataset, save_dataset
from .gateway import Gateway, GatewayError
from .metrics import (
    AggregateReport,
    ScoredPrediction,
    SliceLabels,
    aggregate,
    exact_match,
    judge_accuracy,
    token_f1,
)
from .prompts import render_answer_prompt
from .supervision import parse_rewrite_set, scale_rewrites, student_prompt

log = logging.getLogger(__name__)

PIPELINE_MODES = ("naive", "bridged")
BRIDGE_STYLES = ("student", "teacher")


@dataclass(frozen=True)
class PipelineSpec:
    """What to run: naive generation, or rewrite-then-generate."""

    mode: str
    generator_model: str
    bridge_model: Optional[str] = None
    bridge_style: str = "student"

    def __post_init__(self) -> None:
        if self.mode not in PIPELINE_MODES:
            raise ValueError(f"bad mode {self.mode!r}")
        if self.bridge_style not in BRIDGE_STYLES:
            raise ValueError(f"bad bridge_style {self.bridge_style!r}")
        if self.mode == "bridged" and not self.bridge_model:
            raise ValueError("bridged mode requires bridge_model")

    def name(self) -> str:
        if self.mode == "naive":
            return "naive"
        return f"bridged[{self.bridge_style}:{self.bridge_model}]"


@dataclass
class BridgedOutcome:
    """Result of one bridged example: the rewrites (None on fallback) and prediction."""

    rewrite_set: Optional[RewriteSet]
    prediction: str
    fell_back: bool = False


def run_naive(
    example: QAExample, generator: Gateway, model_id: str, max_tokens: int = 64
) -> str:
    """Answer from the query and the original documents in rank order."""
    from .prompts import documents_block

    prompt = render_answer_prompt(example.query, documents_block(list(example.documents)))
    try:
        return generator.chat(model_id, prompt, max_tokens=max_tokens).text
    except GatewayError as exc:
        raise GatewayError(f"naive generation for example {example.id!r}: {exc}") from exc


def _generation_blocks(rewrite_set: RewriteSet) -> str:
    """Documents the generator sees: rewritten entries only, sentinels stripped."""
    lines = [
        f"Document {rank}: {rewrite.text}"
        for rank, rewrite in enumerate(rewrite_set.rewrites, start=1)
        if rewrite.status == "rewritten"
    ]
    return "\n".join(lines) if lines else "(none)"


def run_bridged(
    example: QAExample,
    bridge: Gateway,
    generator: Gateway,
    spec: PipelineSpec,
    answer_max_tokens: int = 64,
    rewrite_max_tokens: int = 1024,
) -> BridgedOutcome:
    """Rewrite the documents, strip skip sentinels, then answer from the
    rewrites. Unparseable bridge output falls back to the naive pipeline."""
    rewrite_set: Optional[RewriteSet] = None
    if spec.bridge_style == "student":
        try:
            response = bridge.chat(
                spec.bridge_model, student_prompt(example), max_tokens=rewrite_max_tokens
            )
            rewrite_set = parse_rewrite_set(response.text, example)
        except GatewayError as exc:
            log.warning("student bridge failed on example %s: %s", example.id, exc)
            rewrite_set = None
    else:
        try:
            candidate = scale_rewrites(
                example, bridge, spec.bridge_model, max_tokens=rewrite_max_tokens
            )
            rewrite_set = candidate if candidate.complete() else None
        except GatewayError as exc:
            log.warning("teacher bridge failed on example %s: %s", example.id, exc)
            rewrite_set = None

    if rewrite_set is None:
        prediction = run_naive(example, generator, spec.generator_model, answer_max_tokens)
        return BridgedOutcome(rewrite_set=None, prediction=prediction, fell_back=True)

    prompt = render_answer_prompt(example.query, _generation_blocks(rewrite_set))
    prediction = generator.chat(
        spec.generator_model, prompt, max_tokens=answer_max_tokens
    ).text
    return BridgedOutcome(rewrite_set=rewrite_set, prediction=prediction)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class PipelineResult:
    """Scores and bookkeeping for one pipeline over one dataset."""

    spec: PipelineSpec
    report: AggregateReport
    scored: list[ScoredPrediction]
    fallback_count: int
    errors: list[str]

    @property
    def coverage(self) -> float:
        total = len(self.scored) + len(self.errors)
        return len(self.scored) / total if total else 0.0


@dataclass
class EvalReport:
    """Evaluation of one or more pipelines over a dataset, plus run metadata."""

    dataset_name: str
    pipelines: list[PipelineResult]
    judge_model: Optional[str] = None
    started_at: float = 0.0
    finished_at: float = 0.0
    cache_hit_rate: float = 0.0

    def results_dict(self) -> dict:
        """The deterministic part of the report (no timestamps or cache stats)."""
        return {
            "dataset": self.dataset_name,
            "judge_model": self.judge_model,
            "pipelines": [
                {
                    "pipeline": res.spec.name(),
                    "mode": res.spec.mode,
                    "generator_model": res.spec.generator_model,
                    "bridge_model": res.spec.bridge_model,
                    "bridge_style": res.spec.bridge_style if res.spec.mode == "bridged" else None,
                    "metrics": res.report.as_percent(),
                    "coverage": res.coverage,
                    "fallback_count": res.fallback_count,
                    "errors": res.errors,
                }
                for res in self.pipelines
            ],
        }

    def to_dict(self) -> dict:
        return {
            "run": {
                "started_at": self.started_at,
                "finished_at": self.finished_at,
                "cache_hit_rate": self.cache_hit_rate,
            },
            "results": self.results_dict(),
        }

    def render_table(self) -> str:
        """Plain-text comparison table: one row per pipeline."""
        header = f"{'pipeline':<40} {'EM':>6} {'F1':>6} {'ACC':>6} {'n':>5} {'fallbacks':>9}"
        lines = [f"dataset: {self.dataset_name}", header, "-" * len(header)]
        for res in self.pipelines:
            avg = res.report.average.as_percent()
            acc = "-" if avg["acc"] is None else f"{avg['acc']:.1f}"
            lines.append(
                f"{res.spec.name():<40} {avg['em']:>6.1f} {avg['f1']:>6.1f} {acc:>6} "
                f"{res.report.total:>5} {res.fallback_count:>9}"
            )
        return "\n".join(lines)


def _slice_labels(example: QAExample, dataset_name: str) -> SliceLabels:
    answer_type = example.answer_type
    if answer_type == "unknown" and example.documents:
        answer_type = classify_answer_type(example)
    return SliceLabels(
        dataset=dataset_name, answer_type=answer_type, query_type=example.query_type
    )


def _score_example(
    example: QAExample,
    spec: PipelineSpec,
    gateway: Gateway,
    judge_model: Optional[str],
    answer_max_tokens: int,
    rewrite_max_tokens: int,
) -> tuple[ScoredPrediction, bool]:
    if spec.mode == "naive":
        prediction = run_naive(example, gateway, spec.generator_model, answer_max_tokens)
        fell_back = False
    else:
        outcome = run_bridged(
            example,
            bridge=gateway,
            generator=gateway,
            spec=spec,
            answer_max_tokens=answer_max_tokens,
            rewrite_max_tokens=rewrite_max_tokens,
        )
        prediction, fell_back = outcome.prediction, outcome.fell_back
    em = exact_match(prediction, example.gold_answers)
    f1 = token_f1(prediction, example.gold_answers)
    acc = (
        judge_accuracy(example, prediction, gateway, judge_model)
        if judge_model is not None
        else None
    )
    return (
        ScoredPrediction(
            example_id=example.id, prediction=prediction, em=em, f1=f1, judge_acc=acc
        ),
        fell_back,
    )


def evaluate(
    examples: Sequence[QAExample],
    specs: Sequence[PipelineSpec],
    gateway: Gateway,
    dataset_name: str = "dataset",
    judge_model: Optional[str] = None,
    answer_max_tokens: int = 64,
    rewrite_max_tokens: int = 1024,
) -> EvalReport:
    """Score every example under every pipeline spec; per-example errors are
    collected (coverage marks the completed fraction), not fatal."""
    if not examples:
        raise ValueError("dataset is empty")
    started = time.time()
    slices = {ex.id: _slice_labels(ex, dataset_name) for ex in examples}
    results: list[PipelineResult] = []
    for spec in specs:
        scored: list[ScoredPrediction] = []
        errors: list[str] = []
        fallbacks = 0

        def work(example: QAExample):
            return _score_example(
                example, spec, gateway, judge_model, answer_max_tokens, rewrite_max_tokens
            )

        with ThreadPoolExecutor(max_workers=gateway.concurrency) as pool:
            futures = [(ex, pool.submit(work, ex)) for ex in examples]
            for example, future in futures:
                try:
                    prediction, fell_back = future.result()
                    scored.append(prediction)
                    fallbacks += int(fell_back)
                except Exception as exc:
                    errors.append(f"{example.id}: {exc}")
        if not scored:
            raise GatewayError(
                f"pipeline {spec.name()} failed on every example; first error: {errors[0]}"
            )
        results.append(
            PipelineResult(
                spec=spec,
                report=aggregate(scored, slices),
                scored=scored,
                fallback_count=fallbacks,
                errors=errors,
            )
        )
    return EvalReport(
        dataset_name=dataset_name,
        pipelines=results,
        judge_model=judge_model,
        started_at=started,
        finished_at=time.time(),
        cache_hit_rate=gateway.cache_hit_rate(),
    )


def save_report(report: EvalReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=2, sort_keys=True), "utf-8")


# ---------------------------------------------------------------------------
# Extractive/abstractive split
# ---------------------------------------------------------------------------


def split_ext_abs(
    dataset_path: str | Path, out_ext: str | Path, out_abs: str | Path
) -> tuple[int, int]:
    """Partition a dataset by the answer-type classifier; returns the counts."""
    examples = load_dataset(dataset_path)
    ext = [ex for ex in examples if classify_answer_type(ex) == "extractive"]
    abs_ = [ex for ex in examples if classify_answer_type(ex) == "abstractive"]
    save_dataset(ext, out_ext)
    save_dataset(abs_, out_abs)
    return len(ext), len(abs_)
