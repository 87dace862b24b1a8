"""EM, token-level F1, aggregate scoring, and the LLM-judge accuracy protocol.

EM and F1 take the max over gold answers; F1 uses multiset token overlap on
normalized tokens. Aggregation is macro: per-dataset unweighted means,
averaged uniformly across datasets. Raw values are fractions in [0, 1];
one-decimal percentage rounding happens only at presentation.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from .core import QAExample, answer_tokens, normalize_answer
from .gateway import GatewayError
from .prompts import render_judge_prompt

JUDGE_VERDICTS = ("CORRECT", "INCORRECT")


class JudgeParseError(ValueError):
    """The judge reply did not end in exactly one of the two verdict tokens."""


@dataclass(frozen=True)
class ScoredPrediction:
    """Per-example scores for one pipeline prediction."""

    example_id: str
    prediction: str
    em: int
    f1: float
    judge_acc: Optional[int] = None

    def __post_init__(self) -> None:
        if self.em not in (0, 1):
            raise ValueError(f"em must be 0 or 1, got {self.em}")
        if not 0.0 <= self.f1 <= 1.0:
            raise ValueError(f"f1 out of [0,1]: {self.f1}")
        if self.em == 1 and self.f1 != 1.0:
            raise ValueError("em=1 requires f1=1")


def exact_match(prediction: str, golds: Sequence[str]) -> int:
    """1 iff the normalized prediction equals some normalized gold."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred = normalize_answer(prediction)
    return int(any(pred == normalize_answer(g) for g in golds))


def _f1_single(pred_tokens: list[str], gold_tokens: list[str]) -> Fraction:
    # Exact rational arithmetic: with multiset overlap o, 2PR/(P+R) reduces
    # to 2o/(|pred|+|gold|), so boundaries (0 and 1) and golden values are
    # exact by construction. Two empty token lists compare equal (F1=1).
    if not pred_tokens and not gold_tokens:
        return Fraction(1)
    common = Counter(pred_tokens) & Counter(gold_tokens)
    overlap = sum(common.values())
    return Fraction(2 * overlap, len(pred_tokens) + len(gold_tokens))


def token_f1(prediction: str, golds: Sequence[str]) -> float:
    """Harmonic-mean multiset token overlap against each gold; max over golds."""
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = answer_tokens(prediction)
    return float(max(_f1_single(pred_tokens, answer_tokens(g)) for g in golds))


# ---------------------------------------------------------------------------
# Aggregation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SliceLabels:
    """Grouping labels for one example: dataset plus slice keys."""

    dataset: str
    answer_type: str = "unknown"
    query_type: Optional[str] = None


@dataclass(frozen=True)
class SliceStats:
    """Mean metrics over one group of scored predictions (fractions)."""

    count: int
    em: float
    f1: float
    acc: Optional[float] = None

    def as_percent(self) -> dict:
        """Presentation form: percentages rounded to one decimal."""
        out = {"count": self.count, "em": round(self.em * 100, 1), "f1": round(self.f1 * 100, 1)}
        out["acc"] = None if self.acc is None else round(self.acc * 100, 1)
        return out


@dataclass(frozen=True)
class AggregateReport:
    """Per-dataset means, their uniform cross-dataset average, and slice breakdowns."""

    total: int
    datasets: dict[str, SliceStats]
    average: SliceStats
    by_answer_type: dict[str, SliceStats]
    by_query_type: dict[str, SliceStats]

    def as_percent(self) -> dict:
        return {
            "total": self.total,
            "datasets": {k: v.as_percent() for k, v in sorted(self.datasets.items())},
            "average": self.average.as_percent(),
            "by_answer_type": {k: v.as_percent() for k, v in sorted(self.by_answer_type.items())},
            "by_query_type": {k: v.as_percent() for k, v in sorted(self.by_query_type.items())},
        }


def _mean_stats(group: list[ScoredPrediction]) -> SliceStats:
    n = len(group)
    em = sum(s.em for s in group) / n
    f1 = sum(s.f1 for s in group) / n
    judged = [s.judge_acc for s in group if s.judge_acc is not None]
    acc = sum(judged) / len(judged) if judged else None
    return SliceStats(count=n, em=em, f1=f1, acc=acc)


def macro_average(stats: Sequence[SliceStats]) -> SliceStats:
    """Uniform average of already-aggregated group means."""
    if not stats:
        raise ValueError("nothing to average")
    n = len(stats)
    accs = [s.acc for s in stats if s.acc is not None]
    return SliceStats(
        count=sum(s.count for s in stats),
        em=sum(s.em for s in stats) / n,
        f1=sum(s.f1 for s in stats) / n,
        acc=sum(accs) / len(accs) if accs else None,
    )


def aggregate(
    scored: Sequence[ScoredPrediction],
    slices: Mapping[str, SliceLabels],
) -> AggregateReport:
    """Aggregate scores grouped by the labels in *slices* (keyed by example id).

    Examples missing from *slices* fall into dataset "default". Query-type
    breakdown buckets unlabeled examples under "unspecified" so that slice
    counts always sum to the total.
    """
    if not scored:
        raise ValueError("scored must be non-empty")

    by_dataset: dict[str, list[ScoredPrediction]] = {}
    by_atype: dict[str, list[ScoredPrediction]] = {}
    by_qtype: dict[str, list[ScoredPrediction]] = {}
    for s in scored:
        labels = slices.get(s.example_id, SliceLabels(dataset="default"))
        by_dataset.setdefault(labels.dataset, []).append(s)
        by_atype.setdefault(labels.answer_type, []).append(s)
        by_qtype.setdefault(labels.query_type or "unspecified", []).append(s)

    datasets = {name: _mean_stats(group) for name, group in by_dataset.items()}
    return AggregateReport(
        total=len(scored),
        datasets=datasets,
        average=macro_average([datasets[k] for k in sorted(datasets)]),
        by_answer_type={k: _mean_stats(g) for k, g in by_atype.items()},
        by_query_type={k: _mean_stats(g) for k, g in by_qtype.items()},
    )


# ---------------------------------------------------------------------------
# LLM-judge accuracy
# ---------------------------------------------------------------------------


def parse_judge_verdict(reply: str) -> int:
    """Parse the verdict: last non-empty line must be exactly CORRECT or INCORRECT."""
    lines = [ln.strip() for ln in reply.splitlines() if ln.strip()]
    if not lines:
        raise JudgeParseError("empty judge reply")
    verdict = lines[-1].strip().strip(".").upper()
    if verdict not in JUDGE_VERDICTS:
        raise JudgeParseError(f"unparseable judge verdict: {lines[-1]!r}")
    return int(verdict == "CORRECT")


def judge_accuracy(example: QAExample, prediction: str, judge, model_id: str) -> int:
    """Score one prediction with an LLM judge (1 for CORRECT, 0 for INCORRECT).

    *judge* is a gateway handle; backend errors propagate annotated with the
    example id, and unparseable verdicts raise JudgeParseError rather than
    being silently scored.
    """
    prompt = render_judge_prompt(example.query, example.gold_answers, prediction)
    try:
        response = judge.chat(model_id, prompt, max_tokens=8)
    except GatewayError as exc:
        raise GatewayError(f"judging example {example.id!r}: {exc}") from exc
    return parse_judge_verdict(response.text)
