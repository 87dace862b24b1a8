"""Set-level preference-pair construction for rewriter preference training.

Each rewritten document is first scored in isolation and categorized by its
answer F1 (A: f1=0, B: 0<f1<1, C: f1=1; boundaries are exact because zero
and perfect multiset overlap produce exact 0.0 and 1.0). Candidate document
sets are composed across categories, labeled by generating an answer from
the whole set, and positives are paired with negatives of the same example.
A naive variant pairs individual always-correct documents against
always-failing ones.
"""

from __future__ import annotations

import itertools
import json
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

from .core import QAExample, RewriteSet, RewrittenDocument
from .gateway import Gateway
from .metrics import token_f1
from .prompts import render_answer_prompt
from .supervision import student_prompt

CATEGORIES = ("A", "B", "C")

COMPOSITION_FAMILIES = ("a_only", "a_b", "b_c", "with_c")


def categorize(f1: float) -> str:
    """Exact boundary rule: 0 -> A, 1 -> C, anything strictly between -> B."""
    if f1 == 0.0:
        return "A"
    if f1 == 1.0:
        return "C"
    if 0.0 < f1 < 1.0:
        return "B"
    raise ValueError(f"f1 out of [0,1]: {f1}")


@dataclass(frozen=True)
class CategorizedDoc:
    """A rewritten document with its isolated answer F1 and category."""

    rewritten: RewrittenDocument
    rank: int
    individual_f1: float

    @property
    def category(self) -> str:
        return categorize(self.individual_f1)


@dataclass(frozen=True)
class LabeledSet:
    """A composed document set with its whole-set answer F1 and label."""

    example_id: str
    members: tuple[CategorizedDoc, ...]
    set_f1: float

    @property
    def member_doc_ids(self) -> tuple[str, ...]:
        return tuple(m.rewritten.source_doc_id for m in self.members)

    @property
    def composition(self) -> tuple[str, ...]:
        return tuple(m.category for m in self.members)

    @property
    def label(self) -> str:
        if self.set_f1 == 1.0:
            return "positive"
        if self.set_f1 == 0.0:
            return "negative"
        return "discarded"


@dataclass(frozen=True)
class DpoRecord:
    """One win/lose pair: shared rewrite prompt, chosen and rejected set texts."""

    id: str
    prompt: str
    chosen: str
    rejected: str
    chosen_composition: tuple[str, ...]
    rejected_composition: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.chosen == self.rejected:
            raise ValueError(f"record {self.id!r}: chosen equals rejected")


@dataclass(frozen=True)
class CompositionPolicy:
    """Which category families to compose and how many sets to keep."""

    families: tuple[str, ...] = COMPOSITION_FAMILIES
    min_size: int = 2
    max_size: int = 10
    max_per_family: Optional[int] = None

    def __post_init__(self) -> None:
        for fam in self.families:
            if fam not in COMPOSITION_FAMILIES:
                raise ValueError(f"unknown composition family {fam!r}")


def serialize_members(members: Sequence[CategorizedDoc]) -> str:
    """Block serialization of set members, in rank order (same grammar as
    SFT targets, without sentinel lines: pools hold real rewrites only)."""
    ordered = sorted(members, key=lambda m: m.rank)
    return "\n".join(f"Document {m.rank}: {m.rewritten.text}" for m in ordered)


# ---------------------------------------------------------------------------
# Scoring and labeling (generator calls)
# ---------------------------------------------------------------------------


def score_individual(
    example: QAExample,
    rewritten_doc: RewrittenDocument,
    generator: Gateway,
    model_id: str,
    max_tokens: int = 64,
) -> float:
    """Answer F1 when the generator sees only this rewritten document."""
    if rewritten_doc.status != "rewritten":
        raise ValueError(
            f"doc {rewritten_doc.source_doc_id!r}: only rewritten documents are scored"
        )
    rank = _rank_of(example, rewritten_doc.source_doc_id)
    prompt = render_answer_prompt(
        example.query, f"Document {rank}: {rewritten_doc.text}"
    )
    response = generator.chat(model_id, prompt, max_tokens=max_tokens)
    return token_f1(response.text, example.gold_answers)


def _rank_of(example: QAExample, doc_id: str) -> int:
    for d in example.documents:
        if d.doc_id == doc_id:
            return d.rank
    raise ValueError(f"doc {doc_id!r} not part of example {example.id!r}")


def build_pool(
    example: QAExample,
    rewrite_set: RewriteSet,
    generator: Gateway,
    model_id: str,
    max_tokens: int = 64,
) -> list[CategorizedDoc]:
    """Score every rewritten document in isolation; skip sentinel entries."""
    pool = []
    for rewrite in rewrite_set.rewrites:
        if rewrite.status != "rewritten":
            continue
        f1 = score_individual(example, rewrite, generator, model_id, max_tokens=max_tokens)
        pool.append(
            CategorizedDoc(
                rewritten=rewrite,
                rank=_rank_of(example, rewrite.source_doc_id),
                individual_f1=f1,
            )
        )
    return pool


def label_set(
    example: QAExample,
    members: Sequence[CategorizedDoc],
    generator: Gateway,
    model_id: str,
    max_tokens: int = 64,
) -> LabeledSet:
    """Generate an answer from the whole set and label by the boundary rule."""
    for m in members:
        _rank_of(example, m.rewritten.source_doc_id)
    prompt = render_answer_prompt(example.query, serialize_members(members))
    response = generator.chat(model_id, prompt, max_tokens=max_tokens)
    return LabeledSet(
        example_id=example.id,
        members=tuple(sorted(members, key=lambda m: m.rank)),
        set_f1=token_f1(response.text, example.gold_answers),
    )


# ---------------------------------------------------------------------------
# Composition and pairing (pure, deterministic)
# ---------------------------------------------------------------------------


def _family_of(members: Sequence[CategorizedDoc]) -> Optional[str]:
    counts = Counter(m.category for m in members)
    has_a, has_b, has_c = counts["A"] > 0, counts["B"] > 0, counts["C"] > 0
    if has_a and not has_b and not has_c:
        return "a_only"
    if has_a and has_b and not has_c:
        return "a_b"
    if has_b and has_c and not has_a:
        return "b_c"
    if has_c:
        return "with_c"
    return None  # B-only: not one of the named families


def compose_sets(
    pool: Sequence[CategorizedDoc],
    policy: CompositionPolicy = CompositionPolicy(),
    seed: int = 0,
) -> list[tuple[CategorizedDoc, ...]]:
    """Enumerate candidate sets for the policy's composition families.

    Deterministic given the seed; never emits the same member multiset
    twice. Set sizes are bounded by [min_size, min(len(pool), max_size)].
    """
    if not pool:
        raise ValueError("pool must be non-empty")
    ordered = sorted(pool, key=lambda m: m.rank)
    max_size = min(len(ordered), policy.max_size)
    by_family: dict[str, list[tuple[CategorizedDoc, ...]]] = {f: [] for f in policy.families}
    for size in range(policy.min_size, max_size + 1):
        for combo in itertools.combinations(ordered, size):
            family = _family_of(combo)
            if family in by_family:
                by_family[family].append(combo)
    rng = random.Random(seed)
    result: list[tuple[CategorizedDoc, ...]] = []
    for family in policy.families:
        candidates = by_family[family]
        if policy.max_per_family is not None and len(candidates) > policy.max_per_family:
            candidates = sorted(rng.sample(range(len(candidates)), policy.max_per_family))
            candidates = [by_family[family][i] for i in candidates]
        result.extend(candidates)
    return result


def _symmetric_difference(a: Sequence[str], b: Sequence[str]) -> int:
    ca, cb = Counter(a), Counter(b)
    return sum(abs(ca[c] - cb[c]) for c in set(ca) | set(cb))


def build_pairs(
    labeled: Sequence[LabeledSet],
    examples: Mapping[str, QAExample],
    pairs_per_example: int = 4,
) -> list[DpoRecord]:
    """Pair positives with negatives of the same example, up to the cap,
    preferring pairs whose category compositions differ most; ties broken
    lexically by member ranks. Deterministic given input order."""
    by_example: dict[str, list[LabeledSet]] = {}
    for ls in labeled:
        by_example.setdefault(ls.example_id, []).append(ls)

    records: list[DpoRecord] = []
    for example_id, sets in by_example.items():
        positives = [s for s in sets if s.label == "positive"]
        negatives = [s for s in sets if s.label == "negative"]
        if not positives or not negatives:
            continue
        candidates = [
            (
                -_symmetric_difference(p.composition, n.composition),
                tuple(m.rank for m in p.members),
                tuple(m.rank for m in n.members),
                p,
                n,
            )
            for p in positives
            for n in negatives
        ]
        candidates.sort(key=lambda item: item[:3])
        prompt = student_prompt(examples[example_id])
        for i, (_, _, _, p, n) in enumerate(candidates[:pairs_per_example]):
            records.append(
                DpoRecord(
                    id=f"{example_id}-pair{i}",
                    prompt=prompt,
                    chosen=serialize_members(p.members),
                    rejected=serialize_members(n.members),
                    chosen_composition=p.composition,
                    rejected_composition=n.composition,
                )
            )
    return records


def build_pairs_naive(
    example: QAExample,
    pool: Sequence[CategorizedDoc],
) -> list[DpoRecord]:
    """Pair each always-correct document (C, as singleton chosen) against each
    always-failing document (A, as singleton rejected)."""
    winners = [m for m in sorted(pool, key=lambda m: m.rank) if m.category == "C"]
    losers = [m for m in sorted(pool, key=lambda m: m.rank) if m.category == "A"]
    prompt = student_prompt(example) if winners and losers else ""
    records = []
    for i, (w, l) in enumerate(itertools.product(winners, losers)):
        records.append(
            DpoRecord(
                id=f"{example.id}-naive{i}",
                prompt=prompt,
                chosen=serialize_members([w]),
                rejected=serialize_members([l]),
                chosen_composition=(w.category,),
                rejected_composition=(l.category,),
            )
        )
    return records


# ---------------------------------------------------------------------------
# DPO JSONL persistence and the end-to-end builder
# ---------------------------------------------------------------------------


def save_dpo_records(records: Iterable[DpoRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            row = {
                "id": rec.id,
                "prompt": rec.prompt,
                "chosen": rec.chosen,
                "rejected": rec.rejected,
                "meta": {
                    "chosen_composition": list(rec.chosen_composition),
                    "rejected_composition": list(rec.rejected_composition),
                },
            }
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_dpo_records(path: str | Path) -> list[DpoRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            meta = row.get("meta", {})
            records.append(
                DpoRecord(
                    id=row["id"],
                    prompt=row["prompt"],
                    chosen=row["chosen"],
                    rejected=row["rejected"],
                    chosen_composition=tuple(meta.get("chosen_composition", ())),
                    rejected_composition=tuple(meta.get("rejected_composition", ())),
                )
            )
    return records


@dataclass
class DpoStats:
    examples: int = 0
    pools_too_small: int = 0
    sets_labeled: int = 0
    sets_discarded: int = 0
    pairs: int = 0


def generate_dpo_dataset(
    examples: Sequence[QAExample],
    rewrite_sets: Mapping[str, RewriteSet],
    generator: Gateway,
    model_id: str,
    policy: CompositionPolicy = CompositionPolicy(),
    pairs_per_example: int = 4,
    seed: int = 0,
    naive: bool = False,
) -> tuple[list[DpoRecord], DpoStats]:
    """Score, compose, label, and pair across a dataset.

    The naive variant skips composition entirely and pairs C singletons
    against A singletons.
    """
    stats = DpoStats()
    records: list[DpoRecord] = []
    examples_by_id = {ex.id: ex for ex in examples}
    labeled: list[LabeledSet] = []
    for example in examples:
        rewrite_set = rewrite_sets.get(example.id)
        if rewrite_set is None:
            continue
        stats.examples += 1
        pool = build_pool(example, rewrite_set, generator, model_id)
        if naive:
            records.extend(build_pairs_naive(example, pool))
            continue
        if len(pool) < max(2, policy.min_size):
            stats.pools_too_small += 1
            continue
        for members in compose_sets(pool, policy, seed=seed):
            ls = label_set(example, members, generator, model_id)
            stats.sets_labeled += 1
            if ls.label == "discarded":
                stats.sets_discarded += 1
            labeled.append(ls)
    if not naive:
        records.extend(build_pairs(labeled, examples_by_id, pairs_per_example))
    stats.pairs = len(records)
    return records, stats
