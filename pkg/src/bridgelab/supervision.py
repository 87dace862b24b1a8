"""Scaled process-supervision dataset generation.

One training example becomes k independent rewriter calls (k = the number of
retrieved documents), each asking for a rewrite of a single target document
placed last in the context to counter positional bias. Outputs follow a
two-step format; only the Step 1 rewrite is ever kept, so later reasoning
cannot leak into training targets. Complete rewrite sets are assembled into
SFT records whose target is the canonical block serialization, one block per
document in rank order, with skip sentinels preserved.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import QAExample, RewriteSet, RewrittenDocument
from .gateway import Gateway, GatewayError, GenRequest, GenResponse
from .prompts import (
    NO_REWRITE,
    STEP1_MARKER,
    STEP2_MARKER,
    document_line,
    documents_block,
    render_student_rewrite_prompt,
    render_teacher_rewrite_prompt,
    render_trace_probe_prompt,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RewritePrompt:
    """A rendered per-target rewrite prompt; the target document comes last."""

    example_id: str
    target_index: int
    rendered_text: str


@dataclass(frozen=True)
class SftRecord:
    """A serialized training example: full-set rewrite prompt and its target."""

    id: str
    prompt: str
    target: str
    k: int
    teacher_model: str


@dataclass(frozen=True)
class TraceProbeResult:
    """Whether a model's reasoning trace rewrites documents before answering."""

    example_id: str
    model_id: str
    contains_rewrite_before_answer: bool
    cited_documents: tuple[int, ...]


@dataclass
class GenerationStats:
    """Counters for one dataset generation run."""

    examples: int = 0
    calls: int = 0
    parse_failures: int = 0
    dropped_incomplete: int = 0
    dropped_by_filter: int = 0
    records: int = 0


# ---------------------------------------------------------------------------
# Prompt construction and output parsing
# ---------------------------------------------------------------------------


def build_rewrite_prompt(example: QAExample, target_index: int) -> RewritePrompt:
    """Render the per-target rewrite prompt for document *target_index* (1-based).

    Non-target documents appear first in rank order; the target document is
    always last.
    """
    if not 1 <= target_index <= len(example.documents):
        raise IndexError(
            f"target_index {target_index} out of range 1..{len(example.documents)}"
        )
    target = example.documents[target_index - 1]
    others = [d for d in example.documents if d.rank != target_index]
    rendered = render_teacher_rewrite_prompt(
        example.query,
        other_documents=documents_block(others),
        target_document=document_line(target.rank, target.text, target.title),
    )
    return RewritePrompt(example_id=example.id, target_index=target_index, rendered_text=rendered)


def parse_rewrite_output(raw: str, source_doc_id: str = "") -> RewrittenDocument:
    """Extract the Step 1 rewrite from a two-step model output.

    Both step markers must be present; the region between them is the
    rewrite. A trimmed region equal to the skip sentinel means no_rewrite;
    a missing marker or empty region is a parse failure. Step 2 content is
    discarded here and never reaches a training target.
    """
    start = raw.find(STEP1_MARKER)
    if start < 0:
        return RewrittenDocument(source_doc_id=source_doc_id, status="parse_failure")
    start += len(STEP1_MARKER)
    end = raw.find(STEP2_MARKER, start)
    if end < 0:
        return RewrittenDocument(source_doc_id=source_doc_id, status="parse_failure")
    region = raw[start:end].strip()
    if not region:
        return RewrittenDocument(source_doc_id=source_doc_id, status="parse_failure")
    if region == NO_REWRITE:
        return RewrittenDocument(source_doc_id=source_doc_id, status="no_rewrite")
    return RewrittenDocument(source_doc_id=source_doc_id, status="rewritten", text=region)


def extract_step2(raw: str) -> str:
    """The Step 2 region of a two-step output (diagnostics and filtering only)."""
    idx = raw.find(STEP2_MARKER)
    if idx < 0:
        return ""
    tail = raw[idx:]
    colon = tail.find(":")
    return tail[colon + 1 :].strip() if colon >= 0 else ""


# ---------------------------------------------------------------------------
# Fan-out: k calls per example
# ---------------------------------------------------------------------------


def scale_rewrites(
    example: QAExample,
    teacher: Gateway,
    model_id: str,
    max_tokens: int = 1024,
    raw_outputs: Optional[list[str]] = None,
) -> RewriteSet:
    """Issue exactly k = |documents| independent rewrite calls, one per target
    index, and return the parsed rewrites in rank order.

    Per-document failures become parse_failure entries; only all-k failure
    raises. When *raw_outputs* is given, raw completions are appended to it
    (one per document; empty string on call failure).
    """
    k = len(example.documents)
    requests = [
        GenRequest(
            model_id=model_id,
            messages=(("user", build_rewrite_prompt(example, i).rendered_text),),
            max_tokens=max_tokens,
        )
        for i in range(1, k + 1)
    ]
    results = teacher.generate_many(requests, return_exceptions=True)
    rewrites: list[RewrittenDocument] = []
    call_failures = 0
    for doc, result in zip(example.documents, results):
        if isinstance(result, GenResponse):
            rewrite = parse_rewrite_output(result.text, source_doc_id=doc.doc_id)
            if raw_outputs is not None:
                raw_outputs.append(result.text)
        else:
            log.warning("example %s doc %s: teacher call failed: %s", example.id, doc.doc_id, result)
            rewrite = RewrittenDocument(source_doc_id=doc.doc_id, status="parse_failure")
            call_failures += 1
            if raw_outputs is not None:
                raw_outputs.append("")
        rewrites.append(rewrite)
    if k > 0 and call_failures == k:
        raise GatewayError(f"example {example.id!r}: all {k} rewrite calls failed")
    return RewriteSet(example_id=example.id, rewrites=tuple(rewrites))


# ---------------------------------------------------------------------------
# Rewrite-set block serialization (the train-time target grammar, reused at
# inference to parse the student bridge's output).
# ---------------------------------------------------------------------------

_BLOCK_RE = re.compile(r"^Document (\d+): ?", flags=re.MULTILINE)


def serialize_rewrite_set(rewrite_set: RewriteSet) -> str:
    """One block per document in rank order; skip sentinels preserved."""
    lines = []
    for rank, rewrite in enumerate(rewrite_set.rewrites, start=1):
        if rewrite.status == "rewritten":
            lines.append(f"Document {rank}: {rewrite.text}")
        elif rewrite.status == "no_rewrite":
            lines.append(f"Document {rank}: {NO_REWRITE}")
        else:
            raise ValueError(
                f"cannot serialize parse_failure entry (doc {rewrite.source_doc_id!r})"
            )
    return "\n".join(lines)


def parse_rewrite_set(
    text: str, example: QAExample, strict: bool = True
) -> Optional[RewriteSet]:
    """Parse block-serialized rewrites back into a RewriteSet.

    In strict mode the blocks must be exactly ranks 1..k in order; returns
    None when the text does not conform (the student emitted a malformed
    set).
    """
    matches = list(_BLOCK_RE.finditer(text))
    k = len(example.documents)
    if not matches:
        return None
    ranks = [int(m.group(1)) for m in matches]
    if strict and ranks != list(range(1, k + 1)):
        return None
    rewrites: list[RewrittenDocument] = []
    for i, match in enumerate(matches):
        start = match.end()
        end = matches[i + 1].start() if i + 1 < len(matches) else len(text)
        body = text[start:end].strip()
        doc_id = example.documents[ranks[i] - 1].doc_id if ranks[i] <= k else str(ranks[i])
        if body == NO_REWRITE:
            rewrites.append(RewrittenDocument(source_doc_id=doc_id, status="no_rewrite"))
        elif body:
            rewrites.append(RewrittenDocument(source_doc_id=doc_id, status="rewritten", text=body))
        else:
            return None
    return RewriteSet(example_id=example.id, rewrites=tuple(rewrites))


def student_prompt(example: QAExample) -> str:
    """The full-set rewrite prompt (shared by SFT targets and DPO records)."""
    return render_student_rewrite_prompt(example.query, documents_block(list(example.documents)))


def assemble_sft_record(
    example: QAExample,
    rewrite_set: RewriteSet,
    teacher_model: str = "",
) -> Optional[SftRecord]:
    """Build the SFT record for a complete rewrite set; None if any entry is a
    parse failure (the caller counts drops)."""
    if not rewrite_set.complete():
        return None
    return SftRecord(
        id=example.id,
        prompt=student_prompt(example),
        target=serialize_rewrite_set(rewrite_set),
        k=len(rewrite_set.rewrites),
        teacher_model=teacher_model,
    )


# ---------------------------------------------------------------------------
# SFT JSONL persistence
# ---------------------------------------------------------------------------


def save_sft_records(records: Iterable[SftRecord], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            row = {
                "id": rec.id,
                "prompt": rec.prompt,
                "target": rec.target,
                "meta": {"k": rec.k, "dropped": False, "teacher_model": rec.teacher_model},
            }
            f.write(json.dumps(row, ensure_ascii=False) + "\n")


def load_sft_records(path: str | Path) -> list[SftRecord]:
    records = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            row = json.loads(line)
            meta = row.get("meta", {})
            records.append(
                SftRecord(
                    id=row["id"],
                    prompt=row["prompt"],
                    target=row["target"],
                    k=meta.get("k", 0),
                    teacher_model=meta.get("teacher_model", ""),
                )
            )
    return records


def generate_sft_dataset(
    examples: Sequence[QAExample],
    teacher: Gateway,
    model_id: str,
    filter_by_answer_f1: bool = False,
    max_tokens: int = 1024,
) -> tuple[list[SftRecord], GenerationStats]:
    """Run the full fan-out over a dataset and assemble SFT records.

    With *filter_by_answer_f1*, a record is dropped when every per-call
    Step 2 answer has zero token overlap with the gold answers (the teacher
    never reached the answer, so its rewrites carry no observed utility).
    """
    from .metrics import token_f1

    records: list[SftRecord] = []
    stats = GenerationStats()
    for example in examples:
        stats.examples += 1
        raw_outputs: list[str] = []
        rewrite_set = scale_rewrites(
            example, teacher, model_id, max_tokens=max_tokens, raw_outputs=raw_outputs
        )
        stats.calls += len(example.documents)
        stats.parse_failures += sum(
            1 for r in rewrite_set.rewrites if r.status == "parse_failure"
        )
        record = assemble_sft_record(example, rewrite_set, teacher_model=model_id)
        if record is None:
            stats.dropped_incomplete += 1
            continue
        if filter_by_answer_f1:
            step2_answers = [extract_step2(raw) for raw in raw_outputs if raw]
            if step2_answers and all(
                token_f1(ans, example.gold_answers) == 0.0 for ans in step2_answers
            ):
                stats.dropped_by_filter += 1
                continue
        records.append(record)
        stats.records += 1
    return records, stats


# ---------------------------------------------------------------------------
# Trace probe: do reasoning traces rewrite documents before answering?
# ---------------------------------------------------------------------------

_CITATION_RE = re.compile(r"\bdocuments?\s+(\d+(?:\s*(?:,|and|&)\s*\d+)*)", flags=re.IGNORECASE)
_ANSWER_RE = re.compile(r"\banswer\b", flags=re.IGNORECASE)


def detect_cited_documents(trace: str) -> tuple[bool, tuple[int, ...]]:
    """Find document citations occurring before the final answer.

    The final answer starts at the last "answer" mention when present,
    otherwise at the end of the trace.
    """
    answer_matches = list(_ANSWER_RE.finditer(trace))
    cutoff = answer_matches[-1].start() if answer_matches else len(trace)
    cited: list[int] = []
    for match in _CITATION_RE.finditer(trace, 0, cutoff):
        for num in re.findall(r"\d+", match.group(1)):
            rank = int(num)
            if rank not in cited:
                cited.append(rank)
    return bool(cited), tuple(cited)


def probe_traces(
    example: QAExample,
    model_ids: Sequence[str],
    teacher: Gateway,
    max_tokens: int = 1024,
) -> list[TraceProbeResult]:
    """Run the reasoning-trace probe for each model; backend errors are
    recorded as negative results, not fatal."""
    prompt = render_trace_probe_prompt(example.query, documents_block(list(example.documents)))
    results = []
    for model_id in model_ids:
        try:
            response = teacher.chat(model_id, prompt, max_tokens=max_tokens)
        except GatewayError as exc:
            log.warning("trace probe failed for model %s: %s", model_id, exc)
            results.append(
                TraceProbeResult(
                    example_id=example.id,
                    model_id=model_id,
                    contains_rewrite_before_answer=False,
                    cited_documents=(),
                )
            )
            continue
        found, cited = detect_cited_documents(response.text)
        results.append(
            TraceProbeResult(
                example_id=example.id,
                model_id=model_id,
                contains_rewrite_before_answer=found,
                cited_documents=cited,
            )
        )
    return results


def rewrite_rate(results: Sequence[TraceProbeResult]) -> float:
    """Fraction of probes whose trace rewrites documents before the answer."""
    if not results:
        return 0.0
    return sum(r.contains_rewrite_before_answer for r in results) / len(results)
