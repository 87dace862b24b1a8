"""Prompt templates (shipped as versioned text resources) and their renderers.

Every prompt the toolkit sends to a model is rendered here, so tests,
pipelines, and the mock backend agree on one canonical surface form.
"""

from __future__ import annotations

from functools import lru_cache
from importlib import resources
from typing import Optional, Sequence

from .core import Document

# Sentinel a rewriter emits for a document with no query-relevant content.
NO_REWRITE = "[NO_REWRITE]"

# Two-step output markers for the per-target rewrite format.
STEP1_MARKER = "Step 1. Document rewrite:"
STEP2_MARKER = "Step 2."
STEP2_FULL_MARKER = "Step 2. Explain and answer:"

EMPTY_DOCUMENTS_BLOCK = "(none)"


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    """Load a prompt template from the package resources directory."""
    return resources.files("bridgelab.resources").joinpath(f"{name}.txt").read_text("utf-8")


def document_line(rank: int, text: str, title: Optional[str] = None) -> str:
    """Canonical one-line rendering of a document inside a prompt."""
    if title:
        return f"Document {rank} ({title}): {text}"
    return f"Document {rank}: {text}"


def documents_block(documents: Sequence[Document]) -> str:
    """Render documents in rank order, one line each; "(none)" when empty."""
    if not documents:
        return EMPTY_DOCUMENTS_BLOCK
    return "\n".join(document_line(d.rank, d.text, d.title) for d in documents)


def render_answer_prompt(query: str, documents: str) -> str:
    """Short-form QA answer prompt over a pre-rendered documents block."""
    return load_template("answer").format(query=query, documents=documents)


def render_student_rewrite_prompt(query: str, documents: str) -> str:
    """Single-pass rewrite prompt over the full document set (also the SFT/DPO prompt)."""
    return load_template("rewrite_student").format(query=query, documents=documents)


def render_teacher_rewrite_prompt(query: str, other_documents: str, target_document: str) -> str:
    """Per-target rewrite prompt; the target document is rendered last."""
    return load_template("rewrite_teacher").format(
        query=query, other_documents=other_documents, target_document=target_document
    )


def render_judge_prompt(query: str, golds: Sequence[str], prediction: str) -> str:
    gold_lines = "\n".join(f"- {g}" for g in golds)
    return load_template("judge").format(query=query, golds=gold_lines, prediction=prediction)


def render_trace_probe_prompt(query: str, documents: str) -> str:
    return load_template("trace_probe").format(query=query, documents=documents)
