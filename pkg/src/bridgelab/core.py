"""Domain types, dataset JSONL persistence, answer normalization, and the
extractive/abstractive answer-type classifier.

All types are immutable values after construction and safe to share across
threads; the operations here are pure.
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

MAX_DOCUMENTS = 10

ANSWER_TYPES = ("extractive", "abstractive", "unknown")
REWRITE_STATUSES = ("rewritten", "no_rewrite", "parse_failure")


class DatasetError(ValueError):
    """Raised for schema or invariant violations in dataset records."""


@dataclass(frozen=True)
class Document:
    """One retrieved document: id, retrieval rank (1-based), optional title, text."""

    doc_id: str
    rank: int
    text: str
    title: Optional[str] = None

    def __post_init__(self) -> None:
        if self.rank < 1:
            raise DatasetError(f"document {self.doc_id!r}: rank must be >= 1, got {self.rank}")
        if not self.text.strip():
            raise DatasetError(f"document {self.doc_id!r}: text is empty")


@dataclass(frozen=True)
class QAExample:
    """A query with its gold answers and up to ten pre-retrieved documents."""

    id: str
    query: str
    gold_answers: tuple[str, ...]
    documents: tuple[Document, ...]
    answer_type: str = "unknown"
    query_type: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.query.strip():
            raise DatasetError(f"example {self.id!r}: query is empty")
        if not self.gold_answers:
            raise DatasetError(f"example {self.id!r}: gold_answers is empty")
        if len(self.documents) > MAX_DOCUMENTS:
            raise DatasetError(
                f"example {self.id!r}: {len(self.documents)} documents, limit is {MAX_DOCUMENTS}"
            )
        ranks = [d.rank for d in self.documents]
        if ranks != list(range(1, len(ranks) + 1)):
            raise DatasetError(
                f"example {self.id!r}: ranks must be contiguous from 1 in order, got {ranks}"
            )
        doc_ids = [d.doc_id for d in self.documents]
        if len(set(doc_ids)) != len(doc_ids):
            raise DatasetError(f"example {self.id!r}: duplicate doc_id")
        if self.answer_type not in ANSWER_TYPES:
            raise DatasetError(f"example {self.id!r}: bad answer_type {self.answer_type!r}")


@dataclass(frozen=True)
class RewrittenDocument:
    """One document's rewrite outcome from a single rewriter call."""

    source_doc_id: str
    status: str
    text: str = ""

    def __post_init__(self) -> None:
        if self.status not in REWRITE_STATUSES:
            raise ValueError(f"bad rewrite status {self.status!r}")
        if self.status == "rewritten" and not self.text:
            raise ValueError(f"doc {self.source_doc_id!r}: rewritten but text is empty")
        if self.status != "rewritten" and self.text:
            raise ValueError(f"doc {self.source_doc_id!r}: status {self.status} carries text")


@dataclass(frozen=True)
class RewriteSet:
    """Rewrites for one example, one entry per source document in rank order."""

    example_id: str
    rewrites: tuple[RewrittenDocument, ...]

    def complete(self) -> bool:
        """True when no entry is a parse failure."""
        return all(r.status != "parse_failure" for r in self.rewrites)


# ---------------------------------------------------------------------------
# Answer normalization (open-domain QA convention: lowercase, strip
# punctuation, drop articles, collapse whitespace; NFC first for byte-stable
# behavior across platforms).
# ---------------------------------------------------------------------------

_PUNCT_RE = re.compile(r"[^\w\s]|_")
_ARTICLE_RE = re.compile(r"\b(a|an|the)\b")
_WS_RE = re.compile(r"\s+")


def normalize_answer(raw: str) -> str:
    """Normalize text for answer comparison; idempotent."""
    t = unicodedata.normalize("NFC", raw).lower()
    t = _PUNCT_RE.sub(" ", t)
    t = _ARTICLE_RE.sub(" ", t)
    return _WS_RE.sub(" ", t).strip()


def answer_tokens(raw: str) -> list[str]:
    """Normalized whitespace tokens of *raw*."""
    return normalize_answer(raw).split()


def _contains_subsequence(haystack: list[str], needle: list[str]) -> bool:
    if not needle:
        return False
    n = len(needle)
    return any(haystack[i : i + n] == needle for i in range(len(haystack) - n + 1))


def classify_answer_type(example: QAExample) -> str:
    """Return "extractive" iff any normalized gold answer appears as a
    contiguous token subsequence of any normalized document text, else
    "abstractive".
    """
    if not example.documents:
        raise DatasetError(f"example {example.id!r}: cannot classify without documents")
    doc_tokens = [answer_tokens(d.text) for d in example.documents]
    for gold in example.gold_answers:
        needle = answer_tokens(gold)
        if any(_contains_subsequence(toks, needle) for toks in doc_tokens):
            return "extractive"
    return "abstractive"


# ---------------------------------------------------------------------------
# Dataset JSONL persistence. One record per line:
# {"id": str, "query": str, "answers": [str,...],
#  "documents": [{"doc_id": str, "rank": int, "title": str|null, "text": str},...],
#  "answer_type": "extractive"|"abstractive"|"unknown", "query_type": str|null}
# ---------------------------------------------------------------------------


def example_to_record(example: QAExample) -> dict:
    return {
        "id": example.id,
        "query": example.query,
        "answers": list(example.gold_answers),
        "documents": [
            {"doc_id": d.doc_id, "rank": d.rank, "title": d.title, "text": d.text}
            for d in example.documents
        ],
        "answer_type": example.answer_type,
        "query_type": example.query_type,
    }


def example_from_record(record: dict) -> QAExample:
    try:
        documents = tuple(
            Document(
                doc_id=str(raw["doc_id"]),
                rank=int(raw["rank"]),
                title=raw.get("title"),
                text=raw["text"],
            )
            for raw in record.get("documents", [])
        )
        return QAExample(
            id=str(record["id"]),
            query=record["query"],
            gold_answers=tuple(record["answers"]),
            documents=documents,
            answer_type=record.get("answer_type", "unknown"),
            query_type=record.get("query_type"),
        )
    except KeyError as exc:
        raise DatasetError(f"missing required field {exc.args[0]!r}") from exc


def load_dataset(path: str | Path) -> list[QAExample]:
    """Load a JSONL dataset; malformed lines are rejected with line numbers."""
    examples: list[QAExample] = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                examples.append(example_from_record(record))
            except (json.JSONDecodeError, DatasetError, TypeError, ValueError) as exc:
                raise DatasetError(f"{path}:{lineno}: {exc}") from exc
    return examples


def save_dataset(examples: Iterable[QAExample], path: str | Path) -> None:
    """Write examples as canonical JSONL (the inverse of load_dataset)."""
    path = Path(path)
    if path.parent != Path("."):
        path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        for ex in examples:
            f.write(json.dumps(example_to_record(ex), ensure_ascii=False) + "\n")
