"""Deterministic synthetic QA corpus and a scripted mock-backend handler.

The corpus embeds machine-readable evidence markers inside document text so
that a purely textual, deterministic handler can stand in for every model
role (rewriter, generator, judge, trace subject) during offline runs and
tests. Marker kinds:

    [fact: words]   true evidence, payload stated verbatim
    [clue: words]   true evidence, each payload word reversed (so the gold
                    answer never appears literally: abstractive examples)
    [trap: words]   false evidence the scripted rewriter falls for
    [decoy: words]  false evidence the scripted rewriter filters out

The scripted generator reads any marker it sees, so decoys pollute naive
answers but vanish after bridging; traps survive bridging and create
zero-F1 rewrites for preference pools.
"""

from __future__ import annotations

import random
import re
from typing import Optional

from .core import Document, QAExample, classify_answer_type, normalize_answer
from .gateway import GenRequest
from .prompts import NO_REWRITE

GOLD_WORDS = [
    "crimson", "falcon", "harbor", "velvet", "signal", "meadow",
    "copper", "lantern", "orchid", "thunder", "marble", "prairie",
]
DECOY_WORDS = ["gravel", "plastic", "cardboard", "static", "rubber", "chrome"]
FILLER_SENTENCES = [
    "Weather patterns shifted gradually over several decades.",
    "Local festivals attract visitors every spring.",
    "Trade routes once crossed this entire region.",
    "Renovations to public buildings finished ahead of schedule.",
    "Migration of birds peaks in autumn here.",
    "Community gardens expanded along two avenues.",
]
PLACES = ["arlen", "bexley", "corvi", "dunmore", "elmswood", "farrow", "gillam", "hobbes"]
QUERY_TYPES = ["aggregation", "multi-hop", "post-processing", None]

_MARKER_RE = re.compile(r"\[(fact|clue|trap|decoy): ([^\]]*)\]")
_DOC_LINE_RE = re.compile(r"^Document (\d+)(?: \([^)]*\))?: (.*)$")


def _encode(kind: str, payload: str) -> str:
    if kind == "clue":
        payload = " ".join(w[::-1] for w in payload.split())
    return f"[{kind}: {payload}]"


def _decode(kind: str, payload: str) -> str:
    if kind == "clue":
        return " ".join(w[::-1] for w in payload.split())
    return payload


def generate_corpus(n: int, seed: int = 0, min_docs: int = 2, max_docs: int = 6) -> list[QAExample]:
    """Build *n* deterministic QA examples with controlled document roles.

    Every fifth example is preference-ready: it carries partial evidence and
    two traps, so isolated rewrite scoring yields all three F1 categories.
    """
    rng = random.Random(seed)
    examples = []
    for i in range(n):
        preference_ready = i % 5 == 0
        n_words = rng.choice([2, 3]) if preference_ready else rng.choice([1, 2, 2, 3])
        gold_words = rng.sample(GOLD_WORDS, k=n_words)
        answer = " ".join(gold_words)
        evidence_kind = "clue" if rng.random() < 0.4 else "fact"
        place = rng.choice(PLACES)
        query = f"what is the registry phrase of {place} site {i}?"

        def filler() -> str:
            return rng.choice(FILLER_SENTENCES)

        # Full evidence document (always present).
        texts: list[str] = [f"{filler()} {_encode(evidence_kind, answer)}"]
        if preference_ready:
            texts.append(f"{filler()} {_encode(evidence_kind, gold_words[0])}")
            texts.append(f"{filler()} {_encode(evidence_kind, gold_words[1])}")
            texts.append(f"{filler()} {_encode('trap', rng.choice(DECOY_WORDS))}")
            texts.append(f"{filler()} {_encode('trap', rng.choice(DECOY_WORDS))}")
            texts.append(f"{filler()} {_encode('decoy', rng.choice(DECOY_WORDS))}")
        else:
            n_docs = rng.randint(min_docs, max_docs)
            n_traps = rng.choice([0, 0, 1, 2]) if n_docs >= 4 else 0
            n_decoys = rng.choice([0, 1, 2]) if n_docs >= 3 else 0
            while len(texts) < n_docs:
                if n_traps > 0:
                    texts.append(f"{filler()} {_encode('trap', rng.choice(DECOY_WORDS))}")
                    n_traps -= 1
                elif n_decoys > 0:
                    texts.append(f"{filler()} {_encode('decoy', rng.choice(DECOY_WORDS))}")
                    n_decoys -= 1
                elif len(gold_words) > 1 and rng.random() < 0.4:
                    texts.append(f"{filler()} {_encode(evidence_kind, rng.choice(gold_words))}")
                else:
                    texts.append(filler())
        rng.shuffle(texts)

        documents = tuple(
            Document(
                doc_id=f"ex{i}-d{j}",
                rank=j + 1,
                text=text,
                title=f"Site note {j}" if rng.random() < 0.3 else None,
            )
            for j, text in enumerate(texts)
        )
        example = QAExample(
            id=f"ex{i:04d}",
            query=query,
            gold_answers=(answer,),
            documents=documents,
            query_type=QUERY_TYPES[i % len(QUERY_TYPES)],
        )
        examples.append(
            QAExample(
                id=example.id,
                query=example.query,
                gold_answers=example.gold_answers,
                documents=example.documents,
                answer_type=classify_answer_type(example),
                query_type=example.query_type,
            )
        )
    return examples


# ---------------------------------------------------------------------------
# Scripted handler: a pure function of (model_id, prompt text)
# ---------------------------------------------------------------------------


def _markers(text: str) -> list[tuple[str, str]]:
    return [(m.group(1), m.group(2)) for m in _MARKER_RE.finditer(text)]


def _evidence_rewrite(text: str) -> Optional[str]:
    """The scripted rewriter keeps fact/clue/trap markers, drops decoys."""
    kept = [(k, p) for k, p in _markers(text) if k in ("fact", "clue", "trap")]
    if not kept:
        return None
    decoded = " ".join(_decode(k, p) for k, p in kept)
    return decoded


def _doc_lines(block: str) -> list[tuple[int, str]]:
    lines = []
    for raw in block.splitlines():
        match = _DOC_LINE_RE.match(raw.strip())
        if match:
            lines.append((int(match.group(1)), match.group(2)))
    return lines


def _section(prompt: str, start_marker: str, end_markers: list[str]) -> str:
    start = prompt.find(start_marker)
    if start < 0:
        return ""
    start += len(start_marker)
    end = len(prompt)
    for marker in end_markers:
        pos = prompt.find(marker, start)
        if 0 <= pos < end:
            end = pos
    return prompt[start:end]


def _answer_from_markers(block: str) -> str:
    words: list[str] = []
    for kind, payload in _markers(block):
        for word in _decode(kind, payload).split():
            if word not in words:
                words.append(word)
    return " ".join(words) if words else "unknown"


class SyntheticQAHandler:
    """Deterministic responses for every prompt shape the toolkit issues.

    Model ids containing "identity" act as an identity bridge (each document
    is "rewritten" to exactly its original text); all other ids share the
    scripted behavior, so one handler serves teacher, student, generator,
    and judge roles.
    """

    def __call__(self, req: GenRequest) -> Optional[str]:
        prompt = req.messages[-1][1]
        if "Respond with exactly one word: CORRECT or INCORRECT." in prompt:
            return self._judge(prompt)
        if "Target document:" in prompt and "Step 1. Document rewrite:" in prompt:
            return self._rewrite_target(prompt)
        if "Rewrite each of the retrieved documents" in prompt:
            return self._rewrite_all(prompt, identity="identity" in req.model_id)
        if prompt.startswith("Think step by step to use the provided documents"):
            return self._trace(prompt)
        if "Answer the question using the documents below." in prompt:
            return self._answer(prompt)
        return None

    def _answer(self, prompt: str) -> str:
        block = _section(prompt, "Documents:", ["\nAnswer:"])
        return _answer_from_markers(block)

    def _judge(self, prompt: str) -> str:
        golds_block = _section(prompt, "Acceptable answers:", ["Candidate answer:"])
        golds = [ln[2:].strip() for ln in golds_block.splitlines() if ln.strip().startswith("- ")]
        candidate = _section(prompt, "Candidate answer:", ["\n\nIs the candidate"]).strip()
        ok = any(normalize_answer(candidate) == normalize_answer(g) for g in golds)
        return "CORRECT" if ok else "INCORRECT"

    def _rewrite_target(self, prompt: str) -> str:
        block = _section(prompt, "Target document:", ["\n[Guidelines]"])
        lines = _doc_lines(block)
        if not lines:
            return "Step 1. Document rewrite:\nStep 2. Explain and answer: no document found."
        rank, text = lines[0]
        evidence = _evidence_rewrite(text)
        if evidence is None:
            return (
                f"Step 1. Document rewrite: {NO_REWRITE}\n"
                "Step 2. Explain and answer: The target document does not help with this query."
            )
        return (
            f"Step 1. Document rewrite: Evidence from source {rank}: [fact: {evidence}].\n"
            f"Step 2. Explain and answer: Based on the target document, the answer is {evidence}."
        )

    def _rewrite_all(self, prompt: str, identity: bool) -> str:
        block = _section(prompt, "Documents:", ["\n[Guidelines]"])
        out = []
        for rank, text in _doc_lines(block):
            if identity:
                out.append(f"Document {rank}: {text}")
                continue
            evidence = _evidence_rewrite(text)
            if evidence is None:
                out.append(f"Document {rank}: {NO_REWRITE}")
            else:
                out.append(f"Document {rank}: Evidence from source {rank}: [fact: {evidence}].")
        return "\n".join(out)

    def _trace(self, prompt: str) -> str:
        block = _section(prompt, "Documents:", [])
        cited = [rank for rank, text in _doc_lines(block) if _markers(text)]
        if not cited:
            return "None of the documents are useful here. answer: unknown"
        cites = " ".join(f"From Document {rank}: relevant content found." for rank in cited)
        answers = [
            _evidence_rewrite(text)
            for rank, text in _doc_lines(block)
            if rank in cited and _evidence_rewrite(text)
        ]
        final = answers[0] if answers else "unknown"
        return f"{cites} answer: {final}"


HANDLERS = {"synthetic-qa": SyntheticQAHandler}


def get_handler(name: str):
    try:
        return HANDLERS[name]()
    except KeyError:
        raise ValueError(f"unknown mock handler {name!r}; known: {sorted(HANDLERS)}") from None
