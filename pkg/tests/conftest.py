from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bridgelab.core import Document, QAExample
from bridgelab.gateway import Gateway, MockBackend, RetryPolicy
from bridgelab.synthetic import SyntheticQAHandler, generate_corpus


@pytest.fixture
def example() -> QAExample:
    """Three documents; the gold answer is stated verbatim in document 2."""
    return QAExample(
        id="ex1",
        query="what is the registry phrase of arlen site 1?",
        gold_answers=("crimson falcon",),
        documents=(
            Document(doc_id="d1", rank=1, text="Trade routes once crossed this region."),
            Document(doc_id="d2", rank=2, text="Archives note: [fact: crimson falcon]"),
            Document(doc_id="d3", rank=3, text="Gardens expanded here. [decoy: gravel]"),
        ),
    )


@pytest.fixture
def scripted_gateway() -> Gateway:
    """Mock backend driven by the deterministic synthetic-QA handler."""
    backend = MockBackend(handler=SyntheticQAHandler())
    return Gateway(backend, retry=RetryPolicy(max_retries=0), concurrency=4)


@pytest.fixture(scope="session")
def corpus() -> list[QAExample]:
    return generate_corpus(50, seed=7)
