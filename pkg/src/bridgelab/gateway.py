"""Uniform client for chat-style generation and sequence log-probability
scoring against any OpenAI-compatible endpoint, plus a deterministic mock
backend, a persistent response cache, retries, and bounded concurrency.

The Gateway is a shared handle safe for concurrent use: an internal
semaphore bounds in-flight requests per backend, the cache is guarded for
concurrent readers/writers, and every HTTP call carries a deadline.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import httpx

log = logging.getLogger(__name__)

API_KEY_ENV = "BRIDGELAB_API_KEY"

ROLES = ("system", "user", "assistant")


class GatewayError(Exception):
    """Base class for gateway failures."""

    retryable = False


class BackendError(GatewayError):
    """A backend call failed; carries the number of attempts made."""

    def __init__(self, message: str, attempts: int = 1):
        super().__init__(message)
        self.attempts = attempts


class NetworkError(BackendError):
    retryable = True


class BackendHTTPError(BackendError):
    def __init__(self, message: str, status: int, attempts: int = 1):
        super().__init__(message, attempts)
        self.status = status
        self.retryable = status >= 500 or status == 429


class RateLimitError(BackendHTTPError):
    retryable = True

    def __init__(self, message: str, retry_after: Optional[float] = None, attempts: int = 1):
        super().__init__(message, status=429, attempts=attempts)
        self.retry_after = retry_after


class ScoringUnsupportedError(GatewayError):
    """The backend cannot return echo logprobs; scoring is never approximated."""


class MockMissError(GatewayError):
    """The mock backend had no fixture, rule, or handler for a request."""


# ---------------------------------------------------------------------------
# Request / response types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GenRequest:
    """A chat-style generation request."""

    model_id: str
    messages: tuple[tuple[str, str], ...]
    temperature: float = 0.0
    max_tokens: int = 256
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if not self.messages:
            raise ValueError("messages must be non-empty")
        if self.messages[0][0] not in ("system", "user"):
            raise ValueError(f"first role must be system or user, got {self.messages[0][0]!r}")
        for role, _ in self.messages:
            if role not in ROLES:
                raise ValueError(f"bad role {role!r}")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")
        if self.max_tokens <= 0:
            raise ValueError("max_tokens must be > 0")

    def payload(self) -> dict:
        return {
            "model_id": self.model_id,
            "messages": [[r, c] for r, c in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "seed": self.seed,
        }


@dataclass(frozen=True)
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0


@dataclass(frozen=True)
class GenResponse:
    text: str
    backend_id: str
    usage: Usage = Usage()
    token_logprobs: Optional[tuple[tuple[str, float], ...]] = None

    def __post_init__(self) -> None:
        if self.token_logprobs is not None:
            for token, lp in self.token_logprobs:
                if lp > 0:
                    raise ValueError(f"logprob of {token!r} is positive: {lp}")

    def to_record(self) -> dict:
        return {
            "text": self.text,
            "backend_id": self.backend_id,
            "usage": [self.usage.prompt_tokens, self.usage.completion_tokens],
            "token_logprobs": (
                None if self.token_logprobs is None else [[t, lp] for t, lp in self.token_logprobs]
            ),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "GenResponse":
        lps = rec.get("token_logprobs")
        return cls(
            text=rec["text"],
            backend_id=rec["backend_id"],
            usage=Usage(*rec.get("usage", (0, 0))),
            token_logprobs=None if lps is None else tuple((t, lp) for t, lp in lps),
        )


@dataclass(frozen=True)
class ScoreRequest:
    """Total log-probability of *continuation* given *context*."""

    model_id: str
    context: str
    continuation: str

    def __post_init__(self) -> None:
        if not self.continuation:
            raise ValueError("continuation must be non-empty")

    def payload(self) -> dict:
        return {
            "model_id": self.model_id,
            "context": self.context,
            "continuation": self.continuation,
        }


def request_fingerprint(kind: str, payload: dict) -> str:
    """Stable hash of a request payload; the mock fixture and cache key basis."""
    blob = json.dumps({"kind": kind, "payload": payload}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# Response cache: append-only JSONL record log keyed by request hash.
# ---------------------------------------------------------------------------


class ResponseCache:
    """Thread-safe response cache, optionally persisted as append-only JSONL."""

    def __init__(self, path: Optional[Union[str, Path]] = None):
        self.path = Path(path) if path is not None else None
        self._records: dict[str, dict] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            with open(self.path, "r", encoding="utf-8") as f:
                for line in f:
                    if line.strip():
                        rec = json.loads(line)
                        self._records[rec["key"]] = rec["value"]

    def get(self, key: str) -> Optional[dict]:
        with self._lock:
            value = self._records.get(key)
            if value is None:
                self.misses += 1
            else:
                self.hits += 1
            return value

    def put(self, key: str, value: dict) -> None:
        with self._lock:
            if key in self._records:
                return
            self._records[key] = value
            if self.path is not None:
                self.path.parent.mkdir(parents=True, exist_ok=True)
                with open(self.path, "a", encoding="utf-8") as f:
                    f.write(json.dumps({"key": key, "value": value}, ensure_ascii=False) + "\n")

    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------


class OpenAIBackend:
    """OpenAI-compatible HTTP backend: /chat/completions plus echo-logprob scoring."""

    def __init__(
        self,
        base_url: str,
        api_key: Optional[str] = None,
        timeout: float = 60.0,
        backend_id: Optional[str] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.api_key = api_key if api_key is not None else os.environ.get(API_KEY_ENV, "")
        self.timeout = timeout
        self.backend_id = backend_id or f"openai:{self.base_url}"
        self._client = httpx.Client(timeout=timeout)

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    def _post(self, route: str, body: dict) -> dict:
        try:
            resp = self._client.post(self.base_url + route, json=body, headers=self._headers())
        except httpx.TimeoutException as exc:
            raise NetworkError(f"timeout calling {route}: {exc}") from exc
        except httpx.HTTPError as exc:
            raise NetworkError(f"network error calling {route}: {exc}") from exc
        if resp.status_code == 429:
            retry_after = resp.headers.get("Retry-After")
            raise RateLimitError(
                "rate limited", retry_after=float(retry_after) if retry_after else None
            )
        if resp.status_code >= 400:
            raise BackendHTTPError(
                f"{route} returned {resp.status_code}: {resp.text[:200]}", status=resp.status_code
            )
        return resp.json()

    def complete(self, req: GenRequest) -> GenResponse:
        body = {
            "model": req.model_id,
            "messages": [{"role": r, "content": c} for r, c in req.messages],
            "temperature": req.temperature,
            "max_tokens": req.max_tokens,
        }
        if req.seed is not None:
            body["seed"] = req.seed
        data = self._post("/chat/completions", body)
        try:
            choice = data["choices"][0]
            text = choice["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendError(f"malformed chat completion response: {exc}") from exc
        usage = data.get("usage", {})
        logprobs = None
        if isinstance(choice.get("logprobs"), dict) and choice["logprobs"].get("content"):
            logprobs = tuple(
                (item["token"], min(0.0, float(item["logprob"])))
                for item in choice["logprobs"]["content"]
            )
        return GenResponse(
            text=text,
            backend_id=self.backend_id,
            usage=Usage(usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)),
            token_logprobs=logprobs,
        )

    def score(self, req: ScoreRequest) -> float:
        body = {
            "model": req.model_id,
            "prompt": req.context + req.continuation,
            "max_tokens": 0,
            "echo": True,
            "logprobs": 0,
        }
        data = self._post("/completions", body)
        try:
            lp = data["choices"][0]["logprobs"]
            token_logprobs = lp["token_logprobs"]
            offsets = lp["text_offset"]
        except (KeyError, IndexError, TypeError) as exc:
            raise ScoringUnsupportedError(
                f"backend did not return echo logprobs: {exc}"
            ) from exc
        boundary = len(req.context)
        if boundary not in offsets:
            raise ScoringUnsupportedError("continuation is not token-aligned with the context")
        total = 0.0
        for offset, logprob in zip(offsets, token_logprobs):
            if offset >= boundary:
                if logprob is None:
                    raise ScoringUnsupportedError("missing logprob inside the continuation")
                total += logprob
        return total


class MockBackend:
    """Deterministic in-process backend for tests and offline runs.

    Resolution order for a generation request: exact fixtures (prompt-hash
    to response records, optionally loaded from a directory), then the
    configured handler, then an optional seeded synthesizer. Scoring uses an
    exact probability table only. Failures can be scripted for retry tests.
    """

    def __init__(
        self,
        fixtures_dir: Optional[Union[str, Path]] = None,
        handler: Optional[Callable[[GenRequest], Optional[str]]] = None,
        seed: int = 0,
        synthesize_on_miss: bool = False,
        backend_id: str = "mock",
    ):
        self.backend_id = backend_id
        self.handler = handler
        self.seed = seed
        self.synthesize_on_miss = synthesize_on_miss
        self._responses: dict[str, str] = {}
        self._scores: dict[str, float] = {}
        self._scripted_failures: list[Exception] = []
        self._lock = threading.Lock()
        self.calls = 0
        self.score_calls = 0
        if fixtures_dir is not None:
            self.load_fixtures(fixtures_dir)

    # -- fixtures ----------------------------------------------------------

    def load_fixtures(self, fixtures_dir: Union[str, Path]) -> int:
        """Load prompt-hash -> response records from a directory of JSON files."""
        n = 0
        for path in sorted(Path(fixtures_dir).glob("*.json")):
            rec = json.loads(path.read_text("utf-8"))
            if rec.get("kind") == "score":
                self._scores[self._score_key(rec["context"], rec["continuation"])] = float(
                    rec["logprob"]
                )
            else:
                self._responses[rec["key"]] = rec["text"]
            n += 1
        return n

    @staticmethod
    def fixture_key(req: GenRequest) -> str:
        return request_fingerprint("gen", req.payload())

    def add_response(self, req: GenRequest, text: str) -> None:
        self._responses[self.fixture_key(req)] = text

    @staticmethod
    def write_fixture(fixtures_dir: Union[str, Path], req: GenRequest, text: str) -> Path:
        """Persist one prompt-hash -> response record usable by load_fixtures."""
        key = MockBackend.fixture_key(req)
        path = Path(fixtures_dir) / f"{key}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps({"kind": "gen", "key": key, "text": text}), "utf-8")
        return path

    @staticmethod
    def _score_key(context: str, continuation: str) -> str:
        return request_fingerprint("score", {"context": context, "continuation": continuation})

    def add_score(
        self,
        context: str,
        continuation: str,
        prob: Optional[float] = None,
        logprob: Optional[float] = None,
    ) -> None:
        if (prob is None) == (logprob is None):
            raise ValueError("pass exactly one of prob or logprob")
        self._scores[self._score_key(context, continuation)] = (
            math.log(prob) if prob is not None else float(logprob)
        )

    def script_failure(self, exc: Exception, times: int = 1) -> None:
        """Make the next *times* complete() calls raise *exc*."""
        self._scripted_failures.extend([exc] * times)

    # -- backend protocol ---------------------------------------------------

    def complete(self, req: GenRequest) -> GenResponse:
        with self._lock:
            self.calls += 1
            if self._scripted_failures:
                raise self._scripted_failures.pop(0)
        text = self._responses.get(self.fixture_key(req))
        if text is None and self.handler is not None:
            text = self.handler(req)
        if text is None:
            if not self.synthesize_on_miss:
                raise MockMissError(
                    f"no fixture or handler response for request hash {self.fixture_key(req)}"
                )
            text = self._synthesize(req)
        prompt_tokens = sum(len(c.split()) for _, c in req.messages)
        return GenResponse(
            text=text,
            backend_id=self.backend_id,
            usage=Usage(prompt_tokens, len(text.split())),
        )

    def _synthesize(self, req: GenRequest) -> str:
        digest = request_fingerprint("synth", {"seed": self.seed, "req": req.payload()})
        return f"mock-output-{digest[:12]}"

    def score(self, req: ScoreRequest) -> float:
        with self._lock:
            self.score_calls += 1
        key = self._score_key(req.context, req.continuation)
        if key not in self._scores:
            raise ScoringUnsupportedError(
                "mock backend has no score table entry for this (context, continuation)"
            )
        return self._scores[key]


# ---------------------------------------------------------------------------
# Gateway
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RetryPolicy:
    """Exponential backoff with a cap; honors server retry hints."""

    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 8.0

    def delay(self, attempt: int) -> float:
        return min(self.backoff_cap, self.backoff_base * (2**attempt))


class Gateway:
    """Shared, thread-safe handle over one backend with cache, retries, and
    bounded concurrency (at most *concurrency* requests in flight)."""

    def __init__(
        self,
        backend,
        cache: Optional[ResponseCache] = None,
        retry: RetryPolicy = RetryPolicy(),
        concurrency: int = 4,
        sleep: Callable[[float], None] = time.sleep,
    ):
        if concurrency < 1:
            raise ValueError("concurrency must be >= 1")
        self.backend = backend
        self.cache = cache
        self.retry = retry
        self.concurrency = concurrency
        self._sleep = sleep
        self._semaphore = threading.BoundedSemaphore(concurrency)
        self.backend_calls = 0

    # -- internals ----------------------------------------------------------

    def _cache_key(self, kind: str, payload: dict) -> str:
        return request_fingerprint(kind, {"backend_id": self.backend.backend_id, **payload})

    def _call_with_retries(self, fn: Callable[[], object], what: str):
        attempts = 0
        while True:
            attempts += 1
            try:
                with self._semaphore:
                    self.backend_calls += 1
                    return fn()
            except GatewayError as exc:
                if not exc.retryable or attempts > self.retry.max_retries:
                    if isinstance(exc, BackendError):
                        exc.attempts = attempts
                    raise
                delay = self.retry.delay(attempts - 1)
                if isinstance(exc, RateLimitError) and exc.retry_after is not None:
                    delay = max(delay, exc.retry_after)
                log.warning("%s failed (attempt %d): %s; retrying in %.2fs", what, attempts, exc, delay)
                self._sleep(delay)

    # -- operations ----------------------------------------------------------

    def generate(self, req: GenRequest) -> GenResponse:
        """Run one generation request through cache, retries, and the backend."""
        key = self._cache_key("gen", req.payload())
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return GenResponse.from_record(cached)
        response = self._call_with_retries(lambda: self.backend.complete(req), "generate")
        if self.cache is not None:
            self.cache.put(key, response.to_record())
        return response

    def chat(
        self,
        model_id: str,
        user: str,
        system: Optional[str] = None,
        temperature: float = 0.0,
        max_tokens: int = 256,
        seed: Optional[int] = None,
    ) -> GenResponse:
        """Convenience single-turn generate()."""
        messages: tuple[tuple[str, str], ...] = (("user", user),)
        if system is not None:
            messages = (("system", system), ("user", user))
        return self.generate(
            GenRequest(
                model_id=model_id,
                messages=messages,
                temperature=temperature,
                max_tokens=max_tokens,
                seed=seed,
            )
        )

    def generate_many(
        self, requests: Sequence[GenRequest], return_exceptions: bool = False
    ) -> list:
        """Fan out requests under the concurrency bound, preserving order."""

        def run(req: GenRequest):
            try:
                return self.generate(req)
            except Exception as exc:
                if return_exceptions:
                    return exc
                raise

        if not requests:
            return []
        with ThreadPoolExecutor(max_workers=self.concurrency) as pool:
            return list(pool.map(run, requests))

    def score_continuation(self, req: ScoreRequest) -> float:
        """Sum of per-token logprobs of the continuation given the context."""
        key = self._cache_key("score", req.payload())
        if self.cache is not None:
            cached = self.cache.get(key)
            if cached is not None:
                return float(cached["logprob"])
        value = self._call_with_retries(lambda: self.backend.score(req), "score")
        if self.cache is not None:
            self.cache.put(key, {"logprob": value})
        return float(value)

    def cache_hit_rate(self) -> float:
        return self.cache.hit_rate() if self.cache is not None else 0.0


def answerability_weight(
    gateway: Gateway,
    model_id: str,
    query: str,
    document: str,
    rewritten: str,
    answer: str,
) -> float:
    """Relative answer probability under the rewritten vs. original document:
    exp(logP(answer | query, rewritten) - logP(answer | query, document))."""
    context_original = _score_context(query, document)
    context_rewritten = _score_context(query, rewritten)
    score_rewritten = gateway.score_continuation(
        ScoreRequest(model_id=model_id, context=context_rewritten, continuation=answer)
    )
    score_original = gateway.score_continuation(
        ScoreRequest(model_id=model_id, context=context_original, continuation=answer)
    )
    return math.exp(score_rewritten - score_original)


def _score_context(query: str, document: str) -> str:
    return f"Question: {query}\nDocument: {document}\nAnswer: "
