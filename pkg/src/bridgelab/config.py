"""TOML configuration for backends, concurrency, retries, and caching."""

from __future__ import annotations

import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .gateway import API_KEY_ENV, Gateway, MockBackend, OpenAIBackend, ResponseCache, RetryPolicy

DEFAULT_CONFIG_NAME = "bridgelab.toml"


@dataclass(frozen=True)
class BackendConfig:
    type: str = "mock"
    base_url: str = ""
    api_key_env: str = API_KEY_ENV
    timeout: float = 60.0
    fixtures_dir: Optional[str] = None
    handler: Optional[str] = None
    seed: int = 0
    synthesize_on_miss: bool = False


@dataclass(frozen=True)
class GatewayConfig:
    concurrency: int = 4
    cache_path: Optional[str] = None
    max_retries: int = 3
    backoff_base: float = 0.5
    backoff_cap: float = 8.0


@dataclass(frozen=True)
class GenerationConfig:
    answer_max_tokens: int = 64
    rewrite_max_tokens: int = 1024
    temperature: float = 0.0


@dataclass(frozen=True)
class ToolkitConfig:
    backend: BackendConfig = field(default_factory=BackendConfig)
    gateway: GatewayConfig = field(default_factory=GatewayConfig)
    generation: GenerationConfig = field(default_factory=GenerationConfig)


def load_config(path: Optional[Union[str, Path]] = None) -> ToolkitConfig:
    """Load config from *path*, from ./bridgelab.toml, or fall back to defaults."""
    if path is None:
        candidate = Path(DEFAULT_CONFIG_NAME)
        if not candidate.exists():
            return ToolkitConfig()
        path = candidate
    with open(path, "rb") as f:
        data = tomllib.load(f)
    return ToolkitConfig(
        backend=BackendConfig(**data.get("backend", {})),
        gateway=GatewayConfig(**data.get("gateway", {})),
        generation=GenerationConfig(**data.get("generation", {})),
    )


def build_gateway(config: ToolkitConfig) -> Gateway:
    """Construct the configured backend and wrap it in a Gateway."""
    bc = config.backend
    if bc.type == "openai":
        if not bc.base_url:
            raise ValueError("backend.base_url is required for the openai backend type")
        backend = OpenAIBackend(
            base_url=bc.base_url,
            api_key=os.environ.get(bc.api_key_env),
            timeout=bc.timeout,
        )
    elif bc.type == "mock":
        handler = None
        if bc.handler is not None:
            from .synthetic import get_handler

            handler = get_handler(bc.handler)
        backend = MockBackend(
            fixtures_dir=bc.fixtures_dir,
            handler=handler,
            seed=bc.seed,
            synthesize_on_miss=bc.synthesize_on_miss,
        )
    else:
        raise ValueError(f"unknown backend type {bc.type!r}")

    gc = config.gateway
    cache = ResponseCache(gc.cache_path) if gc.cache_path else None
    return Gateway(
        backend,
        cache=cache,
        retry=RetryPolicy(
            max_retries=gc.max_retries,
            backoff_base=gc.backoff_base,
            backoff_cap=gc.backoff_cap,
        ),
        concurrency=gc.concurrency,
    )
