"""JSONL record loading for the trainer.

The schemas are the toolkit's export contracts:
  SFT: {"id": str, "prompt": str, "target": str, "meta": {...}}
  DPO: {"id": str, "prompt": str, "chosen": str, "rejected": str, "meta": {...}}
Schema violations abort before any training starts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Union


class SchemaError(ValueError):
    """A record does not satisfy the expected JSONL schema."""


@dataclass(frozen=True)
class SftExample:
    id: str
    prompt: str
    target: str


@dataclass(frozen=True)
class DpoExample:
    id: str
    prompt: str
    chosen: str
    rejected: str


def _rows(path: Union[str, Path]):
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                yield lineno, json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"{path}:{lineno}: invalid JSON: {exc}") from exc


def _require_str(row: dict, key: str, path, lineno: int) -> str:
    value = row.get(key)
    if not isinstance(value, str) or not value:
        raise SchemaError(f"{path}:{lineno}: field {key!r} must be a non-empty string")
    return value


def load_sft(path: Union[str, Path]) -> list[SftExample]:
    examples = []
    for lineno, row in _rows(path):
        examples.append(
            SftExample(
                id=_require_str(row, "id", path, lineno),
                prompt=_require_str(row, "prompt", path, lineno),
                target=_require_str(row, "target", path, lineno),
            )
        )
    if not examples:
        raise SchemaError(f"{path}: no records")
    return examples


def load_dpo(path: Union[str, Path]) -> list[DpoExample]:
    examples = []
    for lineno, row in _rows(path):
        chosen = _require_str(row, "chosen", path, lineno)
        rejected = _require_str(row, "rejected", path, lineno)
        if chosen == rejected:
            raise SchemaError(f"{path}:{lineno}: chosen equals rejected")
        examples.append(
            DpoExample(
                id=_require_str(row, "id", path, lineno),
                prompt=_require_str(row, "prompt", path, lineno),
                chosen=chosen,
                rejected=rejected,
            )
        )
    if not examples:
        raise SchemaError(f"{path}: no records")
    return examples
