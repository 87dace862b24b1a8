"""Export and serving: the trained student behind an OpenAI-compatible
/chat/completions endpoint, plus the serving-descriptor file the evaluation
harness consumes ({"base_url": ..., "model_id": ...})."""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Union

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from .model import ArtifactError, greedy_decode, load_artifact


def export_student(
    artifact_path: Union[str, Path],
    base_url: str,
    model_id: str,
    descriptor_path: Union[str, Path],
) -> dict:
    """Write the serving descriptor for a trained artifact."""
    if not Path(artifact_path).exists():
        raise ArtifactError(f"model artifact not found: {artifact_path}")
    descriptor = {"base_url": base_url, "model_id": model_id}
    Path(descriptor_path).write_text(json.dumps(descriptor, indent=2), "utf-8")
    return descriptor


def load_descriptor(path: Union[str, Path]) -> dict:
    descriptor = json.loads(Path(path).read_text("utf-8"))
    for key in ("base_url", "model_id"):
        if key not in descriptor:
            raise ValueError(f"descriptor missing {key!r}")
    return descriptor


class ChatMessage(BaseModel):
    role: str
    content: str


class ChatRequest(BaseModel):
    model: str
    messages: list[ChatMessage]
    temperature: float = 0.0
    max_tokens: int = 512


def create_app(artifact_path: Union[str, Path], model_id: str = "bridgelab-student") -> FastAPI:
    model = load_artifact(artifact_path)
    app = FastAPI(title="bridgelab student rewriter")

    @app.post("/chat/completions")
    def chat_completions(req: ChatRequest) -> dict:
        if req.model != model_id:
            raise HTTPException(status_code=404, detail=f"unknown model {req.model!r}")
        if req.temperature != 0.0:
            raise HTTPException(status_code=400, detail="only temperature 0 is supported")
        user_messages = [m.content for m in req.messages if m.role == "user"]
        if not user_messages:
            raise HTTPException(status_code=400, detail="no user message")
        prompt = user_messages[-1]
        text = greedy_decode(model, prompt, max_new_tokens=req.max_tokens)
        return {
            "id": f"student-{int(time.time() * 1000)}",
            "object": "chat.completion",
            "model": model_id,
            "choices": [
                {
                    "index": 0,
                    "message": {"role": "assistant", "content": text},
                    "finish_reason": "stop",
                }
            ],
            "usage": {
                "prompt_tokens": len(prompt.encode("utf-8")),
                "completion_tokens": len(text.encode("utf-8")),
            },
        }

    return app
