"""A small byte-level causal transformer used as the student rewriter.

Byte-level tokenization keeps the vocabulary fixed (256 bytes plus the
BOS/SEP/EOS/PAD specials), so SFT and DPO stages never disagree about the
token space. Sequences are laid out as [BOS] prompt [SEP] target [EOS] and
losses are computed on the tokens after SEP only.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Union

import torch
import torch.nn as nn
import torch.nn.functional as F

BOS = 256
SEP = 257
EOS = 258
PAD = 259
VOCAB_SIZE = 260


def encode_text(text: str) -> list[int]:
    return list(text.encode("utf-8"))


def decode_bytes(ids: list[int]) -> str:
    return bytes(i for i in ids if i < 256).decode("utf-8", errors="replace")


def sequence_ids(prompt: str, completion: str) -> tuple[list[int], int]:
    """Full token sequence and the index of the first completion position.

    The returned boundary points at the SEP token's position + 1 in the
    input; predictions for positions >= boundary are the completion tokens
    (including EOS).
    """
    prompt_ids = encode_text(prompt)
    completion_ids = encode_text(completion)
    ids = [BOS] + prompt_ids + [SEP] + completion_ids + [EOS]
    boundary = len(prompt_ids) + 2  # BOS + prompt + SEP
    return ids, boundary


@dataclass(frozen=True)
class ModelSpec:
    """Architecture preset; "base model id" selects one of these."""

    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    d_ff: int = 256
    max_len: int = 2048
    dropout: float = 0.0  # zero keeps train/eval forwards identical


PRESETS = {
    "tiny-byte-lm": ModelSpec(),
    "small-byte-lm": ModelSpec(d_model=128, n_layers=4, d_ff=512),
}


class ByteLM(nn.Module):
    def __init__(self, spec: ModelSpec):
        super().__init__()
        self.spec = spec
        self.token_emb = nn.Embedding(VOCAB_SIZE, spec.d_model)
        self.pos_emb = nn.Embedding(spec.max_len, spec.d_model)
        layer = nn.TransformerEncoderLayer(
            d_model=spec.d_model,
            nhead=spec.n_heads,
            dim_feedforward=spec.d_ff,
            dropout=spec.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.blocks = nn.TransformerEncoder(
            layer, num_layers=spec.n_layers, enable_nested_tensor=False
        )
        self.norm = nn.LayerNorm(spec.d_model)
        self.head = nn.Linear(spec.d_model, VOCAB_SIZE, bias=False)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        if ids.shape[1] > self.spec.max_len:
            raise ValueError(f"sequence length {ids.shape[1]} exceeds max_len {self.spec.max_len}")
        positions = torch.arange(ids.shape[1], device=ids.device)
        x = self.token_emb(ids) + self.pos_emb(positions)[None, :, :]
        mask = nn.Transformer.generate_square_subsequent_mask(ids.shape[1], device=ids.device)
        x = self.blocks(x, mask=mask, is_causal=True)
        return self.head(self.norm(x))


def build_model(base_model: str, seed: int) -> ByteLM:
    if base_model not in PRESETS:
        raise ValueError(f"unknown base model {base_model!r}; known: {sorted(PRESETS)}")
    torch.manual_seed(seed)
    return ByteLM(PRESETS[base_model])


def completion_logprob(model: ByteLM, prompt: str, completion: str) -> torch.Tensor:
    """Total log-probability of the completion tokens (and EOS) given the prompt."""
    ids, boundary = sequence_ids(prompt, completion)
    tensor = torch.tensor([ids], dtype=torch.long)
    logits = model(tensor)[0]
    logprobs = F.log_softmax(logits, dim=-1)
    # Token at position t is predicted from position t-1.
    targets = tensor[0, boundary:]
    predicted_from = logprobs[boundary - 1 : len(ids) - 1]
    return predicted_from.gather(1, targets[:, None]).sum()


def per_token_nll(model: ByteLM, prompt: str, completion: str) -> float:
    ids, boundary = sequence_ids(prompt, completion)
    n_target = len(ids) - boundary
    with torch.no_grad():
        total = completion_logprob(model, prompt, completion)
    return float(-total / n_target)


@torch.no_grad()
def greedy_decode(model: ByteLM, prompt: str, max_new_tokens: int = 512) -> str:
    """Temperature-0 generation: argmax token by token until EOS."""
    model.eval()
    ids = [BOS] + encode_text(prompt) + [SEP]
    out: list[int] = []
    for _ in range(max_new_tokens):
        logits = model(torch.tensor([ids], dtype=torch.long))[0, -1]
        token = int(torch.argmax(logits).item())
        if token == EOS:
            break
        ids.append(token)
        out.append(token)
    return decode_bytes(out)


# ---------------------------------------------------------------------------
# Artifact persistence
# ---------------------------------------------------------------------------


class ArtifactError(FileNotFoundError):
    pass


def save_artifact(model: ByteLM, path: Union[str, Path], meta: dict | None = None) -> None:
    payload = {
        "spec": asdict(model.spec),
        "state": model.state_dict(),
        "meta": meta or {},
    }
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_artifact(path: Union[str, Path]) -> ByteLM:
    path = Path(path)
    if not path.exists():
        raise ArtifactError(f"model artifact not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = ByteLM(ModelSpec(**payload["spec"]))
    model.load_state_dict(payload["state"])
    model.eval()
    return model
