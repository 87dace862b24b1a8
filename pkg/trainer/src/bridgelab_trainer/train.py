"""SFT and DPO training loops for the student rewriter.

SFT minimizes the mean negative log-likelihood of target tokens given the
prompt (prompt tokens carry no loss). DPO then optimizes
-log sigmoid(beta * [(log pi(chosen) - log ref(chosen)) -
(log pi(rejected) - log ref(rejected))]) against a frozen reference model
whose logprobs are precomputed once per dataset.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import torch
import torch.nn.functional as F

from .data import DpoExample, SftExample
from .model import ByteLM, build_model, completion_logprob, load_artifact, save_artifact, sequence_ids

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; training aborted with diagnostics."""


@dataclass(frozen=True)
class TrainConfig:
    base_model: str = "tiny-byte-lm"
    learning_rate: float = 3e-3
    epochs: int = 50
    batch_size: int = 8
    beta: float = 0.1
    seed: int = 0
    output_path: str = "student.pt"
    target_loss: Optional[float] = None  # early stop on mean per-token NLL

    def __post_init__(self) -> None:
        if self.beta <= 0:
            raise ValueError("beta must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be >= 1")


@dataclass
class TrainResult:
    artifact_path: Path
    epoch_losses: list[float]

    @property
    def final_loss(self) -> float:
        return self.epoch_losses[-1]


def _check_finite(loss: torch.Tensor, step: str) -> None:
    if not torch.isfinite(loss):
        raise TrainingDiverged(f"non-finite loss at {step}: {loss.item()!r}")


def _batches(items: Sequence, size: int):
    for i in range(0, len(items), size):
        yield items[i : i + size]


def sft_batch_loss(model: ByteLM, batch: Sequence[SftExample]) -> tuple[torch.Tensor, int]:
    """Mean per-token NLL of target tokens across the batch, with token count."""
    total = model.token_emb.weight.new_zeros(())
    n_tokens = 0
    for ex in batch:
        ids, boundary = sequence_ids(ex.prompt, ex.target)
        total = total - completion_logprob(model, ex.prompt, ex.target)
        n_tokens += len(ids) - boundary
    return total / n_tokens, n_tokens


def train_sft(
    records: Sequence[SftExample], config: TrainConfig, model: Optional[ByteLM] = None
) -> TrainResult:
    """Fine-tune (or train from scratch) on prompt->target records."""
    torch.manual_seed(config.seed)
    if model is None:
        model = build_model(config.base_model, seed=config.seed)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=config.learning_rate)
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        epoch_total = 0.0
        epoch_tokens = 0
        for batch in _batches(records, config.batch_size):
            optimizer.zero_grad()
            loss, weight = sft_batch_loss(model, batch)
            _check_finite(loss, f"epoch {epoch}")
            loss.backward()
            optimizer.step()
            epoch_total += float(loss.detach()) * weight
            epoch_tokens += weight
        epoch_loss = epoch_total / epoch_tokens
        epoch_losses.append(epoch_loss)
        log.info("sft epoch %d: per-token loss %.4f", epoch, epoch_loss)
        if config.target_loss is not None and epoch_loss < config.target_loss:
            break
    save_artifact(model, config.output_path, meta={"stage": "sft", "seed": config.seed})
    return TrainResult(artifact_path=Path(config.output_path), epoch_losses=epoch_losses)


# ---------------------------------------------------------------------------
# DPO
# ---------------------------------------------------------------------------


def reference_logprobs(model: ByteLM, records: Sequence[DpoExample]) -> list[tuple[float, float]]:
    """Frozen-reference logprobs of (chosen, rejected), precomputed once.

    Computed in grad mode (then detached) so the kernels match the policy's
    training forward exactly; the inference fast path has slightly different
    numerics, which would shift the init-time logit away from zero.
    """
    out = []
    for ex in records:
        out.append(
            (
                float(completion_logprob(model, ex.prompt, ex.chosen).detach()),
                float(completion_logprob(model, ex.prompt, ex.rejected).detach()),
            )
        )
    return out


def dpo_pair_logit(
    policy: ByteLM, ex: DpoExample, ref_chosen: float, ref_rejected: float
) -> torch.Tensor:
    """(log pi - log ref) margin between chosen and rejected."""
    delta_chosen = completion_logprob(policy, ex.prompt, ex.chosen) - ref_chosen
    delta_rejected = completion_logprob(policy, ex.prompt, ex.rejected) - ref_rejected
    return delta_chosen - delta_rejected


def dpo_pair_losses(
    policy: ByteLM,
    records: Sequence[DpoExample],
    refs: Sequence[tuple[float, float]],
    beta: float,
) -> torch.Tensor:
    """Per-pair -log sigmoid(beta * logit) as one tensor."""
    losses = []
    for ex, (ref_c, ref_r) in zip(records, refs):
        logit = dpo_pair_logit(policy, ex, ref_c, ref_r)
        losses.append(F.softplus(-beta * logit))
    return torch.stack(losses)


def train_dpo(
    records: Sequence[DpoExample],
    reference_artifact: Union[str, Path],
    config: TrainConfig,
) -> TrainResult:
    """Preference-optimize the SFT model against its frozen copy."""
    torch.manual_seed(config.seed)
    reference = load_artifact(reference_artifact)
    policy = copy.deepcopy(reference)
    for p in reference.parameters():
        p.requires_grad_(False)
    for p in policy.parameters():
        p.requires_grad_(True)
    policy.train()

    refs = reference_logprobs(reference, records)
    with torch.no_grad():
        initial = dpo_pair_losses(policy, records, refs, config.beta).mean()
    log.info("dpo initial mean loss %.6f (ln 2 = %.6f)", float(initial), math.log(2))

    optimizer = torch.optim.Adam(policy.parameters(), lr=config.learning_rate)
    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        epoch_total = 0.0
        for batch_idx in _batches(list(range(len(records))), config.batch_size):
            optimizer.zero_grad()
            batch = [records[i] for i in batch_idx]
            batch_refs = [refs[i] for i in batch_idx]
            loss = dpo_pair_losses(policy, batch, batch_refs, config.beta).mean()
            _check_finite(loss, f"epoch {epoch}")
            loss.backward()
            optimizer.step()
            epoch_total += float(loss.detach()) * len(batch)
        epoch_loss = epoch_total / len(records)
        epoch_losses.append(epoch_loss)
        log.info("dpo epoch %d: mean pair loss %.4f", epoch, epoch_loss)
    save_artifact(policy, config.output_path, meta={"stage": "dpo", "seed": config.seed})
    return TrainResult(artifact_path=Path(config.output_path), epoch_losses=epoch_losses)
