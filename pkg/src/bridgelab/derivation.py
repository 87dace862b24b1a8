"""Exact verification of the bridging objective's probabilistic identities on
small enumerable worlds.

A ToyWorld pins down finite distributions P(d'|q,d) (prior over rewrites),
P(a|q,d') (answer likelihood per rewrite), and P(a|q,d) (the baseline,
normally the exact marginal of the first two). On such worlds the
factorization of the observable joint, the rewrite posterior, and the
importance-sampling form of the objective are exact algebra, so residuals
are asserted at 1e-12; Monte-Carlo estimates carry statistical tolerances
only. Probabilities are double precision throughout, with the 0*log(0) = 0
convention for vanishing-likelihood terms.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

ATOL = 1e-12


class DomainError(ValueError):
    """Raised for conditioning on an answer with zero baseline probability."""


@dataclass(frozen=True)
class ToyWorld:
    """Fully enumerable rewrite/answer distributions for one (q, d) context.

    likelihood[i, j] = P(answers[j] | q, rewrites[i]); prior[i] =
    P(rewrites[i] | q, d); baseline[j] = P(answers[j] | q, d).
    """

    answers: tuple[str, ...]
    rewrites: tuple[str, ...]
    prior: np.ndarray
    likelihood: np.ndarray
    baseline: np.ndarray

    def validate(self, atol: float = ATOL) -> None:
        d, a = len(self.rewrites), len(self.answers)
        if self.prior.shape != (d,) or self.likelihood.shape != (d, a) or self.baseline.shape != (a,):
            raise ValueError("table shapes do not match answer/rewrite labels")
        for name, table in (("prior", self.prior), ("likelihood", self.likelihood), ("baseline", self.baseline)):
            if np.any(table < 0):
                raise ValueError(f"{name} has negative entries")
        if abs(self.prior.sum() - 1.0) > atol:
            raise ValueError(f"prior sums to {self.prior.sum()!r}")
        if abs(self.baseline.sum() - 1.0) > atol:
            raise ValueError(f"baseline sums to {self.baseline.sum()!r}")
        row_err = np.max(np.abs(self.likelihood.sum(axis=1) - 1.0))
        if row_err > atol:
            raise ValueError(f"likelihood rows deviate from 1 by {row_err}")
        marginal_err = np.max(np.abs(self.baseline - self.prior @ self.likelihood))
        if marginal_err > atol:
            raise ValueError(f"baseline deviates from the marginal by {marginal_err}")

    def answer_index(self, answer: Union[str, int]) -> int:
        if isinstance(answer, (int, np.integer)):
            if not 0 <= answer < len(self.answers):
                raise IndexError(f"answer index {answer} out of range")
            return int(answer)
        return self.answers.index(answer)

    def to_dict(self) -> dict:
        return {
            "answers": list(self.answers),
            "rewrites": list(self.rewrites),
            "prior": self.prior.tolist(),
            "likelihood": self.likelihood.tolist(),
            "baseline": self.baseline.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ToyWorld":
        world = cls(
            answers=tuple(data["answers"]),
            rewrites=tuple(data["rewrites"]),
            prior=np.asarray(data["prior"], dtype=float),
            likelihood=np.asarray(data["likelihood"], dtype=float),
            baseline=np.asarray(data["baseline"], dtype=float),
        )
        world.validate()
        return world


def make_world(
    prior: Sequence[float],
    likelihood: Sequence[Sequence[float]],
    answers: Optional[Sequence[str]] = None,
    rewrites: Optional[Sequence[str]] = None,
) -> ToyWorld:
    """Build a validated world; the baseline is the exact marginal."""
    prior_arr = np.asarray(prior, dtype=float)
    like_arr = np.asarray(likelihood, dtype=float)
    n_rewrites, n_answers = like_arr.shape
    world = ToyWorld(
        answers=tuple(answers) if answers is not None else tuple(f"a{j}" for j in range(n_answers)),
        rewrites=tuple(rewrites) if rewrites is not None else tuple(f"r{i}" for i in range(n_rewrites)),
        prior=prior_arr,
        likelihood=like_arr,
        baseline=prior_arr @ like_arr,
    )
    world.validate()
    return world


def random_world(
    seed_or_rng: Union[int, np.random.Generator],
    n_answers: Optional[int] = None,
    n_rewrites: Optional[int] = None,
    min_size: int = 2,
    max_size: int = 8,
) -> ToyWorld:
    """Seeded random world: uniform positive draws normalized per row, so
    every distribution has full support."""
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    if n_answers is None:
        n_answers = int(rng.integers(min_size, max_size + 1))
    if n_rewrites is None:
        n_rewrites = int(rng.integers(min_size, max_size + 1))
    prior = rng.uniform(0.05, 1.0, size=n_rewrites)
    prior /= prior.sum()
    likelihood = rng.uniform(0.05, 1.0, size=(n_rewrites, n_answers))
    likelihood /= likelihood.sum(axis=1, keepdims=True)
    return make_world(prior, likelihood)


# ---------------------------------------------------------------------------
# The identities
# ---------------------------------------------------------------------------


def ideal_rewrite_posterior(world: ToyWorld, answer: Union[str, int]) -> np.ndarray:
    """P(d' | q, d, answer) = P(answer|q,d') P(d'|q,d) / P(answer|q,d)."""
    j = world.answer_index(answer)
    b = world.baseline[j]
    if b <= 0.0:
        raise DomainError(f"answer {world.answers[j]!r} has zero baseline probability")
    posterior = world.likelihood[:, j] * world.prior / b
    if abs(posterior.sum() - 1.0) > ATOL:
        raise ValueError(
            f"posterior normalization off by {abs(posterior.sum() - 1.0)}; "
            "world baseline is inconsistent with its tables"
        )
    return posterior


def check_factorization(world: ToyWorld) -> float:
    """Max residual of |joint - renormalized_posterior * stored_baseline|.

    The joint is likelihood * prior; the posterior here is renormalized
    column-wise from the joint itself, so the residual is zero exactly when
    the stored baseline matches the true marginal.
    """
    joint = world.prior[:, None] * world.likelihood
    residual = 0.0
    for j in range(len(world.answers)):
        column = joint[:, j]
        marginal = column.sum()
        if marginal <= 0.0:
            continue
        reconstructed = (column / marginal) * world.baseline[j]
        residual = max(residual, float(np.max(np.abs(column - reconstructed))))
    return residual


@dataclass(frozen=True)
class ImportanceCheck:
    """Both sides of the importance-sampling identity and their gap."""

    lhs: float
    rhs: float
    discrepancy: float


def check_importance_identity(world: ToyWorld, answer: Union[str, int]) -> ImportanceCheck:
    """Exact enumeration of E_posterior[log P(a|q,d')] and its reweighted
    prior form E_prior[(P(a|q,d')/P(a|q,d)) log P(a|q,d')].

    Terms with vanishing likelihood contribute 0 on both sides (the zero
    weight annihilates the divergent log).
    """
    j = world.answer_index(answer)
    b = world.baseline[j]
    if b <= 0.0:
        raise DomainError(f"answer {world.answers[j]!r} has zero baseline probability")
    like = world.likelihood[:, j]
    posterior = ideal_rewrite_posterior(world, j)

    lhs = 0.0
    for p, l in zip(posterior, like):
        if p > 0.0:
            lhs += p * math.log(l)
    rhs = 0.0
    for prior_i, l in zip(world.prior, like):
        if l > 0.0 and prior_i > 0.0:
            rhs += prior_i * (l / b) * math.log(l)
    return ImportanceCheck(lhs=lhs, rhs=rhs, discrepancy=abs(lhs - rhs))


@dataclass(frozen=True)
class McEstimate:
    """Monte-Carlo estimate of the reweighted objective with its standard error."""

    value: float
    stderr: float
    n_samples: int


def monte_carlo_objective(
    world: ToyWorld, answer: Union[str, int], n_samples: int, seed: int
) -> McEstimate:
    """Unbiased sampling form of the reweighted objective: draw d' from the
    prior and average (P(a|q,d')/P(a|q,d)) log P(a|q,d')."""
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    j = world.answer_index(answer)
    b = world.baseline[j]
    if b <= 0.0:
        raise DomainError(f"answer {world.answers[j]!r} has zero baseline probability")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(world.rewrites), size=n_samples, p=world.prior)
    # Group identical draws: the sample mean over per-outcome terms weighted
    # by empirical frequency. A deterministic prior then yields the exact
    # enumerated value with zero standard error.
    counts = np.bincount(idx, minlength=len(world.rewrites)).astype(float)
    like = world.likelihood[:, j]
    safe = np.where(like > 0.0, like, 1.0)
    terms = np.where(like > 0.0, (like / b) * np.log(safe), 0.0)
    weights = counts / n_samples
    value = float(weights @ terms)
    if n_samples > 1:
        variance = float(counts @ (terms - value) ** 2) / (n_samples - 1)
        stderr = math.sqrt(max(variance, 0.0) / n_samples)
    else:
        stderr = 0.0
    return McEstimate(value=value, stderr=stderr, n_samples=n_samples)


# ---------------------------------------------------------------------------
# Sufficiency-assumption gap
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SufficiencyWorld:
    """A ToyWorld extended with the full conditional P(a | q, d', d)."""

    world: ToyWorld
    conditional: np.ndarray

    def validate(self, atol: float = ATOL) -> None:
        self.world.validate(atol)
        if self.conditional.shape != self.world.likelihood.shape:
            raise ValueError("conditional table shape mismatch")
        if np.any(self.conditional < 0):
            raise ValueError("conditional has negative entries")
        row_err = np.max(np.abs(self.conditional.sum(axis=1) - 1.0))
        if row_err > atol:
            raise ValueError(f"conditional rows deviate from 1 by {row_err}")


@dataclass(frozen=True)
class SufficiencyReport:
    """Worst-case conditional gap and the posterior error it induces."""

    gap: float
    posterior_error: float


def sufficiency_gap(sworld: SufficiencyWorld) -> SufficiencyReport:
    """Max |P(a|q,d',d) - P(a|q,d')| over all cells, plus the exact induced
    deviation of the rewrite posterior when the sufficiency shortcut is used
    in place of the full conditional."""
    world = sworld.world
    gap = float(np.max(np.abs(sworld.conditional - world.likelihood)))

    posterior_error = 0.0
    for j in range(len(world.answers)):
        joint_true = sworld.conditional[:, j] * world.prior
        joint_approx = world.likelihood[:, j] * world.prior
        m_true, m_approx = joint_true.sum(), joint_approx.sum()
        if m_true <= 0.0 or m_approx <= 0.0:
            continue
        deviation = float(np.max(np.abs(joint_true / m_true - joint_approx / m_approx)))
        posterior_error = max(posterior_error, deviation)
    return SufficiencyReport(gap=gap, posterior_error=posterior_error)


# ---------------------------------------------------------------------------
# Batch verification (CLI surface) and world persistence
# ---------------------------------------------------------------------------


def verify_worlds(n_worlds: int, seed: int, max_size: int = 8) -> dict:
    """Check the factorization and importance identities on seeded random
    worlds; returns residual statistics for reporting."""
    rng = np.random.default_rng(seed)
    max_factorization = 0.0
    max_importance = 0.0
    max_posterior_norm = 0.0
    checks = 0
    for _ in range(n_worlds):
        world = random_world(rng, max_size=max_size)
        max_factorization = max(max_factorization, check_factorization(world))
        for j in range(len(world.answers)):
            if world.baseline[j] <= 0.0:
                continue
            result = check_importance_identity(world, j)
            max_importance = max(max_importance, result.discrepancy)
            posterior = ideal_rewrite_posterior(world, j)
            max_posterior_norm = max(max_posterior_norm, abs(float(posterior.sum()) - 1.0))
            checks += 1
    return {
        "worlds": n_worlds,
        "seed": seed,
        "answer_checks": checks,
        "max_factorization_residual": max_factorization,
        "max_importance_discrepancy": max_importance,
        "max_posterior_normalization_error": max_posterior_norm,
        "tolerance": ATOL,
        "passed": bool(
            max_factorization <= ATOL
            and max_importance <= ATOL
            and max_posterior_norm <= ATOL
        ),
    }


def save_world(world: ToyWorld, path: Union[str, Path]) -> None:
    Path(path).write_text(json.dumps(world.to_dict(), indent=2), "utf-8")


def load_world(path: Union[str, Path]) -> ToyWorld:
    return ToyWorld.from_dict(json.loads(Path(path).read_text("utf-8")))
