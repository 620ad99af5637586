"""Training objectives for the two fine-tuning stages.

Stage one is masked sequence NLL over assistant tokens only. Stage two is a
prospect-theoretic preference loss on whole dialogues: each sample is scored
by its policy-vs-reference log-probability ratio against a reference point
z0, desirable samples from below and undesirable ones from above.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np

from .errors import ConfigError, ValidationError

DESIRABLE = "desirable"
UNDESIRABLE = "undesirable"

Z0_SUPPLIED = "supplied"
Z0_BATCH_ESTIMATE = "batch_estimate"


def sigmoid(x: float) -> float:
    """Numerically stable logistic; never evaluates exp on a positive arg."""
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


# ---------------------------------------------------------------------------
# Masked sequence NLL


@dataclass(frozen=True)
class NllResult:
    sum_nll: float
    mean_nll: float
    n_trained_tokens: int


def imao_nll(logprobs: Sequence[float], mask: Sequence[int]) -> NllResult:
    """Negative log-likelihood summed over mask-1 tokens, with the mean per
    trained token. Mask-0 tokens (prompt, tool output) contribute nothing."""
    lp = np.asarray(logprobs, dtype=float)
    mk = np.asarray(mask)
    if lp.ndim != 1 or mk.shape != lp.shape:
        raise ValidationError("logprobs and mask must be equal-length 1-d sequences")
    if lp.size and not np.isfinite(lp).all():
        raise ValidationError("logprobs must be finite")
    if lp.size and (lp > 0).any():
        raise ValidationError("logprobs must be <= 0")
    if mk.size and not np.isin(mk, (0, 1)).all():
        raise ValidationError("mask values must be 0 or 1")
    n_trained = int(mk.sum())
    if n_trained == 0:
        raise ValidationError("no trainable tokens")
    total = float(-(lp * mk).sum())
    return NllResult(sum_nll=total, mean_nll=total / n_trained, n_trained_tokens=n_trained)


# ---------------------------------------------------------------------------
# Preference loss


@dataclass(frozen=True)
class ScoredTrajectory:
    """Sequence log-probabilities of one dialogue under the policy and the
    frozen reference, with its preference label."""

    logp_policy: float
    logp_ref: float
    label: str

    def __post_init__(self):
        for name, value in (("logp_policy", self.logp_policy), ("logp_ref", self.logp_ref)):
            if not math.isfinite(value):
                raise ValidationError(f"{name} must be finite")
        if self.label not in (DESIRABLE, UNDESIRABLE):
            raise ValidationError(f"unknown preference label {self.label!r}")

    @property
    def logratio(self) -> float:
        return self.logp_policy - self.logp_ref


@dataclass(frozen=True)
class KtoConfig:
    beta: float = 0.1
    lambda_pos: float = 1.0
    lambda_neg: float = 1.0
    z0_mode: str = Z0_SUPPLIED
    z0: float = 0.0

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta > 0):
            raise ConfigError("beta must be positive")
        for name, value in (("lambda_pos", self.lambda_pos), ("lambda_neg", self.lambda_neg)):
            if not (math.isfinite(value) and value > 0):
                raise ConfigError(f"{name} must be positive")
        if self.z0_mode not in (Z0_SUPPLIED, Z0_BATCH_ESTIMATE):
            raise ConfigError(f"unknown z0_mode {self.z0_mode!r}")
        if not math.isfinite(self.z0) or self.z0 < 0:
            raise ConfigError("z0 must be finite and non-negative")


def estimate_z0(batch: Sequence[ScoredTrajectory]) -> float:
    """Reference point z0: mean policy/reference logratio over completions
    scored against shifted (mismatched) prompts, floored at zero. Detached
    from any gradient flow by contract."""
    scored = list(batch)
    if len(scored) < 2:
        raise ValidationError("estimator needs mismatched pairs")
    return max(0.0, math.fsum(s.logratio for s in scored) / len(scored))


def kto_value(scored: ScoredTrajectory, z0: float, config: KtoConfig) -> float:
    """Per-sample value. Desirable samples approach 0 from below as their
    logratio clears z0; undesirable ones approach 0 from above as theirs
    falls below it."""
    s = sigmoid(config.beta * (z0 - scored.logratio))
    if scored.label == DESIRABLE:
        return -config.lambda_pos * s
    return config.lambda_neg * s


@dataclass(frozen=True)
class KtoSample:
    label: str
    logratio: float
    value: float
    loss: float


@dataclass(frozen=True)
class KtoLossResult:
    loss: float
    z0_used: float
    per_sample: tuple[KtoSample, ...]

    def to_json_dict(self) -> dict:
        return {
            "loss": self.loss,
            "z0_used": self.z0_used,
            "per_sample": [
                {"label": s.label, "logratio": s.logratio, "value": s.value, "loss": s.loss}
                for s in self.per_sample
            ],
        }


def kto_loss(
    batch: Sequence[ScoredTrajectory],
    config: KtoConfig,
    mismatched: Sequence[ScoredTrajectory] | None = None,
) -> KtoLossResult:
    """Mean over the batch of lambda_label - value.

    Per-sample losses live in (lambda_pos, 2*lambda_pos) for desirable
    samples and (0, lambda_neg) for undesirable ones. In batch_estimate
    mode the caller supplies a mismatched-pair batch scored alongside this
    one; in supplied mode config.z0 is used as-is.
    """
    samples_in = list(batch)
    if not samples_in:
        raise ValidationError("empty batch")
    if config.z0_mode == Z0_SUPPLIED:
        z0 = config.z0
    else:
        if mismatched is None:
            raise ConfigError("batch_estimate mode needs a mismatched batch")
        z0 = estimate_z0(mismatched)
    per_sample = []
    for scored in samples_in:
        value = kto_value(scored, z0, config)
        lam = config.lambda_pos if scored.label == DESIRABLE else config.lambda_neg
        per_sample.append(
            KtoSample(label=scored.label, logratio=scored.logratio, value=value, loss=lam - value)
        )
    loss = math.fsum(s.loss for s in per_sample) / len(per_sample)
    return KtoLossResult(loss=loss, z0_used=z0, per_sample=tuple(per_sample))


def suggested_weight_ratio(n_desirable: int, n_undesirable: int) -> Fraction | None:
    """Exact lambda_pos / lambda_neg putting the weighted class masses at
    4:3 (desirable:undesirable). None when a class is empty."""
    if n_desirable <= 0 or n_undesirable <= 0:
        return None
    return Fraction(4 * n_undesirable, 3 * n_desirable)


def lambda_from_counts(
    n_desirable: int, n_undesirable: int, lambda_neg: float | Fraction = 1.0
):
    """Concrete (lambda_pos, lambda_neg) pair for the 4:3 balance. Exact
    when given a Fraction base weight."""
    ratio = suggested_weight_ratio(n_desirable, n_undesirable)
    if ratio is None:
        raise ValidationError("both preference classes must be non-empty")
    return (ratio * lambda_neg, lambda_neg)
