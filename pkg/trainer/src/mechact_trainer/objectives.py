"""Differentiable forms of the two training objectives.

The supervised loss is mean negative log-likelihood over weight-1 target
positions. The preference loss scores each dialogue by its policy-versus-
reference log-probability ratio against a reference point z0: desirable
samples are pulled up through a sigmoid from below, undesirable ones pushed
down from above. Scalar math runs in float64 so a batch agrees with the
dataset producer's reference implementation to near machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .data import DESIRABLE, UNDESIRABLE
from .errors import ConfigError


def token_logprobs(logits: torch.Tensor, tokens: torch.Tensor) -> torch.Tensor:
    """Log-probability of each next token: position i scores tokens[:, i+1]
    under logits[:, i]. Shapes [B, T, V] and [B, T] give [B, T-1]."""
    logp = torch.log_softmax(logits[:, :-1, :], dim=-1)
    return logp.gather(-1, tokens[:, 1:].unsqueeze(-1)).squeeze(-1)


def masked_nll(
    logits: torch.Tensor, tokens: torch.Tensor, weights: torch.Tensor
) -> torch.Tensor:
    """Weighted mean NLL over target positions. Weight-0 positions multiply
    through as exact zeros, so their targets cannot reach the loss."""
    if weights.sum() == 0:
        raise ConfigError("no trainable tokens in batch")
    nll = -token_logprobs(logits, tokens)
    return (nll * weights).sum() / weights.sum()


def sequence_logprobs(
    logits: torch.Tensor, tokens: torch.Tensor, weights: torch.Tensor
) -> torch.Tensor:
    """Per-sequence sum of target log-probabilities at weight-1 positions."""
    return (token_logprobs(logits, tokens) * weights).sum(dim=-1)


@dataclass(frozen=True)
class PrefLossParts:
    loss: torch.Tensor  # scalar, float64, differentiable
    values: torch.Tensor  # [B] per-sample values, float64
    z0: float


def preference_loss(
    logratios: torch.Tensor,
    labels: tuple[str, ...],
    beta: float,
    lambda_pos: float,
    lambda_neg: float,
    z0: float,
) -> PrefLossParts:
    """Mean over the batch of lambda_label minus the per-sample value.

    Values are -lambda_pos * sigmoid(beta * (z0 - r)) for desirable samples
    and +lambda_neg * sigmoid(beta * (z0 - r)) for undesirable ones, the
    same convention the dataset producer's scalar reference uses.
    """
    if logratios.dim() != 1 or logratios.shape[0] != len(labels):
        raise ConfigError("logratios and labels must align one to one")
    for label in labels:
        if label not in (DESIRABLE, UNDESIRABLE):
            raise ConfigError(f"unknown label {label!r}")
    r = logratios.double()
    s = torch.sigmoid(beta * (z0 - r))
    desirable = torch.tensor(
        [label == DESIRABLE for label in labels], dtype=torch.bool, device=r.device
    )
    values = torch.where(desirable, -lambda_pos * s, lambda_neg * s)
    lam = torch.where(
        desirable,
        torch.full_like(values, float(lambda_pos)),
        torch.full_like(values, float(lambda_neg)),
    )
    losses = lam - values
    return PrefLossParts(loss=losses.mean(), values=values, z0=z0)


def estimate_z0(mismatched_logratios: torch.Tensor) -> float:
    """Reference point from mismatched prompt/completion pairs: their mean
    logratio floored at zero. Detached by contract; the caller computes the
    inputs under no_grad."""
    if mismatched_logratios.numel() < 2:
        raise ConfigError("estimator needs mismatched pairs")
    return max(0.0, mismatched_logratios.double().mean().item())
