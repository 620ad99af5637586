"""Proof that masked positions cannot reach the loss.

Two checks on one forward/backward pass. First, the gradient of the loss
with respect to the logits must be exactly zero at every position that is
either weighted zero or owned by a non-assistant message. Second, replacing
the target tokens at those positions with random tokens must leave the loss
bit-identical: target substitution only touches which logit gets gathered,
so a changed loss means a masked target carried weight. A correct batch
passes both; a mask that marks an observation trainable fails with the
record and position named.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

from .data import SftBatch
from .model import TinyLm
from .objectives import masked_nll, token_logprobs
from .tokenizer import assistant_targets


@dataclass(frozen=True)
class MaskViolation:
    record: int
    position: int
    role: str
    weight: float
    reason: str  # "nonzero_logit_gradient" or "loss_changed_under_substitution"


@dataclass(frozen=True)
class MaskReport:
    ok: bool
    loss_original: float
    loss_substituted: float
    n_positions_checked: int
    violations: tuple[MaskViolation, ...]

    def to_json_dict(self) -> dict:
        return {
            "ok": self.ok,
            "loss_original": self.loss_original,
            "loss_substituted": self.loss_substituted,
            "n_positions_checked": self.n_positions_checked,
            "violations": [
                {
                    "record": v.record,
                    "position": v.position,
                    "role": v.role,
                    "weight": v.weight,
                    "reason": v.reason,
                }
                for v in self.violations
            ],
        }


def _position_roles(batch: SftBatch) -> list[list[str]]:
    """Role owning each target position, row by row; padding rows out with
    an empty role for positions past the sequence end."""
    width = batch.tokens.shape[1] - 1
    rows = []
    for ex in batch.examples:
        roles = []
        owners_is_assistant = assistant_targets(ex.enc)
        for pos in range(width):
            if pos < len(owners_is_assistant):
                roles.append("assistant" if owners_is_assistant[pos] else "observation")
            else:
                roles.append("")
        rows.append(roles)
    return rows


def verify_mask_gradients(model: TinyLm, batch: SftBatch, seed: int = 0) -> MaskReport:
    """Check the masking contract on one batch. Positions that must stay
    silent are those with zero weight plus, independently of the supplied
    weights, every position owned by a non-assistant message."""
    model.eval()
    role_rows = _position_roles(batch)
    silent = torch.zeros_like(batch.weights, dtype=torch.bool)
    for row, roles in enumerate(role_rows):
        for pos, role in enumerate(roles):
            if role != "assistant":
                silent[row, pos] = True
    silent |= batch.weights == 0.0

    logits = model(batch.tokens)
    logits.retain_grad()
    loss = masked_nll(logits, batch.tokens, batch.weights)
    loss.backward()

    violations: list[MaskViolation] = []
    grad = logits.grad[:, :-1, :]
    for row, pos in zip(*torch.nonzero(silent, as_tuple=True)):
        row, pos = int(row), int(pos)
        if grad[row, pos].abs().max().item() != 0.0:
            violations.append(
                MaskViolation(
                    record=batch.examples[row].record,
                    position=pos,
                    role=role_rows[row][pos],
                    weight=float(batch.weights[row, pos]),
                    reason="nonzero_logit_gradient",
                )
            )

    # Substitution pass: scramble targets at silent positions, reuse the
    # same logits, and compare weighted per-position contributions.
    g = torch.Generator()
    g.manual_seed(seed)
    substituted = batch.tokens.clone()
    targets = substituted[:, 1:]
    noise = torch.randint(0, 256, targets.shape, generator=g)
    noise = torch.where(noise == targets, (noise + 1) % 256, noise)
    targets[silent] = noise[silent]

    with torch.no_grad():
        nll_original = -token_logprobs(logits, batch.tokens)
        nll_substituted = -token_logprobs(logits, substituted)
        contrib_original = nll_original * batch.weights
        contrib_substituted = nll_substituted * batch.weights
        loss_original = contrib_original.sum() / batch.weights.sum()
        loss_substituted = contrib_substituted.sum() / batch.weights.sum()

    changed = (contrib_original != contrib_substituted) & silent
    for row, pos in zip(*torch.nonzero(changed, as_tuple=True)):
        row, pos = int(row), int(pos)
        violations.append(
            MaskViolation(
                record=batch.examples[row].record,
                position=pos,
                role=role_rows[row][pos],
                weight=float(batch.weights[row, pos]),
                reason="loss_changed_under_substitution",
            )
        )

    bitwise_equal = loss_original.item() == loss_substituted.item()
    return MaskReport(
        ok=bitwise_equal and not violations,
        loss_original=loss_original.item(),
        loss_substituted=loss_substituted.item(),
        n_positions_checked=int(silent.sum()),
        violations=tuple(violations),
    )
