"""The two training runs: supervised with masked loss, then preference.

Both phases share the optimizer stack (AdamW, cosine schedule with warmup,
gradient clipping at 1.0) and write the same artifacts: a checkpoint plus a
metrics JSON holding the full loss curve. Runs are seeded end to end, so
the same config on the same file reproduces the same curve.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import torch
from torch.optim import AdamW
from torch.optim.lr_scheduler import LambdaLR

from .config import PHASE_IMAO, PHASE_MAAO, TrainConfig, Z0_SUPPLIED, lambda_scale
from .data import (
    DESIRABLE,
    UNDESIRABLE,
    collate_mismatched,
    collate_pref,
    collate_sft,
    load_pref_dataset,
    load_sft_dataset,
)
from .errors import ConfigError
from .model import ModelConfig, TinyLm, build_model, preset
from .objectives import (
    estimate_z0,
    masked_nll,
    preference_loss,
    sequence_logprobs,
    token_logprobs,
)

METRICS_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class BatchTrace:
    """Per-step record of what the preference loss actually saw, kept so a
    run can be cross-checked sample by sample against the scalar reference."""

    loss: float
    z0: float
    samples: tuple[tuple[float, float, str], ...]  # (logp_policy, logp_ref, label)


@dataclass(frozen=True)
class ImaoResult:
    initial_loss: float
    final_loss: float
    epoch_losses: tuple[float, ...]  # full-dataset eval, index 0 before training
    step_losses: tuple[float, ...]
    n_records: int
    n_steps: int
    checkpoint_path: Path
    metrics_path: Path


@dataclass(frozen=True)
class MaaoResult:
    step_losses: tuple[float, ...]
    epoch_mean_losses: tuple[float, ...]
    batch_traces: tuple[BatchTrace, ...]
    mean_logratio_desirable: float | None
    mean_logratio_undesirable: float | None
    logratio_gap: float | None
    lambda_pos: float
    lambda_neg: float
    n_records: int
    n_steps: int
    checkpoint_path: Path
    metrics_path: Path


def make_scheduler(optimizer, total_steps: int, warmup_ratio: float) -> LambdaLR:
    """Linear warmup into a cosine decay toward zero."""
    warmup = max(1, round(warmup_ratio * total_steps))

    def factor(step: int) -> float:
        if step < warmup:
            return (step + 1) / warmup
        progress = (step - warmup) / max(1, total_steps - warmup)
        return 0.5 * (1.0 + math.cos(math.pi * progress))

    return LambdaLR(optimizer, factor)


def _epoch_order(n: int, seed: int, epoch: int) -> list[int]:
    g = torch.Generator()
    g.manual_seed(seed * 100003 + epoch)
    return torch.randperm(n, generator=g).tolist()


def _chunks(order: list[int], size: int):
    for start in range(0, len(order), size):
        yield order[start : start + size]


def save_checkpoint(model: TinyLm, phase: str, out_dir: Path) -> Path:
    path = out_dir / "checkpoint.pt"
    torch.save(
        {
            "phase": phase,
            "model_config": model.config.to_json_dict(),
            "state_dict": model.state_dict(),
        },
        path,
    )
    return path


def load_checkpoint(path: str | Path) -> TinyLm:
    payload = torch.load(path, map_location="cpu", weights_only=True)
    model = TinyLm(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    return model


def _write_metrics(out_dir: Path, payload: dict) -> Path:
    path = out_dir / "metrics.json"
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
    return path


def evaluate_sft_loss(model: TinyLm, examples, batch_size: int) -> float:
    """Full-dataset weighted mean NLL, one number per eval pass."""
    model.eval()
    total_nll = 0.0
    total_weight = 0.0
    with torch.no_grad():
        for idx in _chunks(list(range(len(examples))), batch_size):
            batch = collate_sft([examples[i] for i in idx])
            nll = -token_logprobs(model(batch.tokens), batch.tokens)
            total_nll += float((nll * batch.weights).sum().double())
            total_weight += float(batch.weights.sum().double())
    model.train()
    return total_nll / total_weight


def train_imao(data_path: str | Path, config: TrainConfig, out_dir: str | Path) -> ImaoResult:
    """Supervised run over masked dialogue records."""
    if config.phase != PHASE_IMAO:
        raise ConfigError(f"train_imao got a {config.phase!r} config")
    model_config = preset(config.model_preset)
    examples = load_sft_dataset(data_path, model_config.max_seq_len)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    model = build_model(model_config, config.seed)
    optimizer = AdamW(model.parameters(), lr=config.learning_rate, weight_decay=0.0)
    steps_per_epoch = math.ceil(len(examples) / config.batch_size)
    scheduler = make_scheduler(optimizer, config.epochs * steps_per_epoch, config.warmup_ratio)

    epoch_losses = [evaluate_sft_loss(model, examples, config.batch_size)]
    step_losses: list[float] = []
    for epoch in range(config.epochs):
        for idx in _chunks(_epoch_order(len(examples), config.seed, epoch), config.batch_size):
            batch = collate_sft([examples[i] for i in idx])
            loss = masked_nll(model(batch.tokens), batch.tokens, batch.weights)
            optimizer.zero_grad()
            loss.backward()
            torch.nn.utils.clip_grad_norm_(model.parameters(), 1.0)
            optimizer.step()
            scheduler.step()
            step_losses.append(loss.item())
        epoch_losses.append(evaluate_sft_loss(model, examples, config.batch_size))

    checkpoint = save_checkpoint(model, PHASE_IMAO, out)
    metrics = _write_metrics(
        out,
        {
            "schema_version": METRICS_SCHEMA_VERSION,
            "phase": PHASE_IMAO,
            "n_records": len(examples),
            "n_steps": len(step_losses),
            "initial_loss": epoch_losses[0],
            "final_loss": epoch_losses[-1],
            "epoch_losses": epoch_losses,
            "step_losses": step_losses,
            "config": config.to_json_dict(),
            "model": model_config.to_json_dict(),
        },
    )
    return ImaoResult(
        initial_loss=epoch_losses[0],
        final_loss=epoch_losses[-1],
        epoch_losses=tuple(epoch_losses),
        step_losses=tuple(step_losses),
        n_records=len(examples),
        n_steps=len(step_losses),
        checkpoint_path=checkpoint,
        metrics_path=metrics,
    )


def _logratio_means(model: TinyLm, reference: TinyLm, examples, batch_size: int):
    """Mean policy-vs-reference logratio per label over the whole dataset."""
    sums = {DESIRABLE: 0.0, UNDESIRABLE: 0.0}
    counts = {DESIRABLE: 0, UNDESIRABLE: 0}
    model.eval()
    with torch.no_grad():
        for idx in _chunks(list(range(len(examples))), batch_size):
            batch = collate_pref([examples[i] for i in idx])
            lp_policy = sequence_logprobs(
                model(batch.tokens), batch.tokens, batch.completion_weights
            )
            lp_ref = sequence_logprobs(
                reference(batch.tokens), batch.tokens, batch.completion_weights
            )
            for row, label in enumerate(batch.labels):
                sums[label] += (lp_policy[row] - lp_ref[row]).item()
                counts[label] += 1
    model.train()
    mean_d = sums[DESIRABLE] / counts[DESIRABLE] if counts[DESIRABLE] else None
    mean_u = sums[UNDESIRABLE] / counts[UNDESIRABLE] if counts[UNDESIRABLE] else None
    return mean_d, mean_u


def train_maao(
    data_path: str | Path,
    config: TrainConfig,
    out_dir: str | Path,
    reference_checkpoint: str | Path | None = None,
) -> MaaoResult:
    """Preference run against a frozen reference model.

    The policy starts from the reference checkpoint when one is given,
    otherwise both start from the same seeded initialization; either way the
    initial logratio is exactly zero everywhere.
    """
    if config.phase != PHASE_MAAO:
        raise ConfigError(f"train_maao got a {config.phase!r} config")
    model_config = preset(config.model_preset)
    examples = load_pref_dataset(
        data_path, model_config.max_seq_len, require_both_labels=not config.allow_single_label
    )
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(config.seed)
    if reference_checkpoint is not None:
        policy = load_checkpoint(reference_checkpoint)
        reference = load_checkpoint(reference_checkpoint)
        model_config = policy.config
    else:
        policy = build_model(model_config, config.seed)
        reference = build_model(model_config, config.seed)
    reference.requires_grad_(False)
    reference.eval()

    n_desirable = sum(1 for ex in examples if ex.label == DESIRABLE)
    n_undesirable = len(examples) - n_desirable
    if n_desirable and n_undesirable:
        lambda_pos = float(lambda_scale(n_desirable, n_undesirable, config.lambda_ratio_target))
    else:
        # One-sided run (explicitly allowed by config): no ratio to balance.
        lambda_pos = 1.0
    lambda_neg = 1.0

    optimizer = AdamW(policy.parameters(), lr=config.learning_rate, weight_decay=0.0)
    steps_per_epoch = math.ceil(len(examples) / config.batch_size)
    scheduler = make_scheduler(optimizer, config.epochs * steps_per_epoch, config.warmup_ratio)

    step_losses: list[float] = []
    epoch_mean_losses: list[float] = []
    traces: list[BatchTrace] = []
    for epoch in range(config.epochs):
        epoch_steps: list[float] = []
        for idx in _chunks(_epoch_order(len(examples), config.seed, epoch), config.batch_size):
            batch = collate_pref([examples[i] for i in idx])
            logits = policy(batch.tokens)
            lp_policy = sequence_logprobs(logits, batch.tokens, batch.completion_weights)
            with torch.no_grad():
                lp_ref = sequence_logprobs(
                    reference(batch.tokens), batch.tokens, batch.completion_weights
                )
            if config.z0_mode == Z0_SUPPLIED:
                z0 = config.z0
            else:
                mis_tokens, mis_weights = collate_mismatched(
                    batch.examples, model_config.max_seq_len
                )
                with torch.no_grad():
                    mis_ratio = sequence_logprobs(
                        policy(mis_tokens), mis_tokens, mis_weights
                    ) - sequence_logprobs(reference(mis_tokens), mis_tokens, mis_weights)
                z0 = estimate_z0(mis_ratio)
            parts = preference_loss(
                lp_policy - lp_ref, batch.labels, config.beta, lambda_pos, lambda_neg, z0
            )
            optimizer.zero_grad()
            parts.loss.backward()
            torch.nn.utils.clip_grad_norm_(policy.parameters(), 1.0)
            optimizer.step()
            scheduler.step()
            step_losses.append(parts.loss.item())
            epoch_steps.append(parts.loss.item())
            traces.append(
                BatchTrace(
                    loss=parts.loss.item(),
                    z0=z0,
                    samples=tuple(
                        (lp_policy[row].item(), lp_ref[row].item(), batch.labels[row])
                        for row in range(len(batch.labels))
                    ),
                )
            )
        epoch_mean_losses.append(sum(epoch_steps) / len(epoch_steps))

    mean_d, mean_u = _logratio_means(policy, reference, examples, config.batch_size)
    gap = mean_d - mean_u if mean_d is not None and mean_u is not None else None

    checkpoint = save_checkpoint(policy, PHASE_MAAO, out)
    metrics = _write_metrics(
        out,
        {
            "schema_version": METRICS_SCHEMA_VERSION,
            "phase": PHASE_MAAO,
            "n_records": len(examples),
            "n_desirable": n_desirable,
            "n_undesirable": n_undesirable,
            "lambda_pos": lambda_pos,
            "lambda_neg": lambda_neg,
            "n_steps": len(step_losses),
            "step_losses": step_losses,
            "epoch_mean_losses": epoch_mean_losses,
            "mean_logratio_desirable": mean_d,
            "mean_logratio_undesirable": mean_u,
            "logratio_gap": gap,
            "config": config.to_json_dict(),
            "model": model_config.to_json_dict(),
        },
    )
    return MaaoResult(
        step_losses=tuple(step_losses),
        epoch_mean_losses=tuple(epoch_mean_losses),
        batch_traces=tuple(traces),
        mean_logratio_desirable=mean_d,
        mean_logratio_undesirable=mean_u,
        logratio_gap=gap,
        lambda_pos=lambda_pos,
        lambda_neg=lambda_neg,
        n_records=len(examples),
        n_steps=len(step_losses),
        checkpoint_path=checkpoint,
        metrics_path=metrics,
    )
