"""Dataset loading, validation, and batch assembly.

Two record shapes come in from the dataset forge. Supervised records carry
messages plus a per-message train_mask; preference records carry messages
plus a desirable/undesirable label. Validation happens at load, against the
record index, so a bad file fails before any training step.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import torch

from .errors import DataError
from .tokenizer import (
    PAD,
    EncodedDialogue,
    assistant_targets,
    encode_dialogue,
    target_owners,
    token_weights,
)

SCHEMA_VERSION = 1

DESIRABLE = "desirable"
UNDESIRABLE = "undesirable"

BOTH_LABELS_ERROR = "z0 estimator and contrast need both labels"


@dataclass(frozen=True)
class SftExample:
    record: int
    task_id: str
    domain: str
    mechanism: str
    messages: tuple[tuple[str, str], ...]
    mask: tuple[int, ...]
    enc: EncodedDialogue


@dataclass(frozen=True)
class PrefExample:
    record: int
    task_id: str
    domain: str
    mechanism: str
    label: str
    messages: tuple[tuple[str, str], ...]
    enc: EncodedDialogue


def _iter_records(path: str | Path):
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path} record {n}: not valid JSON ({exc.msg})") from exc
            if not isinstance(obj, dict):
                raise DataError(f"{path} record {n}: record must be a JSON object")
            if obj.get("schema_version") != SCHEMA_VERSION:
                raise DataError(
                    f"{path} record {n}: unsupported schema_version "
                    f"{obj.get('schema_version')!r} (expected {SCHEMA_VERSION})"
                )
            yield n, obj


def _parse_messages(path, n: int, obj: dict) -> tuple[tuple[str, str], ...]:
    raw = obj.get("messages")
    if not isinstance(raw, list) or not raw:
        raise DataError(f"{path} record {n}: messages must be a non-empty list")
    messages = []
    for m in raw:
        if (
            not isinstance(m, dict)
            or not isinstance(m.get("role"), str)
            or not isinstance(m.get("content"), str)
        ):
            raise DataError(f"{path} record {n}: each message needs string role and content")
        messages.append((m["role"], m["content"]))
    return tuple(messages)


def _encode(path, n: int, messages, max_seq_len: int) -> EncodedDialogue:
    try:
        enc = encode_dialogue(messages)
    except DataError as exc:
        raise DataError(f"{path} record {n}: {exc}") from None
    if len(enc) > max_seq_len:
        raise DataError(
            f"{path} record {n}: {len(enc)} tokens exceeds model context {max_seq_len}"
        )
    return enc


def load_sft_dataset(path: str | Path, max_seq_len: int) -> list[SftExample]:
    """Load supervised records. A record whose mask trains nothing is a
    producer bug, rejected here by record index rather than dividing by
    zero mid-epoch."""
    examples: list[SftExample] = []
    for n, obj in _iter_records(path):
        messages = _parse_messages(path, n, obj)
        mask_raw = obj.get("train_mask")
        if not isinstance(mask_raw, list) or len(mask_raw) != len(messages):
            raise DataError(
                f"{path} record {n}: train_mask must have one entry per message"
            )
        if any(not isinstance(v, int) or v not in (0, 1) for v in mask_raw):
            raise DataError(f"{path} record {n}: train_mask values must be 0 or 1")
        if not any(mask_raw):
            raise DataError(f"{path} record {n}: train_mask is all zero")
        enc = _encode(path, n, messages, max_seq_len)
        examples.append(
            SftExample(
                record=n,
                task_id=str(obj.get("task_id", "")),
                domain=str(obj.get("domain", "")),
                mechanism=str(obj.get("mechanism", "")),
                messages=messages,
                mask=tuple(mask_raw),
                enc=enc,
            )
        )
    if not examples:
        raise DataError(f"no records in {path}")
    return examples


def load_pref_dataset(
    path: str | Path, max_seq_len: int, require_both_labels: bool = True
) -> list[PrefExample]:
    """Load preference records. Both labels must appear unless the caller
    explicitly opts into a one-sided run: the reference-point estimate and
    the desirable/undesirable contrast are meaningless on a single label."""
    examples: list[PrefExample] = []
    for n, obj in _iter_records(path):
        messages = _parse_messages(path, n, obj)
        label = obj.get("label")
        if label not in (DESIRABLE, UNDESIRABLE):
            raise DataError(f"{path} record {n}: unknown label {label!r}")
        enc = _encode(path, n, messages, max_seq_len)
        examples.append(
            PrefExample(
                record=n,
                task_id=str(obj.get("task_id", "")),
                domain=str(obj.get("domain", "")),
                mechanism=str(obj.get("mechanism", "")),
                label=label,
                messages=messages,
                enc=enc,
            )
        )
    if not examples:
        raise DataError(f"no records in {path}")
    labels = {ex.label for ex in examples}
    if require_both_labels and len(labels) < 2:
        raise DataError(BOTH_LABELS_ERROR)
    return examples


# ---------------------------------------------------------------------------
# Batch assembly


@dataclass(frozen=True)
class SftBatch:
    tokens: torch.Tensor  # [batch, length] long
    weights: torch.Tensor  # [batch, length - 1] float, loss weight per target
    examples: tuple[SftExample, ...]


@dataclass(frozen=True)
class PrefBatch:
    tokens: torch.Tensor
    completion_weights: torch.Tensor  # 1.0 on assistant-owned targets
    labels: tuple[str, ...]
    examples: tuple[PrefExample, ...]


def _pad_tokens(encs: Sequence[EncodedDialogue]) -> torch.Tensor:
    length = max(len(e) for e in encs)
    out = torch.full((len(encs), length), PAD, dtype=torch.long)
    for row, enc in enumerate(encs):
        out[row, : len(enc)] = torch.tensor(enc.tokens, dtype=torch.long)
    return out


def _pad_weights(rows: Sequence[Sequence[float]], length: int) -> torch.Tensor:
    out = torch.zeros((len(rows), length - 1), dtype=torch.float32)
    for row, values in enumerate(rows):
        out[row, : len(values)] = torch.tensor(values, dtype=torch.float32)
    return out


def collate_sft(examples: Sequence[SftExample]) -> SftBatch:
    examples = tuple(examples)
    tokens = _pad_tokens([ex.enc for ex in examples])
    weight_rows = [token_weights(ex.enc, ex.mask) for ex in examples]
    weights = _pad_weights(weight_rows, tokens.shape[1])
    # Tripwire for the masking contract: no position owned by a mask-0
    # message may carry loss weight. The expansion above guarantees it; a
    # violation here means the expansion itself broke.
    for row, ex in enumerate(examples):
        owners = target_owners(ex.enc)
        for pos, owner in enumerate(owners):
            if ex.mask[owner] == 0 and weights[row, pos].item() != 0.0:
                raise AssertionError(
                    f"record {ex.record}: mask-0 token at position {pos} "
                    f"has loss weight {weights[row, pos].item()}"
                )
    return SftBatch(tokens=tokens, weights=weights, examples=examples)


def collate_pref(examples: Sequence[PrefExample]) -> PrefBatch:
    examples = tuple(examples)
    tokens = _pad_tokens([ex.enc for ex in examples])
    rows = [[1.0 if a else 0.0 for a in assistant_targets(ex.enc)] for ex in examples]
    weights = _pad_weights(rows, tokens.shape[1])
    return PrefBatch(
        tokens=tokens,
        completion_weights=weights,
        labels=tuple(ex.label for ex in examples),
        examples=examples,
    )


def collate_mismatched(
    examples: Sequence[PrefExample], max_seq_len: int
) -> tuple[torch.Tensor, torch.Tensor]:
    """Cross-pair each prompt with the next example's completion, cyclically.

    The spliced stream stays a valid dialogue because prompts end exactly at
    a message boundary. Scored positions are the assistant-owned targets of
    the borrowed completion; the host prompt contributes context only.
    """
    if len(examples) < 2:
        raise DataError("mismatched pairing needs at least two examples")
    spliced_tokens: list[list[int]] = []
    spliced_weights: list[list[float]] = []
    for k, host in enumerate(examples):
        donor = examples[(k + 1) % len(examples)]
        prompt = list(host.enc.tokens[: host.enc.prompt_len])
        completion = list(donor.enc.tokens[donor.enc.prompt_len :])
        merged = prompt + completion
        if len(merged) > max_seq_len:
            raise DataError(
                f"mismatched pair of records {host.record} and {donor.record} "
                f"exceeds model context {max_seq_len}"
            )
        donor_assistant = assistant_targets(donor.enc)
        weights = [0.0] * (len(merged) - 1)
        offset = len(prompt) - donor.enc.prompt_len
        for pos in range(len(prompt) - 1, len(merged) - 1):
            donor_pos = pos - offset
            if donor_assistant[donor_pos]:
                weights[pos] = 1.0
        spliced_tokens.append(merged)
        spliced_weights.append(weights)
    length = max(len(t) for t in spliced_tokens)
    tokens = torch.full((len(spliced_tokens), length), PAD, dtype=torch.long)
    for row, toks in enumerate(spliced_tokens):
        tokens[row, : len(toks)] = torch.tensor(toks, dtype=torch.long)
    weights = _pad_weights(spliced_weights, length)
    return tokens, weights
