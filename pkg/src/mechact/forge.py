"""Partition exploration outcomes and emit fine-tuning datasets.

Tasks every mechanism solves carry no routing signal and are set aside. The
rest are mechanism-sensitive: each (mechanism, task) cell becomes a positive
or negative reference by its reward. Positives feed both the supervised
stage (per-mechanism cap applied first) and the preference stage; negatives
feed the preference stage only.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, DataFormatError, ValidationError
from .gateway import ChatMessage, Role, dialogue_from_trajectory
from .model import Domain, Mechanism, RewardMatrix, SCHEMA_VERSION, Trajectory
from .objectives import DESIRABLE, UNDESIRABLE, suggested_weight_ratio


@dataclass(frozen=True)
class TrajectoryRef:
    """A (mechanism, task) cell, independent of whether its trajectory
    survived canonicalization."""

    mechanism: Mechanism
    task_id: str

    @property
    def key(self) -> tuple[int, str]:
        return (self.mechanism.index, self.task_id)


@dataclass(frozen=True)
class DatasetPartition:
    solved_by_all: tuple[str, ...]
    sensitive: tuple[str, ...]
    all_fail_excluded: tuple[str, ...]
    imao: tuple[TrajectoryRef, ...]
    maao_pos: tuple[TrajectoryRef, ...]
    maao_neg: tuple[TrajectoryRef, ...]

    def __post_init__(self):
        groups = (set(self.solved_by_all), set(self.sensitive), set(self.all_fail_excluded))
        if sum(len(g) for g in groups) != len(set().union(*groups)):
            raise ValidationError("partition groups overlap")
        sensitive = set(self.sensitive)
        for name, refs in (("imao", self.imao), ("maao_pos", self.maao_pos), ("maao_neg", self.maao_neg)):
            for ref in refs:
                if ref.task_id not in sensitive:
                    raise ValidationError(f"{name} references non-sensitive task {ref.task_id}")
        if not set(self.imao) <= set(self.maao_pos):
            raise ValidationError("imao must be a subset of maao_pos")
        if set(self.maao_pos) & set(self.maao_neg):
            raise ValidationError("a cell cannot be both desirable and undesirable")

    def counts(self) -> dict:
        return {
            "n_solved_by_all": len(self.solved_by_all),
            "n_sensitive": len(self.sensitive),
            "n_all_fail_excluded": len(self.all_fail_excluded),
            "n_imao": len(self.imao),
            "n_desirable": len(self.maao_pos),
            "n_undesirable": len(self.maao_neg),
        }


def partition(matrix: RewardMatrix, include_all_fail: bool = True) -> DatasetPartition:
    """Split tasks by outcome pattern and collect positive/negative cells.

    A task solved by every mechanism is skipped. With include_all_fail=False,
    tasks no mechanism solved are excluded entirely instead of contributing
    one negative per mechanism.
    """
    solved_by_all: list[str] = []
    sensitive: list[str] = []
    all_fail_excluded: list[str] = []
    pos: list[TrajectoryRef] = []
    neg: list[TrajectoryRef] = []
    for j, task_id in enumerate(matrix.task_ids):
        column = matrix.cells[:, j]
        if column.all():
            solved_by_all.append(task_id)
            continue
        if not include_all_fail and not column.any():
            all_fail_excluded.append(task_id)
            continue
        sensitive.append(task_id)
        for mechanism, reward in zip(matrix.mechanisms, column):
            ref = TrajectoryRef(mechanism=mechanism, task_id=task_id)
            (pos if reward else neg).append(ref)
    return DatasetPartition(
        solved_by_all=tuple(solved_by_all),
        sensitive=tuple(sensitive),
        all_fail_excluded=tuple(all_fail_excluded),
        imao=tuple(pos),
        maao_pos=tuple(pos),
        maao_neg=tuple(neg),
    )


def apply_imao_cap(part: DatasetPartition, cap: int | None, seed: int) -> DatasetPartition:
    """Cap the supervised set at `cap` positives per mechanism via a seeded
    uniform sample. Sampled refs keep their original order. cap=None leaves
    the partition unchanged."""
    if cap is None:
        return part
    if cap < 0:
        raise ConfigError("imao cap must be non-negative")
    rng = random.Random(seed)
    kept: list[TrajectoryRef] = []
    for mechanism in Mechanism.ordered():
        refs = [r for r in part.imao if r.mechanism == mechanism]
        if len(refs) > cap:
            order = {r: i for i, r in enumerate(refs)}
            refs = sorted(rng.sample(refs, cap), key=order.__getitem__)
        kept.extend(refs)
    return DatasetPartition(
        solved_by_all=part.solved_by_all,
        sensitive=part.sensitive,
        all_fail_excluded=part.all_fail_excluded,
        imao=tuple(kept),
        maao_pos=part.maao_pos,
        maao_neg=part.maao_neg,
    )


# ---------------------------------------------------------------------------
# Records


@dataclass(frozen=True)
class SftRecord:
    """One supervised example: full dialogue plus a per-message train mask
    that is 1 exactly on assistant messages."""

    task_id: str
    domain: Domain
    mechanism: Mechanism
    messages: tuple[ChatMessage, ...]
    train_mask: tuple[int, ...]

    def __post_init__(self):
        if len(self.messages) != len(self.train_mask):
            raise ValidationError("train_mask length must match messages")
        for message, flag in zip(self.messages, self.train_mask):
            expected = 1 if message.role == Role.ASSISTANT else 0
            if flag != expected:
                raise ValidationError("train_mask must be 1 exactly on assistant messages")
        if not any(self.train_mask):
            raise ValidationError("record has no trainable messages")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "task_id": self.task_id,
            "domain": self.domain.value,
            "mechanism": self.mechanism.label,
            "messages": [m.to_json_dict() for m in self.messages],
            "train_mask": list(self.train_mask),
        }


@dataclass(frozen=True)
class KtoRecord:
    """One preference example: full dialogue plus a desirable/undesirable
    label from the trajectory's reward."""

    task_id: str
    domain: Domain
    mechanism: Mechanism
    label: str
    messages: tuple[ChatMessage, ...]

    def __post_init__(self):
        if self.label not in (DESIRABLE, UNDESIRABLE):
            raise ValidationError(f"unknown preference label {self.label!r}")

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "task_id": self.task_id,
            "domain": self.domain.value,
            "mechanism": self.mechanism.label,
            "label": self.label,
            "messages": [m.to_json_dict() for m in self.messages],
        }


def _index_trajectories(
    trajectories: Iterable[Trajectory],
) -> dict[tuple[Mechanism, str], Trajectory]:
    indexed: dict[tuple[Mechanism, str], Trajectory] = {}
    for traj in trajectories:
        key = (traj.mechanism, traj.task_id)
        if key in indexed:
            raise DataFormatError(
                f"duplicate trajectory for ({traj.mechanism.label}, {traj.task_id})"
            )
        indexed[key] = traj
    return indexed


def _sft_record(traj: Trajectory) -> SftRecord:
    messages = dialogue_from_trajectory(traj)
    mask = tuple(1 if m.role == Role.ASSISTANT else 0 for m in messages)
    return SftRecord(
        task_id=traj.task_id,
        domain=traj.domain,
        mechanism=traj.mechanism,
        messages=messages,
        train_mask=mask,
    )


def emit_imao(
    part: DatasetPartition, trajectories: Iterable[Trajectory]
) -> tuple[list[SftRecord], list[TrajectoryRef]]:
    """Supervised records for the (possibly capped) positive set. Refs whose
    trajectory was dropped during canonicalization are skipped and returned."""
    indexed = _index_trajectories(trajectories)
    records: list[SftRecord] = []
    skipped: list[TrajectoryRef] = []
    for ref in sorted(part.imao, key=lambda r: r.key):
        traj = indexed.get((ref.mechanism, ref.task_id))
        if traj is None:
            skipped.append(ref)
            continue
        records.append(_sft_record(traj))
    return records, skipped


def emit_maao(
    part: DatasetPartition, trajectories: Iterable[Trajectory]
) -> tuple[list[KtoRecord], list[TrajectoryRef], dict]:
    """Preference records for all sensitive cells, labeled by reward, plus a
    counts report with the exact suggested loss-weight ratio."""
    indexed = _index_trajectories(trajectories)
    records: list[KtoRecord] = []
    skipped: list[TrajectoryRef] = []
    for label, refs in ((DESIRABLE, part.maao_pos), (UNDESIRABLE, part.maao_neg)):
        for ref in refs:
            traj = indexed.get((ref.mechanism, ref.task_id))
            if traj is None:
                skipped.append(ref)
                continue
            records.append(
                KtoRecord(
                    task_id=ref.task_id,
                    domain=traj.domain,
                    mechanism=ref.mechanism,
                    label=label,
                    messages=dialogue_from_trajectory(traj),
                )
            )
    records.sort(key=lambda r: (r.task_id, r.mechanism.index, r.label))
    skipped.sort(key=lambda r: r.key)
    n_desirable = sum(1 for r in records if r.label == DESIRABLE)
    n_undesirable = len(records) - n_desirable
    ratio = suggested_weight_ratio(n_desirable, n_undesirable)
    report = {
        "schema_version": SCHEMA_VERSION,
        "n_desirable": n_desirable,
        "n_undesirable": n_undesirable,
        "suggested_lambda_ratio": None
        if ratio is None
        else {
            "numerator": ratio.numerator,
            "denominator": ratio.denominator,
            "value": float(ratio),
        },
        "n_solved_by_all": len(part.solved_by_all),
        "n_sensitive": len(part.sensitive),
        "n_dropped": len(skipped),
        "n_all_fail_excluded": len(part.all_fail_excluded),
        "n_imao": len(part.imao),
        "n_capped_out": len(part.maao_pos) - len(part.imao),
    }
    return records, skipped, report


def write_records_jsonl(path: str | Path, records: Sequence) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(
                json.dumps(record.to_json_dict(), ensure_ascii=False, separators=(",", ":")) + "\n"
            )


def read_records_jsonl(path: str | Path) -> list[dict]:
    out: list[dict] = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            obj = json.loads(line)
            if obj.get("schema_version") != SCHEMA_VERSION:
                raise DataFormatError(f"unsupported schema_version on line {n}")
            out.append(obj)
    return out
