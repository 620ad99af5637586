"""Partition logic against a brute-force oracle, capping, and record emission."""

from __future__ import annotations

import itertools
import json
import random
from fractions import Fraction

import numpy as np
import pytest
from conftest import MECH_CODE, PLANTED

from mechact.errors import ConfigError, DataFormatError, ValidationError
from mechact.forge import (
    DatasetPartition,
    KtoRecord,
    SftRecord,
    TrajectoryRef,
    apply_imao_cap,
    emit_imao,
    emit_maao,
    partition,
    read_records_jsonl,
    write_records_jsonl,
)
from mechact.gateway import Role, assistant_message, system_message, user_message
from mechact.model import (
    Action,
    ActionKind,
    AgentTurn,
    Domain,
    EnvSource,
    EnvTurn,
    Mechanism,
    RewardMatrix,
    Trajectory,
    TrajectoryFormat,
)
from mechact.objectives import DESIRABLE, UNDESIRABLE

MECHS = Mechanism.ordered()


def make_matrix(cells) -> RewardMatrix:
    cells = np.array(cells, dtype=np.int8)
    return RewardMatrix(
        mechanisms=MECHS[: cells.shape[0]],
        task_ids=tuple(f"t{j:03d}" for j in range(cells.shape[1])),
        cells=cells,
    )


def brute_force_partition(matrix: RewardMatrix, include_all_fail: bool):
    """Independent reference: classify every column by explicit case analysis."""
    solved, sensitive, excluded = [], [], []
    pos, neg = [], []
    for j, task_id in enumerate(matrix.task_ids):
        col = [int(matrix.cells[i, j]) for i in range(len(matrix.mechanisms))]
        if min(col) == 1:
            solved.append(task_id)
        elif max(col) == 0 and not include_all_fail:
            excluded.append(task_id)
        else:
            sensitive.append(task_id)
            for i, mech in enumerate(matrix.mechanisms):
                if col[i] == 1:
                    pos.append((mech, task_id))
                else:
                    neg.append((mech, task_id))
    return solved, sensitive, excluded, pos, neg


def assert_matches_oracle(matrix: RewardMatrix, include_all_fail: bool):
    got = partition(matrix, include_all_fail=include_all_fail)
    solved, sensitive, excluded, pos, neg = brute_force_partition(matrix, include_all_fail)
    assert list(got.solved_by_all) == solved
    assert list(got.sensitive) == sensitive
    assert list(got.all_fail_excluded) == excluded
    assert [(r.mechanism, r.task_id) for r in got.maao_pos] == pos
    assert [(r.mechanism, r.task_id) for r in got.maao_neg] == neg
    assert got.imao == got.maao_pos  # pre-cap
    # conservation: every cell of a sensitive column lands exactly once
    assert len(got.maao_pos) + len(got.maao_neg) == len(sensitive) * len(matrix.mechanisms)


def test_partition_exhaustive_small():
    # all 2^10 outcome matrices over 5 mechanisms x 2 tasks
    for bits in itertools.product((0, 1), repeat=10):
        cells = np.array(bits, dtype=np.int8).reshape(5, 2)
        for include_all_fail in (True, False):
            assert_matches_oracle(make_matrix(cells), include_all_fail)


def test_partition_random_wide():
    rng = np.random.default_rng(404)
    for _ in range(200):
        n_tasks = int(rng.integers(1, 30))
        cells = rng.integers(0, 2, size=(5, n_tasks), dtype=np.int8)
        for include_all_fail in (True, False):
            assert_matches_oracle(make_matrix(cells), include_all_fail)


def test_partition_planted_counts():
    cells = np.array(
        [[int(MECH_CODE[m] in codes) for codes in PLANTED.values()] for m in MECHS],
        dtype=np.int8,
    )
    matrix = RewardMatrix(mechanisms=MECHS, task_ids=tuple(PLANTED), cells=cells)
    part = partition(matrix)
    assert part.solved_by_all == ("t01", "t02")
    assert len(part.sensitive) == 10
    assert len(part.maao_pos) == 16
    assert len(part.maao_neg) == 34
    assert part.all_fail_excluded == ()
    strict = partition(matrix, include_all_fail=False)
    assert strict.all_fail_excluded == ("t12",)
    assert len(strict.sensitive) == 9
    assert len(strict.maao_pos) == 16
    assert len(strict.maao_neg) == 29  # t12's five negatives gone


def test_partition_empty_matrix():
    part = partition(make_matrix(np.zeros((5, 0), dtype=np.int8)))
    assert part.sensitive == ()
    assert part.maao_pos == () and part.maao_neg == ()


def test_partition_groups_disjoint_validation():
    with pytest.raises(ValidationError):
        DatasetPartition(
            solved_by_all=("a",), sensitive=("a",), all_fail_excluded=(),
            imao=(), maao_pos=(), maao_neg=(),
        )
    with pytest.raises(ValidationError):
        DatasetPartition(
            solved_by_all=(), sensitive=("a",), all_fail_excluded=(),
            imao=(TrajectoryRef(Mechanism.REASON, "b"),),
            maao_pos=(TrajectoryRef(Mechanism.REASON, "b"),), maao_neg=(),
        )
    ref = TrajectoryRef(Mechanism.REASON, "a")
    with pytest.raises(ValidationError):
        DatasetPartition(
            solved_by_all=(), sensitive=("a",), all_fail_excluded=(),
            imao=(ref,), maao_pos=(), maao_neg=(),
        )
    with pytest.raises(ValidationError):
        DatasetPartition(
            solved_by_all=(), sensitive=("a",), all_fail_excluded=(),
            imao=(), maao_pos=(ref,), maao_neg=(ref,),
        )


# ---------------------------------------------------------------------------
# IMAO cap

def _part_with_positives(n_per_mech: dict[Mechanism, int]) -> DatasetPartition:
    n_tasks = max(n_per_mech.values(), default=0)
    task_ids = tuple(f"t{j:03d}" for j in range(n_tasks))
    pos = tuple(
        TrajectoryRef(m, task_ids[j]) for m in MECHS for j in range(n_per_mech.get(m, 0))
    )
    return DatasetPartition(
        solved_by_all=(), sensitive=task_ids, all_fail_excluded=(),
        imao=pos, maao_pos=pos, maao_neg=(),
    )


def test_cap_none_is_identity():
    part = _part_with_positives({m: 4 for m in MECHS})
    assert apply_imao_cap(part, None, seed=0) is part


def test_cap_negative_rejected():
    part = _part_with_positives({m: 1 for m in MECHS})
    with pytest.raises(ConfigError):
        apply_imao_cap(part, -1, seed=0)


def test_cap_subset_order_and_determinism():
    part = _part_with_positives({m: 10 for m in MECHS})
    capped_a = apply_imao_cap(part, 3, seed=42)
    capped_b = apply_imao_cap(part, 3, seed=42)
    assert capped_a.imao == capped_b.imao
    assert capped_a.maao_pos == part.maao_pos  # preference set untouched
    for mechanism in MECHS:
        kept = [r for r in capped_a.imao if r.mechanism == mechanism]
        original = [r for r in part.imao if r.mechanism == mechanism]
        assert len(kept) == 3
        # kept refs appear in their original relative order
        positions = [original.index(r) for r in kept]
        assert positions == sorted(positions)
        assert set(kept) <= set(original)
    different = apply_imao_cap(part, 3, seed=43)
    assert different.imao != capped_a.imao  # seed actually matters at 10 choose 3


def test_cap_larger_than_pool_keeps_all():
    part = _part_with_positives({m: 2 for m in MECHS})
    assert apply_imao_cap(part, 5, seed=0).imao == part.imao
    assert apply_imao_cap(part, 2, seed=0).imao == part.imao


def test_cap_zero_empties_imao():
    part = _part_with_positives({m: 3 for m in MECHS})
    capped = apply_imao_cap(part, 0, seed=0)
    assert capped.imao == ()
    assert capped.maao_pos == part.maao_pos


def test_cap_uniform_coverage():
    # every ref should be sampled under some seed; a fixed ref must not be
    # permanently excluded
    part = _part_with_positives({Mechanism.REASON: 6})
    seen: set[TrajectoryRef] = set()
    for seed in range(60):
        seen.update(apply_imao_cap(part, 2, seed).imao)
    assert seen == set(part.imao)


# ---------------------------------------------------------------------------
# Record emission

def canonical_traj(mechanism: Mechanism, task_id: str, reward: int) -> Trajectory:
    answer = "42" if reward else "999"
    finish = AgentTurn(f"the answer is {answer}", Action(ActionKind.FINISH, answer))
    turns: list = [EnvTurn(f"Question for {task_id}?", EnvSource.TASK_STATEMENT)]
    if mechanism is Mechanism.REASON:
        turns += [finish]
    elif mechanism is Mechanism.PLAN:
        turns += [
            AgentTurn("planning", Action(ActionKind.MAKE_PLAN)),
            EnvTurn("ok", EnvSource.GROUNDING_PROMPT),
            AgentTurn("My plan: read it", Action(ActionKind.CARRY_OUT_PLAN)),
            EnvTurn("go", EnvSource.GROUNDING_PROMPT),
            finish,
        ]
    elif mechanism is Mechanism.MEMORY:
        turns += [
            AgentTurn("recall", Action(ActionKind.RETRIEVE_MEMORY)),
            EnvTurn("Case: old", EnvSource.MEMORY_CASE),
            finish,
        ]
    elif mechanism is Mechanism.REFLECTION:
        turns += [
            AgentTurn("check", Action(ActionKind.REFLECT)),
            EnvTurn("fine", EnvSource.CRITIC_REVIEW),
            finish,
        ]
    else:
        turns += [
            AgentTurn("compute", Action(ActionKind.CALCULATE, "6*7")),
            EnvTurn("42", EnvSource.TOOL_RESULT),
            finish,
        ]
    return Trajectory(
        task_id=task_id, domain=Domain.MATH, mechanism=mechanism,
        turns=tuple(turns), reward=reward, format=TrajectoryFormat.UNIACT,
        extracted_answer=answer,
    )


def planted_world_data():
    cells = np.array(
        [[int(MECH_CODE[m] in codes) for codes in PLANTED.values()] for m in MECHS],
        dtype=np.int8,
    )
    matrix = RewardMatrix(mechanisms=MECHS, task_ids=tuple(PLANTED), cells=cells)
    trajs = [
        canonical_traj(m, t, int(cells[i, j]))
        for i, m in enumerate(MECHS)
        for j, t in enumerate(PLANTED)
    ]
    return matrix, trajs


def test_emit_imao_records():
    matrix, trajs = planted_world_data()
    part = partition(matrix)
    records, skipped = emit_imao(part, trajs)
    assert skipped == []
    assert len(records) == 16
    # sorted by (mechanism index, task id)
    keys = [(r.mechanism.index, r.task_id) for r in records]
    assert keys == sorted(keys)
    for record in records:
        assert any(record.train_mask)
        for message, flag in zip(record.messages, record.train_mask):
            assert flag == (1 if message.role == Role.ASSISTANT else 0)
        assert record.messages[0].role == Role.SYSTEM
        assert record.messages[1].content.startswith("Task: ")


def test_emit_imao_respects_cap():
    matrix, trajs = planted_world_data()
    part = apply_imao_cap(partition(matrix), 2, seed=7)
    records, skipped = emit_imao(part, trajs)
    assert skipped == []
    per_mech = {m: 0 for m in MECHS}
    for r in records:
        per_mech[r.mechanism] += 1
    assert all(v <= 2 for v in per_mech.values())
    assert sum(per_mech.values()) == len(part.imao)


def test_emit_maao_records_and_report():
    matrix, trajs = planted_world_data()
    part = partition(matrix)
    records, skipped, report = emit_maao(part, trajs)
    assert skipped == []
    assert len(records) == 50
    labels = {r.label for r in records}
    assert labels == {DESIRABLE, UNDESIRABLE}
    assert report["n_desirable"] == 16
    assert report["n_undesirable"] == 34
    assert report["n_solved_by_all"] == 2
    assert report["n_sensitive"] == 10
    assert report["n_dropped"] == 0
    assert report["n_imao"] == 16
    assert report["n_capped_out"] == 0
    ratio = report["suggested_lambda_ratio"]
    # 4*34 / (3*16) = 136/48 = 17/6
    assert ratio == {"numerator": 17, "denominator": 6, "value": 17 / 6}
    # labels agree with the matrix cell rewards
    for record in records:
        i = MECHS.index(record.mechanism)
        j = list(PLANTED).index(record.task_id)
        expected = DESIRABLE if matrix.cells[i, j] else UNDESIRABLE
        assert record.label == expected
    # deterministic sort
    keys = [(r.task_id, r.mechanism.index, r.label) for r in records]
    assert keys == sorted(keys)


def test_emit_skips_missing_trajectories():
    matrix, trajs = planted_world_data()
    part = partition(matrix)
    # drop two trajectories as if canonicalization had failed
    missing = {(Mechanism.REASON, "t03"), (Mechanism.PLAN, "t12")}
    kept = [t for t in trajs if (t.mechanism, t.task_id) not in missing]
    records, skipped = emit_imao(part, kept)
    assert [(r.mechanism, r.task_id) for r in skipped] == [(Mechanism.REASON, "t03")]
    assert len(records) == 15
    m_records, m_skipped, report = emit_maao(part, kept)
    assert len(m_records) == 48
    assert {(r.mechanism, r.task_id) for r in m_skipped} == missing
    assert report["n_dropped"] == 2
    assert report["n_desirable"] == 15
    assert report["n_undesirable"] == 33


def test_emit_duplicate_trajectory_rejected():
    matrix, trajs = planted_world_data()
    part = partition(matrix)
    with pytest.raises(DataFormatError) as exc_info:
        emit_imao(part, trajs + [trajs[0]])
    assert "duplicate trajectory" in str(exc_info.value)


def test_emit_capped_out_count():
    matrix, trajs = planted_world_data()
    part = apply_imao_cap(partition(matrix), 1, seed=0)
    _, _, report = emit_maao(part, trajs)
    assert report["n_imao"] == 5  # one per mechanism
    assert report["n_capped_out"] == 11
    assert report["n_desirable"] == 16  # cap never touches the preference set


def test_empty_inputs_zero_counts():
    matrix = make_matrix(np.zeros((5, 0), dtype=np.int8))
    part = partition(matrix)
    records, skipped = emit_imao(part, [])
    assert records == [] and skipped == []
    m_records, m_skipped, report = emit_maao(part, [])
    assert m_records == [] and m_skipped == []
    assert report["n_desirable"] == 0
    assert report["n_undesirable"] == 0
    assert report["suggested_lambda_ratio"] is None


# ---------------------------------------------------------------------------
# Record validation and JSONL round trip

def _messages():
    return (
        system_message("sys"),
        user_message("Task: q"),
        assistant_message("Thought: t Action: Finish[42]"),
    )


def test_sft_record_mask_validation():
    msgs = _messages()
    SftRecord(
        task_id="t", domain=Domain.MATH, mechanism=Mechanism.REASON,
        messages=msgs, train_mask=(0, 0, 1),
    )
    with pytest.raises(ValidationError):
        SftRecord(
            task_id="t", domain=Domain.MATH, mechanism=Mechanism.REASON,
            messages=msgs, train_mask=(0, 1, 1),
        )
    with pytest.raises(ValidationError):
        SftRecord(
            task_id="t", domain=Domain.MATH, mechanism=Mechanism.REASON,
            messages=msgs, train_mask=(0, 0),
        )
    with pytest.raises(ValidationError):
        SftRecord(
            task_id="t", domain=Domain.MATH, mechanism=Mechanism.REASON,
            messages=msgs[:2], train_mask=(0, 0),
        )


def test_kto_record_label_validation():
    with pytest.raises(ValidationError):
        KtoRecord(
            task_id="t", domain=Domain.MATH, mechanism=Mechanism.REASON,
            label="good", messages=_messages(),
        )


def test_records_jsonl_round_trip(tmp_path):
    matrix, trajs = planted_world_data()
    part = partition(matrix)
    records, _ = emit_imao(part, trajs)
    path = tmp_path / "imao.jsonl"
    write_records_jsonl(path, records)
    loaded = read_records_jsonl(path)
    assert len(loaded) == len(records)
    assert loaded[0] == records[0].to_json_dict()
    # key order pinned for byte-stable files
    assert list(loaded[0]) == [
        "schema_version", "task_id", "domain", "mechanism", "messages", "train_mask",
    ]
    kto_records, _, _ = emit_maao(part, trajs)
    kto_path = tmp_path / "maao.jsonl"
    write_records_jsonl(kto_path, kto_records)
    kto_loaded = read_records_jsonl(kto_path)
    assert list(kto_loaded[0]) == [
        "schema_version", "task_id", "domain", "mechanism", "label", "messages",
    ]
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"schema_version": 9}\n', encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_records_jsonl(bad)


def test_suggested_ratio_worked_example():
    # four negatives for every positive suggests weights in ratio 4*1 : 3*4
    matrix = make_matrix([[1, 0, 0, 0, 0], [0] * 5, [0] * 5, [0] * 5, [0] * 5])
    trajs = [
        canonical_traj(m, f"t{j:03d}", int(matrix.cells[i, j]))
        for i, m in enumerate(MECHS) for j in range(5)
    ]
    # n_desirable=1, n_undesirable=24 -> 4*24/(3*1) = 32
    _, _, report = emit_maao(partition(matrix), trajs)
    assert report["suggested_lambda_ratio"]["value"] == pytest.approx(32.0)
    assert Fraction(
        report["suggested_lambda_ratio"]["numerator"],
        report["suggested_lambda_ratio"]["denominator"],
    ) == Fraction(32, 1)
