"""
From reward matrix to training files
====================================

Takes the exploration outputs and emits the two fine-tuning datasets:

  imao.jsonl  chat records of successful episodes, loss-masked so only the
              assistant turns train (observations are inputs, not targets)
  maao.jsonl  the same episodes plus the failures, labeled desirable /
              undesirable for preference training

Everything below is deterministic: same matrix + seed, same bytes.
"""

import json

import numpy as np

from mechact.forge import apply_imao_cap, emit_imao, emit_maao, partition
from mechact.model import (
    Action, ActionKind, AgentTurn, Domain, EnvSource, EnvTurn, Mechanism,
    RewardMatrix, Trajectory, TrajectoryFormat,
)

mechs = Mechanism.ordered()

# a hand-built 5x6 outcome matrix; columns q3..q6 are mechanism-sensitive
cells = np.array([
    # q1 q2 q3 q4 q5 q6
    [1, 0, 1, 0, 1, 0],   # Reason
    [1, 0, 1, 1, 0, 0],   # Plan
    [1, 0, 0, 1, 0, 0],   # Memory
    [1, 0, 0, 0, 1, 0],   # Reflection
    [1, 0, 0, 0, 0, 1],   # ExternalAugmentation
], dtype=np.int8)
matrix = RewardMatrix(mechanisms=mechs, task_ids=tuple(f"q{i+1}" for i in range(6)), cells=cells)


def tiny_traj(mechanism, task_id, reward):
    answer = "8" if reward else "-1"
    finish = AgentTurn(f"the answer is {answer}", Action(ActionKind.FINISH, answer))
    turns = [EnvTurn(f"Question {task_id}?", EnvSource.TASK_STATEMENT)]
    if mechanism is Mechanism.PLAN:
        turns += [
            AgentTurn("planning first", Action(ActionKind.MAKE_PLAN)),
            EnvTurn("write a plan", EnvSource.GROUNDING_PROMPT),
            AgentTurn("My plan: 1. solve. 2. answer.", Action(ActionKind.CARRY_OUT_PLAN)),
            EnvTurn("carry it out", EnvSource.GROUNDING_PROMPT),
            finish,
        ]
    elif mechanism is Mechanism.MEMORY:
        turns += [
            AgentTurn("recalling", Action(ActionKind.RETRIEVE_MEMORY)),
            EnvTurn("Case: a similar one", EnvSource.MEMORY_CASE),
            finish,
        ]
    elif mechanism is Mechanism.REFLECTION:
        turns += [
            AgentTurn("double checking", Action(ActionKind.REFLECT)),
            EnvTurn("review: fine", EnvSource.CRITIC_REVIEW),
            finish,
        ]
    elif mechanism is Mechanism.EXTERNAL_AUGMENTATION:
        turns += [
            AgentTurn("compute", Action(ActionKind.CALCULATE, "4+4")),
            EnvTurn("8", EnvSource.TOOL_RESULT),
            finish,
        ]
    else:
        turns += [finish]
    return Trajectory(
        task_id=task_id, domain=Domain.MATH, mechanism=mechanism, turns=tuple(turns),
        reward=reward, format=TrajectoryFormat.UNIACT, extracted_answer=answer,
    )


trajectories = [
    tiny_traj(mech, task_id, int(cells[i, j]))
    for i, mech in enumerate(mechs)
    for j, task_id in enumerate(matrix.task_ids)
]

part = partition(matrix)
print("columns kept as sensitive:", list(part.sensitive))
print("all-solved (skipped):     ", list(part.solved_by_all))

# cap the imitation set at 2 positives per mechanism, seeded
capped = apply_imao_cap(part, cap=2, seed=11)
imao_records, _ = emit_imao(capped, trajectories)
maao_records, _, counts = emit_maao(capped, trajectories)

print()
print(json.dumps(counts, indent=2))

record = imao_records[0]
print()
print("one imitation record, mask beside each message:")
for flag, message in zip(record.train_mask, record.messages):
    print(f"  mask={flag} {message.role.value:>9}: {message.content[:64]!r}")

# the preference file mixes both labels; undesirable rows come from failures
labels = [r.label for r in maao_records]
print()
print("preference records:", len(maao_records),
      "desirable:", labels.count("desirable"),
      "undesirable:", labels.count("undesirable"))
print("first line of maao.jsonl would be:")
print(json.dumps(maao_records[0].to_json_dict())[:160], "...")
