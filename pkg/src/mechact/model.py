"""Core domain types: tasks, mechanisms, actions, turns, trajectories, reward matrices.

Trajectory records serialize to JSONL with a fixed key order so that equal
inputs produce byte-identical files. The record layout is documented
field-by-field in the README under "Trajectory records".
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import DataFormatError, ParseError, ValidationError

SCHEMA_VERSION = 1

# Hard ceiling on tool calls in one augmentation episode; runaway tool loops
# past it fail template conformance and are dropped at transform time.
MAX_TOOL_CALLS = 8


class Domain(str, Enum):
    MATH = "math"
    KIQA = "kiqa"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


class Mechanism(Enum):
    """The five agent mechanisms, with stable 1-based indices.

    Index order is also the tie-break order used by majority voting.
    """

    REASON = 1
    PLAN = 2
    MEMORY = 3
    REFLECTION = 4
    EXTERNAL_AUGMENTATION = 5

    @property
    def index(self) -> int:
        return self.value

    @property
    def label(self) -> str:
        return _MECHANISM_LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "Mechanism":
        try:
            return _MECHANISM_BY_LABEL[label]
        except KeyError:
            raise ValidationError(f"unknown mechanism {label!r}") from None

    @classmethod
    def ordered(cls) -> tuple["Mechanism", ...]:
        return tuple(sorted(cls, key=lambda m: m.index))


_MECHANISM_LABELS = {
    Mechanism.REASON: "Reason",
    Mechanism.PLAN: "Plan",
    Mechanism.MEMORY: "Memory",
    Mechanism.REFLECTION: "Reflection",
    Mechanism.EXTERNAL_AUGMENTATION: "ExternalAugmentation",
}
_MECHANISM_BY_LABEL = {v: k for k, v in _MECHANISM_LABELS.items()}


class ActionKind(str, Enum):
    MAKE_PLAN = "MakePlan"
    CARRY_OUT_PLAN = "CarryOutPlan"
    RETRIEVE_MEMORY = "RetrieveMemory"
    REFLECT = "Reflect"
    CALCULATE = "Calculate"
    SEARCH = "Search"
    LOOKUP = "Lookup"
    FINISH = "Finish"


# Kinds that take a bracketed argument; all others must not carry one.
BRACKET_KINDS = frozenset(
    {ActionKind.CALCULATE, ActionKind.SEARCH, ActionKind.LOOKUP, ActionKind.FINISH}
)
TOOL_KINDS = frozenset({ActionKind.CALCULATE, ActionKind.SEARCH, ActionKind.LOOKUP})

_DOMAIN_ONLY = {
    ActionKind.CALCULATE: Domain.MATH,
    ActionKind.SEARCH: Domain.KIQA,
    ActionKind.LOOKUP: Domain.KIQA,
}


def action_legal_in(kind: ActionKind, domain: Domain) -> bool:
    only = _DOMAIN_ONLY.get(kind)
    return only is None or only == domain


@dataclass(frozen=True)
class Action:
    kind: ActionKind
    arg: str | None = None

    def __post_init__(self):
        if self.kind in BRACKET_KINDS:
            if self.arg is None:
                raise ValidationError(f"action {self.kind.value} requires an argument")
        elif self.arg is not None:
            raise ValidationError(f"action {self.kind.value} takes no argument")


class EnvSource(str, Enum):
    TASK_STATEMENT = "task_statement"
    GROUNDING_PROMPT = "grounding_prompt"
    TOOL_RESULT = "tool_result"
    MEMORY_CASE = "memory_case"
    CRITIC_REVIEW = "critic_review"


@dataclass(frozen=True)
class AgentTurn:
    thought: str
    action: Action

    def __post_init__(self):
        if not self.thought or not self.thought.strip():
            raise ValidationError("agent turn thought must be non-empty")


@dataclass(frozen=True)
class EnvTurn:
    observation: str
    source: EnvSource

    def __post_init__(self):
        if not self.observation:
            raise ValidationError("environment observation must be non-empty")


Turn = AgentTurn | EnvTurn


class TrajectoryFormat(str, Enum):
    ICL_RAW = "icl_raw"
    UNIACT = "uniact"


# Expected agent action sequence per mechanism in the canonical format.
# External augmentation is handled separately (variable tool-call count).
_SKELETONS = {
    Mechanism.REASON: (ActionKind.FINISH,),
    Mechanism.PLAN: (ActionKind.MAKE_PLAN, ActionKind.CARRY_OUT_PLAN, ActionKind.FINISH),
    Mechanism.MEMORY: (ActionKind.RETRIEVE_MEMORY, ActionKind.FINISH),
    Mechanism.REFLECTION: (ActionKind.REFLECT, ActionKind.FINISH),
}


def mechanism_skeleton(mechanism: Mechanism) -> tuple[ActionKind, ...] | None:
    """Fixed action sequence for a mechanism, or None for the variable-length one."""
    return _SKELETONS.get(mechanism)


@dataclass(frozen=True)
class Trajectory:
    """One episode: an opening task statement, then alternating agent/env turns.

    Invariants (checked on construction):
      - turns[0] is an EnvTurn with source task_statement, the only one;
      - turns strictly alternate environment/agent after the opening statement;
      - every action is legal for the trajectory's domain;
      - Finish appears only as the final agent turn; a non-truncated trajectory
        must end with it, a truncated one must carry reward 0;
      - uniact-format trajectories match their mechanism's template skeleton
        (truncated ones may stop at a proper prefix of it).
    """

    task_id: str
    domain: Domain
    mechanism: Mechanism
    turns: tuple[Turn, ...]
    reward: int
    format: TrajectoryFormat
    extracted_answer: str | None = None
    truncated: bool = False

    def __post_init__(self):
        self._validate()

    def _validate(self) -> None:
        if self.reward not in (0, 1):
            raise ValidationError("reward must be 0 or 1")
        if not self.turns:
            raise ValidationError("trajectory has no turns")
        first = self.turns[0]
        if not isinstance(first, EnvTurn) or first.source != EnvSource.TASK_STATEMENT:
            raise ValidationError("first turn must be the task statement")
        for i, turn in enumerate(self.turns):
            expect_env = i % 2 == 0
            if expect_env != isinstance(turn, EnvTurn):
                raise ValidationError("alternation violated")
            if i > 0 and isinstance(turn, EnvTurn) and turn.source == EnvSource.TASK_STATEMENT:
                raise ValidationError("task statement must appear exactly once, first")
            if isinstance(turn, AgentTurn) and not action_legal_in(turn.action.kind, self.domain):
                raise ValidationError(
                    f"action {turn.action.kind.value} is illegal in domain {self.domain.value}"
                )
        agent_turns = [t for t in self.turns if isinstance(t, AgentTurn)]
        kinds = [t.action.kind for t in agent_turns]
        for k in kinds[:-1]:
            if k == ActionKind.FINISH:
                raise ValidationError("Finish must terminate the trajectory")
        if self.truncated:
            if self.reward != 0:
                raise ValidationError("truncated trajectory must have reward 0")
            if kinds and kinds[-1] == ActionKind.FINISH:
                raise ValidationError("truncated trajectory must not end with Finish")
        else:
            if not isinstance(self.turns[-1], AgentTurn) or kinds[-1] != ActionKind.FINISH:
                raise ValidationError("missing Finish in non-truncated trajectory")
        if self.format == TrajectoryFormat.UNIACT:
            self._validate_skeleton(kinds)

    def _validate_skeleton(self, kinds: list[ActionKind]) -> None:
        mech = self.mechanism
        if mech == Mechanism.EXTERNAL_AUGMENTATION:
            tool_part = kinds[:-1] if (kinds and kinds[-1] == ActionKind.FINISH) else kinds
            bad = not all(k in TOOL_KINDS for k in tool_part)
            if bad or len(tool_part) > MAX_TOOL_CALLS:
                raise ValidationError(f"template skeleton violated for {mech.label}")
            if not self.truncated and len(tool_part) == 0:
                raise ValidationError(f"template skeleton violated for {mech.label}")
            return
        skeleton = _SKELETONS[mech]
        if self.truncated:
            if kinds != list(skeleton[: len(kinds)]):
                raise ValidationError(f"template skeleton violated for {mech.label}")
        elif kinds != list(skeleton):
            raise ValidationError(f"template skeleton violated for {mech.label}")

    @property
    def question(self) -> str:
        """Task statement text (the opening observation)."""
        first = self.turns[0]
        assert isinstance(first, EnvTurn)
        return first.observation

    def agent_turns(self) -> list[AgentTurn]:
        return [t for t in self.turns if isinstance(t, AgentTurn)]


@dataclass(frozen=True)
class Demo:
    """A one-shot demonstration activating exactly one mechanism."""

    mechanism: Mechanism
    domain: Domain
    content: str

    def __post_init__(self):
        if not self.content.strip():
            raise ValidationError("demo content must be non-empty")


@dataclass(frozen=True)
class Task:
    id: str
    dataset: str
    split: Split
    question: str
    gold_answer: str
    domain: Domain

    def __post_init__(self):
        if not self.id:
            raise ValidationError("task id must be non-empty")
        if not self.question.strip():
            raise ValidationError("task question must be non-empty")
        if not self.gold_answer.strip():
            raise ValidationError("task gold answer must be non-empty")

    def to_json_dict(self) -> dict:
        return {
            "id": self.id,
            "dataset": self.dataset,
            "split": self.split.value,
            "question": self.question,
            "gold_answer": self.gold_answer,
            "domain": self.domain.value,
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "Task":
        try:
            return cls(
                id=obj["id"],
                dataset=obj["dataset"],
                split=Split(obj["split"]),
                question=obj["question"],
                gold_answer=obj["gold_answer"],
                domain=Domain(obj["domain"]),
            )
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"bad task record: {exc}") from exc


def load_tasks(path: str | Path) -> list[Task]:
    tasks = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{line_no}: not valid JSON: {exc}") from exc
            tasks.append(Task.from_json_dict(obj))
    seen = set()
    for t in tasks:
        if t.id in seen:
            raise DataFormatError(f"duplicate task id {t.id!r}")
        seen.add(t.id)
    return tasks


def save_tasks(path: str | Path, tasks: Iterable[Task]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in tasks:
            fh.write(json.dumps(t.to_json_dict(), ensure_ascii=False, separators=(",", ":")))
            fh.write("\n")


# ---------------------------------------------------------------------------
# Trajectory serialization


def _turn_to_dict(turn: Turn) -> dict:
    if isinstance(turn, EnvTurn):
        return {"type": "env", "source": turn.source.value, "observation": turn.observation}
    return {
        "type": "agent",
        "thought": turn.thought,
        "action": turn.action.kind.value,
        "arg": turn.action.arg,
    }


def _turn_from_dict(obj: dict) -> Turn:
    kind = obj.get("type")
    if kind == "env":
        try:
            source = EnvSource(obj["source"])
        except (KeyError, ValueError):
            raise ParseError(f"unknown environment source {obj.get('source')!r}") from None
        return EnvTurn(observation=obj.get("observation", ""), source=source)
    if kind == "agent":
        try:
            action_kind = ActionKind(obj["action"])
        except (KeyError, ValueError):
            raise ParseError(f"unknown action kind {obj.get('action')!r}") from None
        return AgentTurn(thought=obj.get("thought", ""), action=Action(action_kind, obj.get("arg")))
    raise ParseError(f"unknown turn type {kind!r}")


def serialize_trajectory(traj: Trajectory) -> str:
    """Render one trajectory as a single JSON line with fixed key order."""
    record = {
        "schema_version": SCHEMA_VERSION,
        "task_id": traj.task_id,
        "domain": traj.domain.value,
        "mechanism": traj.mechanism.label,
        "format": traj.format.value,
        "reward": traj.reward,
        "truncated": traj.truncated,
        "extracted_answer": traj.extracted_answer,
        "turns": [_turn_to_dict(t) for t in traj.turns],
    }
    return json.dumps(record, ensure_ascii=False, separators=(",", ":"))


def deserialize_trajectory(line: str) -> Trajectory:
    """Parse one JSONL record back into a validated Trajectory.

    Raises ParseError (with byte offset for malformed JSON) or ValidationError
    when the record parses but violates a trajectory invariant.
    """
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed record: {exc.msg}", offset=exc.pos) from exc
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object")
    version = obj.get("schema_version")
    if version != SCHEMA_VERSION:
        raise DataFormatError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
    missing = [k for k in ("task_id", "domain", "mechanism", "format", "reward", "turns") if k not in obj]
    if missing:
        raise ParseError(f"record missing keys: {', '.join(missing)}")
    try:
        domain = Domain(obj["domain"])
        fmt = TrajectoryFormat(obj["format"])
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    mechanism = Mechanism.from_label(obj["mechanism"])
    turns = tuple(_turn_from_dict(t) for t in obj["turns"])
    return Trajectory(
        task_id=obj["task_id"],
        domain=domain,
        mechanism=mechanism,
        turns=turns,
        reward=obj["reward"],
        format=fmt,
        extracted_answer=obj.get("extracted_answer"),
        truncated=obj.get("truncated", False),
    )


def write_trajectories(path: str | Path, trajectories: Iterable[Trajectory]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(serialize_trajectory(traj))
            fh.write("\n")


def read_trajectories(path: str | Path) -> Iterator[Trajectory]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield deserialize_trajectory(line)
            except ParseError as exc:
                raise ParseError(f"{path}:{line_no}: {exc}", offset=exc.offset) from exc


# ---------------------------------------------------------------------------
# Reward matrix


@dataclass(frozen=True)
class RewardMatrix:
    """Binary outcomes, one row per mechanism, one column per task.

    Rows follow mechanism index order. Cells are dense 0/1.
    """

    mechanisms: tuple[Mechanism, ...]
    task_ids: tuple[str, ...]
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int8)
        object.__setattr__(self, "cells", cells)
        if not self.mechanisms:
            raise ValidationError("reward matrix needs at least one mechanism row")
        if len(set(self.mechanisms)) != len(self.mechanisms):
            raise ValidationError("duplicate mechanism rows")
        if list(self.mechanisms) != sorted(self.mechanisms, key=lambda m: m.index):
            raise ValidationError("mechanism rows must follow index order")
        if len(set(self.task_ids)) != len(self.task_ids):
            raise ValidationError("duplicate task columns")
        if cells.shape != (len(self.mechanisms), len(self.task_ids)):
            raise ValidationError(
                f"cells shape {cells.shape} does not match "
                f"{len(self.mechanisms)} mechanisms x {len(self.task_ids)} tasks"
            )
        if cells.size and not np.isin(cells, (0, 1)).all():
            raise ValidationError("cells must be 0 or 1")
        cells.flags.writeable = False

    @property
    def n_tasks(self) -> int:
        return len(self.task_ids)

    def row(self, mechanism: Mechanism) -> np.ndarray:
        return self.cells[self.mechanisms.index(mechanism)]

    def column(self, task_id: str) -> np.ndarray:
        return self.cells[:, self.task_ids.index(task_id)]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mechanisms": [m.label for m in self.mechanisms],
            "task_ids": list(self.task_ids),
            "cells": self.cells.tolist(),
        }

    @classmethod
    def from_json_dict(cls, obj: dict) -> "RewardMatrix":
        version = obj.get("schema_version")
        if version != SCHEMA_VERSION:
            raise DataFormatError(f"unsupported schema_version {version!r} (expected {SCHEMA_VERSION})")
        try:
            mechanisms = tuple(Mechanism.from_label(l) for l in obj["mechanisms"])
            return cls(
                mechanisms=mechanisms,
                task_ids=tuple(obj["task_ids"]),
                cells=np.array(obj["cells"], dtype=np.int8),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataFormatError(f"bad reward matrix: {exc}") from exc

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json_dict(), fh, ensure_ascii=False, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def load(cls, path: str | Path) -> "RewardMatrix":
        with open(path, encoding="utf-8") as fh:
            try:
                obj = json.load(fh)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
        return cls.from_json_dict(obj)
