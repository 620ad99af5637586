"""Shared fixtures: a planted 5x12 scripted world with hand-computable
counts, plus small builders used across the suite."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import pytest

from mechact.explorer import DemoSet
from mechact.gateway import PlaybookEntry, ScriptedBackend
from mechact.model import Domain, Mechanism, Split, Task

# Planted outcome matrix: which mechanisms solve which task. t01/t02 are
# solved by all, t12 by none, the rest split so every count below is easy
# to recompute by hand: |cells|=60, sensitive tasks=10, positives among
# sensitive cells=16, negatives=34.
PLANTED = {
    "t01": "RPMFE",
    "t02": "RPMFE",
    "t03": "R",
    "t04": "P",
    "t05": "M",
    "t06": "F",
    "t07": "E",
    "t08": "RP",
    "t09": "PMF",
    "t10": "RPMF",
    "t11": "RE",
    "t12": "",
}

MECH_CODE = {
    Mechanism.REASON: "R",
    Mechanism.PLAN: "P",
    Mechanism.MEMORY: "M",
    Mechanism.REFLECTION: "F",
    Mechanism.EXTERNAL_AUGMENTATION: "E",
}

# One distinctive phrase from each packaged math demo, used to route
# playbook entries per mechanism.
DEMO_SIGNATURE = {
    Mechanism.REASON: "bakery sold 14 muffins",
    Mechanism.PLAN: "Lena has 3 boxes",
    Mechanism.MEMORY: "train travels 60 miles",
    Mechanism.REFLECTION: "Tom buys 4 notebooks",
    Mechanism.EXTERNAL_AUGMENTATION: "127 * 43",
}

WRONG_ANSWER = "999"


def planted_gold(task_id: str) -> str:
    return str(100 + int(task_id[1:]))


def planted_tasks() -> list[Task]:
    return [
        Task(
            id=task_id,
            dataset="planted",
            split=Split.TRAIN,
            question=f"Task {task_id}: what number is planted here?",
            gold_answer=planted_gold(task_id),
            domain=Domain.MATH,
        )
        for task_id in PLANTED
    ]


def mechanism_turns(mechanism: Mechanism, answer: str) -> list[str]:
    """Scripted model turns driving one mechanism's workflow to Finish."""
    finish = f"Thought: The planted answer is {answer}. Action: Finish[{answer}]"
    if mechanism == Mechanism.REASON:
        return [finish]
    if mechanism == Mechanism.PLAN:
        return [
            "Thought: Devising a detailed plan before solving this problem may be helpful."
            " Action: Make plan",
            "Thought: My plan: 1. Read the planted number. 2. Report it. Action: Carry out plan",
            finish,
        ]
    if mechanism == Mechanism.MEMORY:
        return [
            "Thought: A similar case from memory may help here. Action: Retrieve memory",
            finish,
        ]
    if mechanism == Mechanism.REFLECTION:
        return [
            f"Thought: The planted answer might be {WRONG_ANSWER}. Action: Reflect",
            finish,
        ]
    return [
        "Thought: I will compute the planted number. Action: Calculate[100 + 1]",
        finish,
    ]


def planted_playbook_entries() -> list[dict]:
    entries = []
    for task_id, codes in PLANTED.items():
        for mechanism in Mechanism.ordered():
            answer = (
                planted_gold(task_id) if MECH_CODE[mechanism] in codes else WRONG_ANSWER
            )
            entries.append(
                {
                    "task_contains": f"Task {task_id}:",
                    "demo_contains": DEMO_SIGNATURE[mechanism],
                    "turns": mechanism_turns(mechanism, answer),
                }
            )
    return entries


def planted_backend() -> ScriptedBackend:
    return ScriptedBackend(
        playbook=[
            PlaybookEntry(
                task_contains=e["task_contains"],
                turns=tuple(e["turns"]),
                demo_contains=e["demo_contains"],
            )
            for e in planted_playbook_entries()
        ]
    )


@dataclass
class PlantedWorld:
    workdir: Path
    config_path: Path
    tasks_path: Path


def write_planted_world(workdir: Path) -> PlantedWorld:
    """Materialize config + tasks + playbook files for CLI runs."""
    workdir.mkdir(parents=True, exist_ok=True)
    playbook_path = workdir / "playbook.json"
    playbook_path.write_text(
        json.dumps({"playbook": planted_playbook_entries()}, ensure_ascii=False, indent=2),
        encoding="utf-8",
    )
    config = {
        "schema_version": 1,
        "domain": "math",
        "backend": {"policy": {"kind": "scripted", "playbook_file": "playbook.json"}},
        "concurrency": 4,
    }
    config_path = workdir / "config.json"
    config_path.write_text(json.dumps(config, ensure_ascii=False, indent=2), encoding="utf-8")
    tasks_path = workdir / "tasks12.jsonl"
    with open(tasks_path, "w", encoding="utf-8") as fh:
        for task in planted_tasks():
            fh.write(json.dumps(task.to_json_dict(), ensure_ascii=False) + "\n")
    return PlantedWorld(workdir=workdir, config_path=config_path, tasks_path=tasks_path)


@pytest.fixture()
def planted_world(tmp_path) -> PlantedWorld:
    return write_planted_world(tmp_path / "world")


@pytest.fixture(scope="session")
def demos() -> DemoSet:
    return DemoSet.load_default()
