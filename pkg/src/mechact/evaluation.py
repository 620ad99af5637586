"""Evaluation: per-mechanism accuracy, voting ensembles, and the
mechanism-specificity analysis of a reward matrix."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .calculator import format_number
from .errors import ConfigError, GatewayError, ValidationError
from .explorer import (
    DEFAULT_TURN_BUDGET,
    DemoSet,
    EpisodeEnvironment,
    normalize_kiqa_answer,
    normalize_math_answer,
    run_episode,
    score_answer,
)
from .gateway import Backend, SamplingParams
from .model import Domain, Mechanism, RewardMatrix, SCHEMA_VERSION, Task, Trajectory

CONSISTENCY_TEMPERATURE = 0.7
CONSISTENCY_TOP_P = 1.0


def _vote_key(answer: str | None, domain: Domain) -> str:
    if domain == Domain.MATH:
        value = normalize_math_answer(answer)
        return format_number(value) if value is not None else (answer or "").strip()
    return normalize_kiqa_answer(answer)


def majority_vote(answers: Sequence[str | None], domain: Domain) -> str | None:
    """Most frequent answer after domain normalization; ties go to the
    earliest answer, so callers passing answers in mechanism order get the
    mechanism-order tie-break. The winner is always an element of the
    input."""
    answers = list(answers)
    if not answers:
        raise ValidationError("majority vote needs at least one answer")
    counts: dict[str, int] = {}
    first_at: dict[str, int] = {}
    for i, answer in enumerate(answers):
        key = _vote_key(answer, domain)
        counts[key] = counts.get(key, 0) + 1
        first_at.setdefault(key, i)
    best = max(counts, key=lambda k: (counts[k], -first_at[k]))
    return answers[first_at[best]]


# ---------------------------------------------------------------------------
# Mechanism specificity


@dataclass(frozen=True)
class SpecificityReport:
    """How much of each mechanism's accuracy is mechanism-specific.

    olama counts a task as solved if any mechanism solved it: the ceiling
    of adaptive mechanism activation. solved_by_all <= every accuracy <=
    olama always holds; the gap between olama and the best single accuracy
    is what routing between mechanisms can add.
    """

    n_tasks: int
    solved_by_all: float
    olama: float
    per_mechanism_accuracy: dict[str, float]
    residual: dict[str, float]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "n_tasks": self.n_tasks,
            "solved_by_all": self.solved_by_all,
            "olama": self.olama,
            "per_mechanism_accuracy": dict(self.per_mechanism_accuracy),
            "residual": dict(self.residual),
        }


def specificity_report(matrix: RewardMatrix) -> SpecificityReport:
    if matrix.n_tasks == 0:
        raise ValidationError("specificity undefined for zero tasks")
    cells = matrix.cells
    solved_by_all = float(cells.all(axis=0).mean())
    olama = float(cells.any(axis=0).mean())
    accuracy = {
        mechanism.label: float(cells[i].mean()) for i, mechanism in enumerate(matrix.mechanisms)
    }
    residual = {label: acc - solved_by_all for label, acc in accuracy.items()}
    return SpecificityReport(
        n_tasks=matrix.n_tasks,
        solved_by_all=solved_by_all,
        olama=olama,
        per_mechanism_accuracy=accuracy,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# Agent evaluation


@dataclass(frozen=True)
class TaskOutcome:
    task_id: str
    predicted: str | None
    reward: int
    votes: tuple[str | None, ...] = ()


@dataclass(frozen=True)
class EvalReport:
    mode: str
    dataset: str
    metric_name: str
    n: int
    n_infra_failed: int
    score: float | None
    per_task: tuple[TaskOutcome, ...]

    def to_json_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "mode": self.mode,
            "dataset": self.dataset,
            "n": self.n,
            "metric_name": self.metric_name,
            "score": self.score,
            "n_infra_failed": self.n_infra_failed,
            "per_task": [
                {
                    "task_id": o.task_id,
                    "predicted": o.predicted,
                    "reward": o.reward,
                    **({"votes": list(o.votes)} if o.votes else {}),
                }
                for o in self.per_task
            ],
        }


MODE_SINGLE = "single"
MODE_ZERO_SHOT = "zero_shot"
MODE_MAJORITY = "majority"
MODE_CONSISTENCY = "self_adapt_consistency"

_LABELS_LOWER = {m.label.lower(): m for m in Mechanism.ordered()}


def parse_mode(mode: str) -> tuple[str, object]:
    """Mode strings: zero_shot | majority | single:<mechanism> |
    self_adapt_consistency:<k>. Mechanism labels are case-insensitive."""
    if mode == MODE_ZERO_SHOT:
        return (MODE_ZERO_SHOT, None)
    if mode == MODE_MAJORITY:
        return (MODE_MAJORITY, None)
    if mode.startswith(MODE_SINGLE + ":"):
        label = mode.split(":", 1)[1]
        mechanism = _LABELS_LOWER.get(label.lower())
        if mechanism is None:
            raise ConfigError(f"unknown mechanism {label!r}")
        return (MODE_SINGLE, mechanism)
    if mode.startswith(MODE_CONSISTENCY + ":"):
        raw = mode.split(":", 1)[1]
        try:
            k = int(raw)
        except ValueError:
            raise ConfigError(f"sample count must be an integer, got {raw!r}") from None
        if k < 1:
            raise ConfigError("sample count must be >= 1")
        return (MODE_CONSISTENCY, k)
    raise ConfigError(f"unknown eval mode {mode!r}")


def _dataset_name(tasks: Sequence[Task]) -> str:
    names = {t.dataset for t in tasks}
    return names.pop() if len(names) == 1 else "mixed"


def evaluate(
    tasks: Sequence[Task],
    mode: str,
    backend: Backend | None,
    environment: EpisodeEnvironment,
    demos: DemoSet | None = None,
    *,
    params: SamplingParams | None = None,
    turn_budget: int = DEFAULT_TURN_BUDGET,
    base_seed: int = 0,
    mechanisms: Sequence[Mechanism] | None = None,
    stored_trajectories: Sequence[Trajectory] | None = None,
) -> EvalReport:
    """Score an agent over a task set in one of four modes.

    single:<mechanism> activates one mechanism via its demo; zero_shot lets
    the agent act without a demo; majority votes over all mechanisms;
    self_adapt_consistency:<k> votes over k sampled zero-shot runs at
    temperature 0.7. Tasks whose backend calls fail are excluded from the
    denominator and counted separately.

    majority mode re-runs inference by default; passing stored_trajectories
    votes over previously collected episodes instead (tasks with no stored
    trajectory are skipped).
    """
    tasks = list(tasks)
    if not tasks:
        raise ConfigError("evaluation needs at least one task")
    domains = {t.domain for t in tasks}
    if len(domains) != 1:
        raise ConfigError("evaluation tasks must share one domain")
    domain = domains.pop()
    if domain != environment.domain:
        raise ConfigError("task domain does not match environment domain")
    kind, arg = parse_mode(mode)
    mechanisms = list(mechanisms) if mechanisms is not None else Mechanism.ordered()
    if stored_trajectories is not None and kind != MODE_MAJORITY:
        raise ConfigError("stored trajectories only apply to majority mode")
    if stored_trajectories is None:
        if backend is None:
            raise ConfigError(f"mode {mode!r} needs a backend")
        if kind in (MODE_SINGLE, MODE_MAJORITY):
            if demos is None:
                raise ConfigError(f"mode {mode!r} needs demos")
            demos.require([arg] if kind == MODE_SINGLE else mechanisms, domain)
    params = params or SamplingParams()
    metric_name = "accuracy" if domain == Domain.MATH else "em"

    stored: dict[tuple[Mechanism, str], Trajectory] = {}
    if stored_trajectories is not None:
        for traj in stored_trajectories:
            stored[(traj.mechanism, traj.task_id)] = traj

    outcomes: list[TaskOutcome] = []
    n_infra = 0
    for task in tasks:
        try:
            if kind == MODE_SINGLE:
                result = run_episode(
                    task, demos.get(arg, domain), backend, environment, arg,
                    turn_budget=turn_budget, params=params,
                )
                outcome = TaskOutcome(task.id, result.trajectory.extracted_answer, result.reward)
            elif kind == MODE_ZERO_SHOT:
                result = run_episode(
                    task, None, backend, environment, turn_budget=turn_budget, params=params
                )
                outcome = TaskOutcome(task.id, result.trajectory.extracted_answer, result.reward)
            elif kind == MODE_MAJORITY:
                votes: list[str | None] = []
                if stored_trajectories is not None:
                    hits = [
                        stored[(m, task.id)] for m in mechanisms if (m, task.id) in stored
                    ]
                    if not hits:
                        continue
                    votes = [t.extracted_answer for t in hits]
                else:
                    for mechanism in mechanisms:
                        result = run_episode(
                            task, demos.get(mechanism, domain), backend, environment, mechanism,
                            turn_budget=turn_budget, params=params,
                        )
                        votes.append(result.trajectory.extracted_answer)
                predicted = majority_vote(votes, domain)
                outcome = TaskOutcome(
                    task.id, predicted, score_answer(predicted, task.gold_answer, domain),
                    votes=tuple(votes),
                )
            else:
                votes = []
                for i in range(arg):
                    sample_params = SamplingParams(
                        temperature=CONSISTENCY_TEMPERATURE,
                        top_p=CONSISTENCY_TOP_P,
                        max_tokens=params.max_tokens,
                        seed=base_seed + i,
                    )
                    result = run_episode(
                        task, None, backend, environment,
                        turn_budget=turn_budget, params=sample_params,
                    )
                    votes.append(result.trajectory.extracted_answer)
                predicted = majority_vote(votes, domain)
                outcome = TaskOutcome(
                    task.id, predicted, score_answer(predicted, task.gold_answer, domain),
                    votes=tuple(votes),
                )
        except GatewayError:
            n_infra += 1
            continue
        outcomes.append(outcome)

    score = math.fsum(o.reward for o in outcomes) / len(outcomes) if outcomes else None
    return EvalReport(
        mode=mode,
        dataset=_dataset_name(tasks),
        metric_name=metric_name,
        n=len(outcomes),
        n_infra_failed=n_infra,
        score=score,
        per_task=tuple(outcomes),
    )


def evaluate_suite(
    tasks: Sequence[Task],
    backend: Backend,
    environment: EpisodeEnvironment,
    demos: DemoSet,
    *,
    params: SamplingParams | None = None,
    turn_budget: int = DEFAULT_TURN_BUDGET,
) -> dict[str, EvalReport]:
    """Five single-mechanism evaluations plus the majority ensemble."""
    reports: dict[str, EvalReport] = {}
    for mechanism in Mechanism.ordered():
        mode = f"single:{mechanism.label}"
        reports[mode] = evaluate(
            tasks, mode, backend, environment, demos, params=params, turn_budget=turn_budget
        )
    reports[MODE_MAJORITY] = evaluate(
        tasks, MODE_MAJORITY, backend, environment, demos, params=params, turn_budget=turn_budget
    )
    return reports


def write_summary_csv(path: str | Path, reports: dict[str, EvalReport]) -> None:
    """One row per mechanism in index order, then the mechanism average,
    then the majority ensemble."""
    rows: list[tuple[str, float | None]] = []
    singles = []
    for mechanism in Mechanism.ordered():
        report = reports.get(f"single:{mechanism.label}")
        if report is None:
            continue
        rows.append((mechanism.label, report.score))
        if report.score is not None:
            singles.append(report.score)
    if singles:
        rows.append(("Average", math.fsum(singles) / len(singles)))
    majority = reports.get(MODE_MAJORITY)
    if majority is not None:
        rows.append(("Majority Voting", majority.score))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["setting", "score"])
        for label, score in rows:
            writer.writerow([label, "" if score is None else f"{score:.6f}"])
