"""Self-exploration: drive one episode per (mechanism, task) cell and collect
canonical-format trajectories plus a binary reward matrix.

Episodes speak the shared Thought/Action/Observation grammar. The model sees
the domain system prompt and a one-shot demo for the mechanism being
activated; its turns are parsed, routed to the environment, and re-rendered
canonically. An unparseable turn earns one reprompt with a format reminder,
then the episode is truncated with reward 0.

explore_all() journals every completed cell to an append-only checkpoint so
interrupted runs resume without repeating work, and its final outputs are
written in canonical cell order so equal inputs give byte-identical files.
"""

from __future__ import annotations

import json
import re
import string
import threading
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .calculator import calculate
from .environment import (
    CRITIC_UNAVAILABLE,
    NO_SIMILAR_CASE,
    Docstore,
    DocstoreState,
    Embedder,
    MemoryStore,
    lookup,
    reflect,
    retrieve_memory,
    search,
)
from .errors import (
    ConfigError,
    DomainActionError,
    GatewayError,
    InfraError,
    ParseError,
    TransformError,
    ValidationError,
)
from .gateway import (
    Backend,
    ChatMessage,
    SamplingParams,
    assistant_message,
    system_message,
    user_message,
)
from .grammar import (
    env_turn_text,
    grounding_observation,
    parse_agent_turn,
    render_agent_turn,
    system_prompt,
    task_statement_text,
    default_registry,
)
from .model import (
    Action,
    ActionKind,
    AgentTurn,
    Demo,
    Domain,
    EnvSource,
    EnvTurn,
    MAX_TOOL_CALLS,
    Mechanism,
    RewardMatrix,
    SCHEMA_VERSION,
    Task,
    TOOL_KINDS,
    Trajectory,
    TrajectoryFormat,
    deserialize_trajectory,
    serialize_trajectory,
)

DEFAULT_TURN_BUDGET = 12
DEFAULT_INFRA_FAILURE_THRESHOLD = 0.05

FORMAT_REMINDER = (
    "Your last response could not be parsed. Reply with exactly one step in "
    "the format:\nThought: <your thoughts>\nAction: <your next action>"
)

import numpy as np  # noqa: E402  (after stdlib block by style of surrounding modules)


# ---------------------------------------------------------------------------
# Answer scoring

_MATH_STRIP = re.compile(r"[,\s$€£¥%]")
_ARTICLES = re.compile(r"\b(a|an|the)\b")
MATH_ANSWER_ATOL = 1e-6


def normalize_math_answer(text: str | None) -> float | None:
    """Numeric value of an answer, or None if it does not parse.

    Strips commas, currency symbols, percent signs, whitespace, and a
    trailing period before parsing.
    """
    if text is None:
        return None
    s = _MATH_STRIP.sub("", text)
    s = s.rstrip(".")
    if not s:
        return None
    try:
        return float(s)
    except ValueError:
        return None


def normalize_kiqa_answer(text: str | None) -> str:
    """SQuAD-style normalization: lowercase, drop punctuation and articles,
    collapse whitespace."""
    if text is None:
        return ""
    s = text.lower()
    s = "".join(ch for ch in s if ch not in string.punctuation)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def score_answer(predicted: str | None, gold: str, domain: Domain) -> int:
    """Binary reward: numeric match within 1e-6 for math, normalized exact
    match for knowledge tasks."""
    if domain == Domain.MATH:
        p = normalize_math_answer(predicted)
        g = normalize_math_answer(gold)
        if p is None or g is None:
            return 0
        return int(abs(p - g) <= MATH_ANSWER_ATOL)
    p = normalize_kiqa_answer(predicted)
    g = normalize_kiqa_answer(gold)
    return int(bool(p) and p == g)


# ---------------------------------------------------------------------------
# Demos


class DemoSet:
    """One demo per (mechanism, domain). Hand-written demos ship with the
    package; a directory of {domain}_{mechanism-stem}.txt files can override
    them."""

    _STEMS = {
        Mechanism.REASON: "reason",
        Mechanism.PLAN: "plan",
        Mechanism.MEMORY: "memory",
        Mechanism.REFLECTION: "reflection",
        Mechanism.EXTERNAL_AUGMENTATION: "augmentation",
    }

    def __init__(self, demos: dict[tuple[Mechanism, Domain], Demo]):
        self._demos = dict(demos)

    def get(self, mechanism: Mechanism, domain: Domain) -> Demo:
        demo = self._demos.get((mechanism, domain))
        if demo is None:
            raise ConfigError(f"no demo for ({mechanism.label}, {domain.value})")
        return demo

    def require(self, mechanisms: Sequence[Mechanism], domain: Domain) -> None:
        for m in mechanisms:
            self.get(m, domain)

    @classmethod
    def load_default(cls) -> "DemoSet":
        demos = {}
        root = resources.files("mechact.demos")
        for domain in Domain:
            for mechanism, stem in cls._STEMS.items():
                text = root.joinpath(f"{domain.value}_{stem}.txt").read_text(encoding="utf-8")
                demos[(mechanism, domain)] = Demo(
                    mechanism=mechanism, domain=domain, content=text.rstrip("\n")
                )
        return cls(demos)

    @classmethod
    def load_dir(cls, path: str | Path) -> "DemoSet":
        demos = {}
        base = Path(path)
        for domain in Domain:
            for mechanism, stem in cls._STEMS.items():
                fpath = base / f"{domain.value}_{stem}.txt"
                if not fpath.exists():
                    continue
                demos[(mechanism, domain)] = Demo(
                    mechanism=mechanism,
                    domain=domain,
                    content=fpath.read_text(encoding="utf-8").rstrip("\n"),
                )
        if not demos:
            raise ConfigError(f"no demo files found under {path}")
        return cls(demos)


# ---------------------------------------------------------------------------
# Episode environment


@dataclass
class EpisodeEnvironment:
    """Tool bindings for one exploration run."""

    domain: Domain
    docstore: Docstore | None = None
    memory_store: MemoryStore | None = None
    embedder: Embedder | None = None
    critic: Backend | None = None
    memory_k: int = 1

    def respond(
        self,
        turn: AgentTurn,
        question: str,
        state: DocstoreState,
        dialogue: Sequence[ChatMessage],
    ) -> EnvTurn:
        kind = turn.action.kind
        if kind in (ActionKind.MAKE_PLAN, ActionKind.CARRY_OUT_PLAN):
            return grounding_observation(kind, self.domain)
        if kind == ActionKind.RETRIEVE_MEMORY:
            if self.memory_store is None or self.embedder is None:
                case = NO_SIMILAR_CASE
            else:
                case = retrieve_memory(question, self.memory_store, self.embedder, self.memory_k)
            return grounding_observation(kind, self.domain, context=case)
        if kind == ActionKind.REFLECT:
            if self.critic is None:
                return EnvTurn(CRITIC_UNAVAILABLE, EnvSource.CRITIC_REVIEW)
            try:
                review = reflect(dialogue, self.critic)
            except GatewayError:
                return EnvTurn(CRITIC_UNAVAILABLE, EnvSource.CRITIC_REVIEW)
            return grounding_observation(kind, self.domain, context=review)
        if kind == ActionKind.CALCULATE:
            return grounding_observation(kind, self.domain, context=calculate(turn.action.arg))
        if kind == ActionKind.SEARCH:
            return grounding_observation(
                kind, self.domain, context=search(turn.action.arg, self.docstore, state)
            )
        if kind == ActionKind.LOOKUP:
            return grounding_observation(kind, self.domain, context=lookup(turn.action.arg, state))
        raise ValidationError(f"no environment response for action {kind.value}")


# ---------------------------------------------------------------------------
# Episodes


def classify_mechanism(kinds: Sequence[ActionKind]) -> Mechanism:
    """Which mechanism a turn sequence activated (used for zero-shot runs)."""
    if not kinds:
        return Mechanism.REASON
    first = kinds[0]
    if first == ActionKind.MAKE_PLAN:
        return Mechanism.PLAN
    if first == ActionKind.RETRIEVE_MEMORY:
        return Mechanism.MEMORY
    if first == ActionKind.REFLECT:
        return Mechanism.REFLECTION
    if first in TOOL_KINDS:
        return Mechanism.EXTERNAL_AUGMENTATION
    return Mechanism.REASON


@dataclass
class EpisodeResult:
    trajectory: Trajectory  # raw in-context format
    reward: int
    n_reprompts: int = 0
    truncation_reason: str | None = None


def run_episode(
    task: Task,
    demo: Demo | None,
    backend: Backend,
    environment: EpisodeEnvironment,
    mechanism: Mechanism | None = None,
    *,
    turn_budget: int = DEFAULT_TURN_BUDGET,
    params: SamplingParams | None = None,
) -> EpisodeResult:
    """Run one Thought/Action/Observation episode.

    With a demo, the model is steered toward that mechanism's workflow; with
    demo=None the agent picks actions on its own (zero-shot mode). Backend
    failures propagate as GatewayError so batch runners can account for them.
    """
    if task.domain != environment.domain:
        raise ConfigError(
            f"task domain {task.domain.value} does not match environment {environment.domain.value}"
        )
    if demo is not None and demo.domain != task.domain:
        raise ConfigError("demo domain does not match task domain")
    params = params or SamplingParams()
    domain = task.domain

    opening = task_statement_text(task.question)
    if demo is not None:
        opening = f"{demo.content}\n\n{opening}"
    messages = [system_message(system_prompt(domain)), user_message(opening)]
    turns: list[AgentTurn | EnvTurn] = [EnvTurn(task.question, EnvSource.TASK_STATEMENT)]
    state = DocstoreState()

    n_reprompts = 0
    truncated = False
    truncation_reason: str | None = None
    extracted: str | None = None
    reward = 0

    for _ in range(turn_budget):
        text = backend.complete(messages, params)
        try:
            agent_turn = parse_agent_turn(text, domain)
        except (ParseError, DomainActionError):
            n_reprompts += 1
            messages.append(assistant_message(text))
            messages.append(user_message(FORMAT_REMINDER))
            text = backend.complete(messages, params)
            try:
                agent_turn = parse_agent_turn(text, domain)
            except (ParseError, DomainActionError) as exc:
                truncated = True
                truncation_reason = f"parse failure: {exc}"
                break
        turns.append(agent_turn)
        messages.append(assistant_message(render_agent_turn(agent_turn)))
        if agent_turn.action.kind == ActionKind.FINISH:
            extracted = agent_turn.action.arg
            reward = score_answer(extracted, task.gold_answer, domain)
            break
        env_turn = environment.respond(agent_turn, task.question, state, messages)
        turns.append(env_turn)
        messages.append(user_message(env_turn_text(env_turn)))
    else:
        truncated = True
        truncation_reason = "turn budget exhausted"

    if truncated:
        reward = 0
        extracted = None
    if mechanism is None:
        mechanism = (
            demo.mechanism
            if demo is not None
            else classify_mechanism([t.action.kind for t in turns if isinstance(t, AgentTurn)])
        )
    trajectory = Trajectory(
        task_id=task.id,
        domain=domain,
        mechanism=mechanism,
        turns=tuple(turns),
        reward=reward,
        format=TrajectoryFormat.ICL_RAW,
        extracted_answer=extracted,
        truncated=truncated,
    )
    return EpisodeResult(
        trajectory=trajectory,
        reward=reward,
        n_reprompts=n_reprompts,
        truncation_reason=truncation_reason,
    )


# ---------------------------------------------------------------------------
# Canonicalization

_MY_PLAN_PREFIX = re.compile(r"\s*my plan:\s*", re.IGNORECASE)


def _expect_prefix(
    kinds: list[ActionKind], skeleton: tuple[ActionKind, ...], traj: Trajectory
) -> None:
    label = traj.mechanism.label
    if not kinds:
        raise TransformError(f"no agent turns to transform for {label}")
    if traj.truncated:
        if kinds != list(skeleton[: len(kinds)]):
            raise TransformError(f"unexpected action sequence for {label}")
    elif kinds != list(skeleton):
        raise TransformError(f"unexpected action sequence for {label}")


def _env_after(traj: Trajectory, agent_position: int) -> EnvTurn | None:
    idx = 2 * agent_position + 2  # task statement at 0, agent turns at odd indices
    if idx < len(traj.turns):
        turn = traj.turns[idx]
        assert isinstance(turn, EnvTurn)
        return turn
    return None


def uniact_transform(traj: Trajectory) -> Trajectory:
    """Canonicalize a raw exploration trajectory into the shared format.

    Mechanism-trigger turns get their template-pinned thoughts; extracted
    components (plan text, retrieved case, critic review, tool calls) are
    filled into the mechanism's skeleton. Reward, extracted answer, and the
    truncation flag carry over unchanged. Raises TransformError when a
    required component is missing, in which case callers drop the trajectory
    and count it.
    """
    if traj.format != TrajectoryFormat.ICL_RAW:
        raise TransformError("transform expects a raw exploration trajectory")
    registry = default_registry()
    mech, domain = traj.mechanism, traj.domain
    agent_turns = traj.agent_turns()
    kinds = [t.action.kind for t in agent_turns]
    new_turns: list[AgentTurn | EnvTurn] = [traj.turns[0]]

    if mech == Mechanism.REASON:
        _expect_prefix(kinds, (ActionKind.FINISH,), traj)
        new_turns.append(agent_turns[0])

    elif mech == Mechanism.PLAN:
        _expect_prefix(
            kinds, (ActionKind.MAKE_PLAN, ActionKind.CARRY_OUT_PLAN, ActionKind.FINISH), traj
        )
        new_turns.append(
            AgentTurn(registry.fixed_thought(mech, domain, 0), Action(ActionKind.MAKE_PLAN))
        )
        new_turns.append(grounding_observation(ActionKind.MAKE_PLAN, domain))
        if len(kinds) >= 2:
            plan = _MY_PLAN_PREFIX.sub("", agent_turns[1].thought, count=1).strip()
            if not plan:
                raise TransformError("no plan text found")
            new_turns.append(AgentTurn(f"My plan: {plan}", Action(ActionKind.CARRY_OUT_PLAN)))
            new_turns.append(grounding_observation(ActionKind.CARRY_OUT_PLAN, domain))
        if len(kinds) == 3:
            new_turns.append(agent_turns[2])

    elif mech == Mechanism.MEMORY:
        _expect_prefix(kinds, (ActionKind.RETRIEVE_MEMORY, ActionKind.FINISH), traj)
        case_turn = _env_after(traj, 0)
        if case_turn is None or case_turn.source != EnvSource.MEMORY_CASE:
            raise TransformError("no retrieved case found")
        new_turns.append(
            AgentTurn(registry.fixed_thought(mech, domain, 0), Action(ActionKind.RETRIEVE_MEMORY))
        )
        new_turns.append(case_turn)
        if len(kinds) == 2:
            new_turns.append(agent_turns[1])

    elif mech == Mechanism.REFLECTION:
        _expect_prefix(kinds, (ActionKind.REFLECT, ActionKind.FINISH), traj)
        review_turn = _env_after(traj, 0)
        if review_turn is None or review_turn.source != EnvSource.CRITIC_REVIEW:
            raise TransformError("no critic review found")
        new_turns.append(agent_turns[0])
        new_turns.append(review_turn)
        if len(kinds) == 2:
            new_turns.append(agent_turns[1])

    else:  # external augmentation: copy tool calls and results through
        tool_part = kinds[:-1] if (kinds and kinds[-1] == ActionKind.FINISH) else kinds
        if any(k not in TOOL_KINDS for k in tool_part) or (
            kinds and kinds[-1] not in TOOL_KINDS and kinds[-1] != ActionKind.FINISH
        ):
            raise TransformError("unexpected action sequence for ExternalAugmentation")
        if not tool_part:
            raise TransformError("no tool calls")
        if len(tool_part) > MAX_TOOL_CALLS:
            raise TransformError("too many tool calls")
        new_turns = list(traj.turns)

    try:
        return Trajectory(
            task_id=traj.task_id,
            domain=domain,
            mechanism=mech,
            turns=tuple(new_turns),
            reward=traj.reward,
            format=TrajectoryFormat.UNIACT,
            extracted_answer=traj.extracted_answer,
            truncated=traj.truncated,
        )
    except ValidationError as exc:
        raise TransformError(f"canonical trajectory invalid: {exc}") from exc


# ---------------------------------------------------------------------------
# Batch exploration


@dataclass
class ExplorationRun:
    tasks: list[Task]
    mechanisms: list[Mechanism]
    demos: DemoSet
    backend: Backend
    environment: EpisodeEnvironment
    out_dir: Path
    turn_budget: int = DEFAULT_TURN_BUDGET
    concurrency: int = 8
    params: SamplingParams = field(default_factory=SamplingParams)
    infra_failure_threshold: float = DEFAULT_INFRA_FAILURE_THRESHOLD
    resume: bool = False

    def __post_init__(self):
        if not self.tasks:
            raise ConfigError("exploration needs at least one task")
        if not self.mechanisms:
            raise ConfigError("exploration needs at least one mechanism")
        self.mechanisms = sorted(set(self.mechanisms), key=lambda m: m.index)
        domains = {t.domain for t in self.tasks}
        if len(domains) != 1:
            raise ConfigError("exploration tasks must share one domain")
        if next(iter(domains)) != self.environment.domain:
            raise ConfigError("task domain does not match environment domain")
        self.demos.require(self.mechanisms, self.environment.domain)


@dataclass
class ExploreResult:
    trajectories: list[Trajectory]
    matrix: RewardMatrix
    report: dict


def _read_journal(path: Path) -> dict[tuple[str, str], dict]:
    completed: dict[tuple[str, str], dict] = {}
    if not path.exists():
        return completed
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            entry = json.loads(line)
            completed[(entry["mechanism"], entry["task_id"])] = entry
    return completed


def explore_all(run: ExplorationRun) -> ExploreResult:
    """Explore every (mechanism, task) cell, journal checkpoints, and write
    traj.jsonl / rewards.json / report.json into the run directory.

    Infra failures (backend down after retries) never enter the reward
    matrix; if their rate exceeds the configured threshold the run aborts
    with InfraError and can be resumed from the journal.
    """
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    journal_path = out_dir / "journal.jsonl"
    if not run.resume and journal_path.exists():
        journal_path.unlink()
    completed = _read_journal(journal_path) if run.resume else {}
    # Infra failures are transient: a resume retries them instead of carrying
    # them over, otherwise their columns would stay excluded forever.
    completed = {key: e for key, e in completed.items() if e["status"] != "infra"}

    cells = [(m, t) for m in run.mechanisms for t in run.tasks]
    pending = [(m, t) for (m, t) in cells if (m.label, t.id) not in completed]
    max_infra = run.infra_failure_threshold * len(cells)

    lock = threading.Lock()
    abort = threading.Event()
    infra_count = 0
    journal_fh = open(journal_path, "a", encoding="utf-8")

    def work(cell: tuple[Mechanism, Task]) -> None:
        nonlocal infra_count
        mechanism, task = cell
        if abort.is_set():
            return
        demo = run.demos.get(mechanism, run.environment.domain)
        entry: dict = {"mechanism": mechanism.label, "task_id": task.id}
        try:
            result = run_episode(
                task,
                demo,
                run.backend,
                run.environment,
                mechanism,
                turn_budget=run.turn_budget,
                params=run.params,
            )
        except GatewayError as exc:
            entry.update(status="infra", reward=None, record=None, reason=str(exc))
        else:
            entry.update(
                reward=result.reward,
                n_reprompts=result.n_reprompts,
                truncated=result.trajectory.truncated,
            )
            try:
                canonical = uniact_transform(result.trajectory)
            except TransformError as exc:
                entry.update(status="dropped", record=None, reason=str(exc))
            else:
                entry.update(status="ok", record=serialize_trajectory(canonical))
        with lock:
            journal_fh.write(json.dumps(entry, ensure_ascii=False, separators=(",", ":")) + "\n")
            journal_fh.flush()
            completed[(mechanism.label, task.id)] = entry
            if entry["status"] == "infra":
                infra_count += 1
                if infra_count > max_infra:
                    abort.set()

    try:
        if run.concurrency <= 1:
            for cell in pending:
                work(cell)
        else:
            with ThreadPoolExecutor(max_workers=run.concurrency) as pool:
                futures = [pool.submit(work, cell) for cell in pending]
                try:
                    for future in as_completed(futures):
                        future.result()
                except KeyboardInterrupt:
                    # journal is flushed per cell; stop workers and exit clean
                    abort.set()
                    pool.shutdown(wait=True, cancel_futures=True)
                    raise
    finally:
        journal_fh.close()

    if abort.is_set():
        raise InfraError(
            f"{infra_count} infra failures exceed threshold "
            f"{run.infra_failure_threshold:.0%} of {len(cells)} cells; "
            f"checkpoint kept at {journal_path}, rerun with resume to continue"
        )

    trajectories: list[Trajectory] = []
    dropped, infra_failures = [], []
    n_reprompts = 0
    n_truncated = 0
    for mechanism, task in cells:
        entry = completed.get((mechanism.label, task.id))
        if entry is None:
            continue
        n_reprompts += entry.get("n_reprompts") or 0
        n_truncated += 1 if entry.get("truncated") else 0
        if entry["status"] == "ok":
            trajectories.append(deserialize_trajectory(entry["record"]))
        elif entry["status"] == "dropped":
            dropped.append(
                {"task_id": task.id, "mechanism": mechanism.label, "reason": entry["reason"]}
            )
        else:
            infra_failures.append(
                {"task_id": task.id, "mechanism": mechanism.label, "reason": entry["reason"]}
            )

    excluded_tasks = sorted({f["task_id"] for f in infra_failures})
    kept_tasks = [t for t in run.tasks if t.id not in excluded_tasks]
    matrix = RewardMatrix(
        mechanisms=tuple(run.mechanisms),
        task_ids=tuple(t.id for t in kept_tasks),
        cells=np.array(
            [
                [completed[(m.label, t.id)]["reward"] for t in kept_tasks]
                for m in run.mechanisms
            ],
            dtype=np.int8,
        ).reshape(len(run.mechanisms), len(kept_tasks)),
    )
    report = {
        "schema_version": SCHEMA_VERSION,
        "n_cells": len(cells),
        "n_ok": len(trajectories),
        "n_dropped": len(dropped),
        "n_infra": len(infra_failures),
        "n_truncated": n_truncated,
        "n_reprompts": n_reprompts,
        "dropped": dropped,
        "infra_failures": infra_failures,
        "excluded_task_ids": excluded_tasks,
    }

    with open(out_dir / "traj.jsonl", "w", encoding="utf-8") as fh:
        for traj in trajectories:
            fh.write(serialize_trajectory(traj) + "\n")
    matrix.save(out_dir / "rewards.json")
    with open(out_dir / "report.json", "w", encoding="utf-8") as fh:
        json.dump(report, fh, ensure_ascii=False, indent=2, sort_keys=False)
        fh.write("\n")
    return ExploreResult(trajectories=trajectories, matrix=matrix, report=report)
