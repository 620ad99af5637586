"""Shared action grammar: parse and render agent turns, serve canonical templates.

The per-mechanism dialogue templates and the two system prompts ship as
versioned resource files under ``templates/``, transcribed verbatim from the
upstream format tables (including their spelling quirks, which are load-bearing
for byte-exact fidelity). The registry parses those files once and exposes
grounding observations, fixed thoughts, and mechanism skeletons derived from
them, so there is a single source of truth for every canonical string.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import DomainActionError, ParseError, TemplateError
from .model import (
    Action,
    ActionKind,
    Domain,
    EnvSource,
    EnvTurn,
    Mechanism,
    AgentTurn,
    TOOL_KINDS,
    action_legal_in,
)

# Surface forms used in rendered actions, e.g. "Action: Make plan".
SURFACE_FORMS = {
    ActionKind.MAKE_PLAN: "Make plan",
    ActionKind.CARRY_OUT_PLAN: "Carry out plan",
    ActionKind.RETRIEVE_MEMORY: "Retrieve memory",
    ActionKind.REFLECT: "Reflect",
    ActionKind.CALCULATE: "Calculate",
    ActionKind.SEARCH: "Search",
    ActionKind.LOOKUP: "Lookup",
    ActionKind.FINISH: "Finish",
}
_BARE_BY_NAME = {
    "make plan": ActionKind.MAKE_PLAN,
    "carry out plan": ActionKind.CARRY_OUT_PLAN,
    "retrieve memory": ActionKind.RETRIEVE_MEMORY,
    "reflect": ActionKind.REFLECT,
}
_BRACKET_BY_NAME = {
    "calculate": ActionKind.CALCULATE,
    "search": ActionKind.SEARCH,
    "lookup": ActionKind.LOOKUP,
    "finish": ActionKind.FINISH,
}

_ALLOWED_PLACEHOLDERS = {
    "task",
    "thought",
    "pre thought",
    "post thought",
    "plan",
    "case",
    "reflection",
    "expression",
    "entity",
    "keyword",
    "result",
    "answer",
}

_PLACEHOLDER_RE = re.compile(r"\{([a-z ]+)\}")

_TEMPLATE_FILES = {
    Mechanism.REASON: "reason",
    Mechanism.PLAN: "plan",
    Mechanism.MEMORY: "memory",
    Mechanism.REFLECTION: "reflection",
    Mechanism.EXTERNAL_AUGMENTATION: "augmentation",
}


@dataclass(frozen=True)
class TemplateAgentLine:
    """One Agent line of a mechanism template."""

    thought: str  # literal text or a "{placeholder}"
    kinds: tuple[ActionKind, ...]  # alternatives ("Search[...] or Lookup[...]")
    arg_placeholder: str | None
    repeatable: bool = False

    @property
    def fixed_thought(self) -> str | None:
        """The thought text when the template pins it, else None."""
        return None if _PLACEHOLDER_RE.fullmatch(self.thought) else self.thought


@dataclass(frozen=True)
class TemplateEnvLine:
    """One Environment line of a mechanism template."""

    observation: str  # with placeholders, "Task: "/"Observation: " prefix stripped
    is_task: bool
    repeatable: bool = False


@dataclass(frozen=True)
class MechanismTemplate:
    mechanism: Mechanism
    domain: Domain
    lines: tuple[TemplateAgentLine | TemplateEnvLine, ...]

    def agent_lines(self) -> list[TemplateAgentLine]:
        return [l for l in self.lines if isinstance(l, TemplateAgentLine)]


def _check_placeholders(text: str, origin: str) -> None:
    for name in _PLACEHOLDER_RE.findall(text):
        if name not in _ALLOWED_PLACEHOLDERS:
            raise TemplateError(f"{origin}: unknown placeholder {{{name}}}")


def _parse_action_spec(spec: str, origin: str) -> tuple[tuple[ActionKind, ...], str | None]:
    kinds: list[ActionKind] = []
    arg_placeholder: str | None = None
    for alternative in spec.split(" or "):
        alternative = alternative.strip()
        m = re.fullmatch(r"([A-Za-z ]+?)\[\{([a-z ]+)\}\]", alternative)
        if m:
            name, placeholder = m.group(1), m.group(2)
            kind = _BRACKET_BY_NAME.get(name.strip().lower())
            if kind is None:
                raise TemplateError(f"{origin}: unknown bracketed action {name!r}")
            if arg_placeholder is None:
                arg_placeholder = placeholder
            kinds.append(kind)
            continue
        kind = _BARE_BY_NAME.get(alternative.lower())
        if kind is None:
            raise TemplateError(f"{origin}: unknown action {alternative!r}")
        kinds.append(kind)
    return tuple(kinds), arg_placeholder


def _parse_template_text(text: str, mechanism: Mechanism, domain: Domain, origin: str) -> MechanismTemplate:
    lines: list[TemplateAgentLine | TemplateEnvLine] = []
    pending_repeat = False
    for raw in text.splitlines():
        raw = raw.rstrip()
        if not raw:
            continue
        if raw == "...":
            # The preceding agent/env pair repeats.
            if len(lines) < 2:
                raise TemplateError(f"{origin}: repeat marker with nothing to repeat")
            pending_repeat = True
            for idx in (-2, -1):
                line = lines[idx]
                lines[idx] = (
                    TemplateAgentLine(line.thought, line.kinds, line.arg_placeholder, True)
                    if isinstance(line, TemplateAgentLine)
                    else TemplateEnvLine(line.observation, line.is_task, True)
                )
            continue
        if raw.startswith("Environment: "):
            content = raw[len("Environment: "):]
            _check_placeholders(content, origin)
            if content.startswith("Task: "):
                lines.append(TemplateEnvLine(content[len("Task: "):], is_task=True))
            elif content.startswith("Observation: "):
                lines.append(TemplateEnvLine(content[len("Observation: "):], is_task=False))
            else:
                raise TemplateError(f"{origin}: environment line without Task/Observation prefix")
        elif raw.startswith("Agent: "):
            content = raw[len("Agent: "):]
            _check_placeholders(content, origin)
            if not content.startswith("Thought: "):
                raise TemplateError(f"{origin}: agent line without Thought prefix")
            body = content[len("Thought: "):]
            thought, sep, action_spec = body.rpartition(" Action: ")
            if not sep:
                raise TemplateError(f"{origin}: agent line without Action marker")
            kinds, arg_placeholder = _parse_action_spec(action_spec.strip(), origin)
            lines.append(TemplateAgentLine(thought, kinds, arg_placeholder))
        else:
            raise TemplateError(f"{origin}: unrecognized line {raw!r}")
    if not lines or not isinstance(lines[0], TemplateEnvLine) or not lines[0].is_task:
        raise TemplateError(f"{origin}: template must open with the task statement")
    if not pending_repeat and mechanism == Mechanism.EXTERNAL_AUGMENTATION:
        raise TemplateError(f"{origin}: augmentation template needs a repeat marker")
    return MechanismTemplate(mechanism=mechanism, domain=domain, lines=tuple(lines))


class TemplateRegistry:
    """Loads and serves the canonical prompt templates for both domains."""

    def __init__(self, package: str = "mechact.templates"):
        self._package = package
        self._systems: dict[Domain, str] = {}
        self._templates: dict[tuple[Mechanism, Domain], MechanismTemplate] = {}
        root = resources.files(package)
        self.version = root.joinpath("VERSION").read_text(encoding="utf-8").strip()
        for domain in Domain:
            name = f"{domain.value}_system.txt"
            text = root.joinpath(name).read_text(encoding="utf-8")
            self._systems[domain] = text.rstrip("\n")
            for mechanism, stem in _TEMPLATE_FILES.items():
                fname = f"{domain.value}_{stem}.txt"
                body = root.joinpath(fname).read_text(encoding="utf-8")
                self._templates[(mechanism, domain)] = _parse_template_text(
                    body, mechanism, domain, fname
                )

    def system_prompt(self, domain: Domain) -> str:
        return self._systems[domain]

    def template(self, mechanism: Mechanism, domain: Domain) -> MechanismTemplate:
        return self._templates[(mechanism, domain)]

    def grounding_text(self, kind: ActionKind, domain: Domain) -> str:
        """The template observation that follows a given agent action."""
        holders = {
            ActionKind.MAKE_PLAN: Mechanism.PLAN,
            ActionKind.CARRY_OUT_PLAN: Mechanism.PLAN,
            ActionKind.RETRIEVE_MEMORY: Mechanism.MEMORY,
            ActionKind.REFLECT: Mechanism.REFLECTION,
        }
        mechanism = holders.get(kind)
        if mechanism is None:
            raise TemplateError(f"no grounding template for action {kind.value}")
        template = self.template(mechanism, domain)
        for i, line in enumerate(template.lines[:-1]):
            if isinstance(line, TemplateAgentLine) and kind in line.kinds:
                nxt = template.lines[i + 1]
                assert isinstance(nxt, TemplateEnvLine)
                return nxt.observation
        raise TemplateError(f"no grounding found for {kind.value} in {mechanism.label}")

    def fixed_thought(self, mechanism: Mechanism, domain: Domain, agent_index: int) -> str | None:
        """Pinned thought text for the n-th agent turn of a mechanism, if any."""
        agent_lines = self.template(mechanism, domain).agent_lines()
        if agent_index >= len(agent_lines):
            return None
        return agent_lines[agent_index].fixed_thought


@lru_cache(maxsize=1)
def default_registry() -> TemplateRegistry:
    return TemplateRegistry()


def system_prompt(domain: Domain) -> str:
    return default_registry().system_prompt(domain)


# ---------------------------------------------------------------------------
# Agent turn parsing and rendering


def render_action(action: Action) -> str:
    surface = SURFACE_FORMS[action.kind]
    if action.kind in _BRACKET_BY_NAME.values():
        return f"{surface}[{action.arg}]"
    return surface


def render_agent_turn(turn: AgentTurn) -> str:
    """Canonical single-line form: "Thought: ... Action: ..."."""
    return f"Thought: {turn.thought} Action: {render_action(turn.action)}"


def _parse_action_text(text: str, domain: Domain) -> Action:
    text = text.strip()
    if not text:
        raise ParseError("empty action")
    bracket = text.find("[")
    if bracket == -1:
        name = re.sub(r"\s+", " ", text).strip().rstrip(".").lower()
        kind = _BARE_BY_NAME.get(name)
        if kind is not None:
            if not action_legal_in(kind, domain):
                raise DomainActionError(
                    f"action {SURFACE_FORMS[kind]!r} is not legal in domain {domain.value}"
                )
            return Action(kind)
        if name in _BRACKET_BY_NAME:
            raise ParseError(f"action {SURFACE_FORMS[_BRACKET_BY_NAME[name]]!r} requires a bracketed argument")
        raise ParseError(f"unknown action {text!r}")
    name = re.sub(r"\s+", " ", text[:bracket]).strip().lower()
    if name in _BARE_BY_NAME:
        raise ParseError(f"action {SURFACE_FORMS[_BARE_BY_NAME[name]]!r} takes no argument")
    kind = _BRACKET_BY_NAME.get(name)
    if kind is None:
        raise ParseError(f"unknown action {text!r}")
    # Balanced scan: the argument must not itself contain square brackets.
    depth = 1
    end = -1
    for i in range(bracket + 1, len(text)):
        ch = text[i]
        if ch == "[":
            raise ParseError("nested brackets in action argument")
        if ch == "]":
            depth -= 1
            end = i
            break
    if depth != 0 or end == -1:
        raise ParseError("unterminated action argument")
    trailing = text[end + 1:].strip()
    if trailing not in ("", "."):
        raise ParseError(f"unexpected text after action argument: {trailing!r}")
    arg = text[bracket + 1:end]
    if not action_legal_in(kind, domain):
        raise DomainActionError(
            f"action {SURFACE_FORMS[kind]!r} is not legal in domain {domain.value}"
        )
    return Action(kind, arg)


def parse_agent_turn(text: str, domain: Domain) -> AgentTurn:
    """Parse one model response into an AgentTurn.

    Anchors on the LAST "Action:" marker so thoughts may mention the word;
    multi-line thoughts are accepted, leading/trailing whitespace is trimmed,
    and action names match case-insensitively.
    """
    if not isinstance(text, str):
        raise ParseError("agent turn must be text")
    thought_pos = text.find("Thought:")
    if thought_pos == -1:
        raise ParseError("missing 'Thought:' marker")
    action_pos = text.rfind("Action:")
    if action_pos == -1 or action_pos < thought_pos:
        raise ParseError("missing 'Action:' marker")
    thought = text[thought_pos + len("Thought:"):action_pos].strip()
    if not thought:
        raise ParseError("empty thought")
    action = _parse_action_text(text[action_pos + len("Action:"):], domain)
    return AgentTurn(thought=thought, action=action)


# ---------------------------------------------------------------------------
# Grounding observations and dialogue rendering


def grounding_observation(
    kind: ActionKind,
    domain: Domain,
    context: str | None = None,
    registry: TemplateRegistry | None = None,
) -> EnvTurn:
    """The environment turn that follows an agent action.

    Mechanism-trigger actions return their canonical grounding prompt (with
    {case}/{reflection} filled from ``context``); tool actions wrap the tool
    result; Finish has no observation.
    """
    reg = registry or default_registry()
    if kind == ActionKind.FINISH:
        raise TemplateError("no observation follows Finish")
    if kind in TOOL_KINDS:
        if context is None:
            raise TemplateError(f"tool action {kind.value} needs a result to wrap")
        return EnvTurn(observation=context, source=EnvSource.TOOL_RESULT)
    text = reg.grounding_text(kind, domain)
    if kind == ActionKind.RETRIEVE_MEMORY:
        if context is None:
            raise TemplateError("retrieve-memory grounding needs the retrieved case")
        return EnvTurn(observation=text.replace("{case}", context), source=EnvSource.MEMORY_CASE)
    if kind == ActionKind.REFLECT:
        if context is None:
            raise TemplateError("reflect grounding needs the critic review")
        return EnvTurn(
            observation=text.replace("{reflection}", context), source=EnvSource.CRITIC_REVIEW
        )
    return EnvTurn(observation=text, source=EnvSource.GROUNDING_PROMPT)


def task_statement_text(question: str) -> str:
    return f"Task: {question}"


def env_turn_text(turn: EnvTurn) -> str:
    """User-visible content for an environment turn."""
    if turn.source == EnvSource.TASK_STATEMENT:
        return task_statement_text(turn.observation)
    return f"Observation: {turn.observation}"
