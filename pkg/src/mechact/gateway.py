"""Backend abstraction for chat completion and logprob scoring.

Two implementations ship here. ScriptedBackend is the deterministic test
double: replies are keyed by a SHA-256 over the canonicalized message list
(optionally per seed), with a "playbook" mode that picks the n-th scripted
turn of a matching episode so multi-turn fixtures can live in one JSON file.
HttpBackend speaks the OpenAI-style chat-completions protocol with retries,
a concurrency cap, and optional record/replay cassettes.

Policy and reference models are configured as two independent backends;
a backend that cannot produce logprobs raises CapabilityError from score().
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Callable, Protocol, Sequence

import requests

from .errors import (
    CapabilityError,
    ConfigError,
    ContextLengthError,
    GatewayError,
    NoScriptError,
    ValidationError,
)
from .grammar import env_turn_text, render_agent_turn, system_prompt
from .model import AgentTurn, EnvTurn, Trajectory


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def to_json_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}


def system_message(content: str) -> ChatMessage:
    return ChatMessage(Role.SYSTEM, content)


def user_message(content: str) -> ChatMessage:
    return ChatMessage(Role.USER, content)


def assistant_message(content: str) -> ChatMessage:
    return ChatMessage(Role.ASSISTANT, content)


@dataclass(frozen=True)
class SamplingParams:
    temperature: float = 0.0
    top_p: float = 1.0
    max_tokens: int = 512
    seed: int | None = None

    def __post_init__(self):
        if self.temperature < 0:
            raise ValidationError("temperature must be >= 0")
        if not (0 < self.top_p <= 1):
            raise ValidationError("top_p must be in (0, 1]")
        if self.max_tokens <= 0:
            raise ValidationError("max_tokens must be positive")


@dataclass(frozen=True)
class TokenLogprobs:
    """Per-token logprobs for one assistant message of a dialogue."""

    tokens: tuple[str, ...]
    logprobs: tuple[float, ...]
    message_index: int

    def __post_init__(self):
        if len(self.tokens) != len(self.logprobs):
            raise ValidationError("tokens and logprobs must have equal length")
        if any(lp > 0 for lp in self.logprobs):
            raise ValidationError("logprobs must be <= 0")

    @property
    def total(self) -> float:
        return float(sum(self.logprobs))


class Backend(Protocol):
    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> str: ...

    def score(
        self, messages: Sequence[ChatMessage], completion_indices: Sequence[int] | None = None
    ) -> list[TokenLogprobs]: ...


def canonical_messages_key(messages: Sequence[ChatMessage], seed: int | None = None) -> str:
    """SHA-256 over the canonical JSON encoding of a message list."""
    payload = [m.to_json_dict() for m in messages]
    if seed is not None:
        payload = {"messages": payload, "seed": seed}
    blob = json.dumps(payload, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def tokenize_stub(text: str) -> tuple[str, ...]:
    """Whitespace tokenizer shared by all scripted backends.

    Both policy and reference sides must tokenize identically for their
    TokenLogprobs to align token-by-token.
    """
    return tuple(text.split())


def _assistant_indices(messages: Sequence[ChatMessage]) -> list[int]:
    return [i for i, m in enumerate(messages) if m.role == Role.ASSISTANT]


@dataclass(frozen=True)
class PlaybookEntry:
    """One scripted episode: matched on substrings of the first user message."""

    task_contains: str
    turns: tuple[str, ...]
    demo_contains: str | None = None


class ScriptedBackend:
    """Deterministic backend: a pure function of (messages, seed).

    Resolution order: exact (messages, seed) key, exact messages key,
    playbook entry (most specific match first), then the optional script
    function. No match raises NoScriptError.
    """

    def __init__(
        self,
        playbook: Sequence[PlaybookEntry] = (),
        script_fn: Callable[[Sequence[ChatMessage], SamplingParams], str | None] | None = None,
        token_logprob: float = -1.0,
    ):
        if token_logprob > 0:
            raise ValidationError("token_logprob must be <= 0")
        self._replies: dict[str, str] = {}
        self._playbook = list(playbook)
        self._script_fn = script_fn
        self.token_logprob = token_logprob

    def register(self, messages: Sequence[ChatMessage], reply: str, seed: int | None = None) -> None:
        self._replies[canonical_messages_key(messages, seed)] = reply

    def register_key(self, key: str, reply: str) -> None:
        self._replies[key] = reply

    def _playbook_reply(self, messages: Sequence[ChatMessage]) -> str | None:
        first_user = next((m for m in messages if m.role == Role.USER), None)
        if first_user is None:
            return None
        n_done = len(_assistant_indices(messages))
        with_demo = [e for e in self._playbook if e.demo_contains is not None]
        without_demo = [e for e in self._playbook if e.demo_contains is None]
        for entry in with_demo + without_demo:
            if entry.task_contains not in first_user.content:
                continue
            if entry.demo_contains is not None and entry.demo_contains not in first_user.content:
                continue
            if n_done < len(entry.turns):
                return entry.turns[n_done]
            return None
        return None

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> str:
        if params.seed is not None:
            reply = self._replies.get(canonical_messages_key(messages, params.seed))
            if reply is not None:
                return reply
        reply = self._replies.get(canonical_messages_key(messages))
        if reply is not None:
            return reply
        reply = self._playbook_reply(messages)
        if reply is not None:
            return reply
        if self._script_fn is not None:
            reply = self._script_fn(messages, params)
            if reply is not None:
                return reply
        raise NoScriptError("no script for prompt")

    def score(
        self, messages: Sequence[ChatMessage], completion_indices: Sequence[int] | None = None
    ) -> list[TokenLogprobs]:
        indices = list(completion_indices) if completion_indices is not None else _assistant_indices(messages)
        out = []
        for idx in indices:
            if not (0 <= idx < len(messages)) or messages[idx].role != Role.ASSISTANT:
                raise ValidationError(f"message {idx} is not an assistant completion")
            tokens = tokenize_stub(messages[idx].content)
            out.append(
                TokenLogprobs(
                    tokens=tokens,
                    logprobs=tuple(self.token_logprob for _ in tokens),
                    message_index=idx,
                )
            )
        return out

    @classmethod
    def from_config(cls, spec: dict, base_dir: Path | None = None) -> "ScriptedBackend":
        """Build from a JSON config: {"replies": {key: text}, "playbook": [...]}.

        ``playbook_file`` loads entries from a separate JSON file (same shape
        as the inline "playbook" list).
        """
        playbook_specs = list(spec.get("playbook", []))
        playbook_file = spec.get("playbook_file")
        if playbook_file:
            path = Path(playbook_file)
            if base_dir is not None and not path.is_absolute():
                path = base_dir / path
            try:
                loaded = json.loads(path.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot load playbook file {path}: {exc}") from exc
            playbook_specs.extend(loaded.get("playbook", []))
        entries = []
        for i, entry in enumerate(playbook_specs):
            try:
                entries.append(
                    PlaybookEntry(
                        task_contains=entry["task_contains"],
                        turns=tuple(entry["turns"]),
                        demo_contains=entry.get("demo_contains"),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"bad playbook entry {i}: {exc}") from exc
        backend = cls(playbook=entries, token_logprob=spec.get("token_logprob", -1.0))
        for key, reply in spec.get("replies", {}).items():
            backend.register_key(key, reply)
        return backend


# ---------------------------------------------------------------------------
# HTTP backend


class Cassette:
    """Record/replay store for HTTP exchanges, keyed by request hash."""

    def __init__(self, path: str | Path, record: bool = False):
        self.path = Path(path)
        self.record = record
        self._exchanges: dict[str, dict] = {}
        if self.path.exists():
            data = json.loads(self.path.read_text(encoding="utf-8"))
            for item in data.get("exchanges", []):
                self._exchanges[item["request_sha256"]] = item["response"]

    @staticmethod
    def request_key(body: dict) -> str:
        blob = json.dumps(body, ensure_ascii=False, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()

    def get(self, body: dict) -> dict | None:
        return self._exchanges.get(self.request_key(body))

    def put(self, body: dict, response: dict) -> None:
        self._exchanges[self.request_key(body)] = response
        payload = {
            "exchanges": [
                {"request_sha256": k, "response": v} for k, v in sorted(self._exchanges.items())
            ]
        }
        self.path.write_text(
            json.dumps(payload, ensure_ascii=False, indent=2) + "\n", encoding="utf-8"
        )


_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


class HttpBackend:
    """OpenAI-compatible chat-completions client.

    The API key is read from the environment variable named by
    ``api_key_env`` at request time; secrets never appear in config files.
    Transport errors and retryable statuses back off exponentially up to
    ``max_retries``; context-length rejections are never retried. score()
    raises CapabilityError: completion endpoints do not return logprobs for
    caller-supplied completions, so logprob scoring belongs to backends that
    own the model weights.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str | None = None,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        max_concurrency: int = 8,
        cassette: Cassette | None = None,
        session: requests.Session | None = None,
    ):
        if max_concurrency < 1:
            raise ValidationError("max_concurrency must be >= 1")
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self._semaphore = threading.Semaphore(max_concurrency)
        self.cassette = cassette
        self._session = session or requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise ConfigError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def _request_body(self, messages: Sequence[ChatMessage], params: SamplingParams) -> dict:
        body = {
            "model": self.model,
            "messages": [m.to_json_dict() for m in messages],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
        }
        if params.seed is not None:
            body["seed"] = params.seed
        return body

    def complete(self, messages: Sequence[ChatMessage], params: SamplingParams) -> str:
        body = self._request_body(messages, params)
        if self.cassette is not None:
            recorded = self.cassette.get(body)
            if recorded is not None:
                return self._extract_content(recorded)
            if not self.cassette.record:
                raise GatewayError("no cassette entry for request and recording is disabled")
        response = self._post_with_retries(body)
        if self.cassette is not None and self.cassette.record:
            self.cassette.put(body, response)
        return self._extract_content(response)

    def _post_with_retries(self, body: dict) -> dict:
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                with self._semaphore:
                    resp = self._session.post(
                        self.endpoint, json=body, headers=self._headers(), timeout=self.timeout
                    )
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_error = exc
            else:
                if resp.status_code == 200:
                    try:
                        return resp.json()
                    except ValueError as exc:
                        raise GatewayError(f"backend returned invalid JSON: {exc}") from exc
                text = resp.text[:500]
                if resp.status_code == 400 and (
                    "context_length" in text or "maximum context" in text
                ):
                    raise ContextLengthError(f"prompt exceeds context window: {text}")
                if resp.status_code not in _RETRYABLE_STATUS:
                    raise GatewayError(f"backend returned status {resp.status_code}: {text}")
                last_error = GatewayError(f"backend returned status {resp.status_code}")
            if attempt < self.max_retries:
                time.sleep(self.backoff_base * (2 ** attempt))
        raise GatewayError(f"backend failed after {self.max_retries + 1} attempts: {last_error}")

    @staticmethod
    def _extract_content(response: dict) -> str:
        try:
            return response["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise GatewayError(f"malformed completion response: {exc}") from exc

    def score(
        self, messages: Sequence[ChatMessage], completion_indices: Sequence[int] | None = None
    ) -> list[TokenLogprobs]:
        raise CapabilityError("HTTP backend does not support logprob scoring")


# ---------------------------------------------------------------------------
# Dialogue construction


def dialogue_from_trajectory(traj: Trajectory, include_system: bool = True) -> list[ChatMessage]:
    """Render a trajectory as chat messages.

    Environment turns map to the user role ("Task: ..." for the opening
    statement, "Observation: ..." after), agent turns to the assistant role.
    """
    messages: list[ChatMessage] = []
    if include_system:
        messages.append(system_message(system_prompt(traj.domain)))
    for turn in traj.turns:
        if isinstance(turn, EnvTurn):
            messages.append(user_message(env_turn_text(turn)))
        else:
            assert isinstance(turn, AgentTurn)
            messages.append(assistant_message(render_agent_turn(turn)))
    return messages


def render_transcript(messages: Sequence[ChatMessage]) -> str:
    """Flatten a dialogue for critics: Environment/Agent prefixed lines."""
    lines = []
    for m in messages:
        if m.role == Role.SYSTEM:
            continue
        prefix = "Agent" if m.role == Role.ASSISTANT else "Environment"
        lines.append(f"{prefix}: {m.content}")
    return "\n".join(lines)
