"""Exception taxonomy shared across the package.

Every error raised by the library derives from MechactError so callers can
catch broadly. The CLI maps subtrees onto exit codes: config problems exit 2,
data-format problems exit 3, infrastructure problems exit 4.
"""

from __future__ import annotations


class MechactError(Exception):
    """Base class for all library errors."""


class ValidationError(MechactError):
    """A domain object violates one of its invariants.

    The message names the failed invariant (e.g. "alternation violated").
    """


class ParseError(MechactError):
    """Malformed input: a record, an agent turn, or an expression.

    Attributes:
        offset: byte offset of the failure within the input, when known.
    """

    def __init__(self, message: str, offset: int | None = None):
        super().__init__(message)
        self.offset = offset


class DomainActionError(MechactError):
    """An action is well-formed but illegal for the task domain."""


class TemplateError(MechactError):
    """A template resource is missing, malformed, or uses an unknown placeholder."""


class TransformError(MechactError):
    """A raw trajectory lacks a component the canonical format requires."""


class MemoryBuildError(MechactError):
    """Memory store construction aborted; carries partial progress."""

    def __init__(self, message: str, completed: int, total: int):
        super().__init__(message)
        self.completed = completed
        self.total = total


class GatewayError(MechactError):
    """A backend call failed after exhausting retries."""


class NoScriptError(GatewayError):
    """The scripted backend has no reply registered for this prompt."""


class ContextLengthError(GatewayError):
    """The prompt exceeds the backend's context window. Never retried."""


class CapabilityError(GatewayError):
    """The backend cannot perform the requested operation (e.g. logprob scoring)."""


class ConfigError(MechactError):
    """Invalid or incomplete run configuration. Message names the offending key."""


class DataFormatError(MechactError):
    """An input file exists but does not match its declared schema."""


class InfraError(MechactError):
    """Too many infrastructure failures; the run aborted with a resumable checkpoint."""
