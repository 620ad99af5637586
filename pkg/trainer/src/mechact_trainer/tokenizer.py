"""Byte-level dialogue tokenizer.

Every UTF-8 byte is its own token; a handful of specials frame the
structure: one begin-of-dialogue token, a role marker opening each message,
and an end-of-message token closing it. Message-level train masks expand to
token level through the span table this module emits: a message owns its
role marker, its content bytes, and its closing token, so a mask bit covers
exactly that span and nothing else.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .errors import DataError

PAD = 256
BOS = 257
EOM = 258
ROLE_TOKENS = {"system": 259, "user": 260, "assistant": 261}
VOCAB_SIZE = 262

_TOKEN_ROLES = {token: role for role, token in ROLE_TOKENS.items()}


@dataclass(frozen=True)
class EncodedDialogue:
    """Token ids plus the structure needed to map message masks onto them.

    spans are half-open [start, end) into tokens, one per message, covering
    role marker through end-of-message. prompt_len is the boundary after
    the task statement (first user message, or the system message when no
    user turn exists): everything from there on is the completion.
    """

    tokens: tuple[int, ...]
    spans: tuple[tuple[int, int], ...]
    roles: tuple[str, ...]
    prompt_len: int

    def __len__(self) -> int:
        return len(self.tokens)


def encode_dialogue(messages: Sequence[tuple[str, str]]) -> EncodedDialogue:
    """Encode (role, content) pairs. Rejects unknown roles and empty
    dialogues rather than guessing."""
    if not messages:
        raise DataError("dialogue has no messages")
    tokens: list[int] = [BOS]
    spans: list[tuple[int, int]] = []
    roles: list[str] = []
    for role, content in messages:
        if role not in ROLE_TOKENS:
            raise DataError(f"unknown role {role!r}")
        start = len(tokens)
        tokens.append(ROLE_TOKENS[role])
        tokens.extend(content.encode("utf-8"))
        tokens.append(EOM)
        spans.append((start, len(tokens)))
        roles.append(role)
    prompt_end = spans[0][1]
    for span, role in zip(spans, roles):
        if role == "user":
            prompt_end = span[1]
            break
    return EncodedDialogue(
        tokens=tuple(tokens),
        spans=tuple(spans),
        roles=tuple(roles),
        prompt_len=prompt_end,
    )


def decode_dialogue(tokens: Sequence[int]) -> list[tuple[str, str]]:
    """Inverse of encode_dialogue, used by tests and debugging dumps."""
    if not tokens or tokens[0] != BOS:
        raise DataError("token stream does not start with the dialogue marker")
    messages: list[tuple[str, str]] = []
    i = 1
    while i < len(tokens):
        role = _TOKEN_ROLES.get(tokens[i])
        if role is None:
            raise DataError(f"expected a role marker at position {i}")
        i += 1
        content = bytearray()
        while i < len(tokens) and tokens[i] != EOM:
            byte = tokens[i]
            if byte > 255:
                raise DataError(f"unexpected special token {byte} inside a message")
            content.append(byte)
            i += 1
        if i == len(tokens):
            raise DataError("message not closed")
        i += 1
        messages.append((role, content.decode("utf-8")))
    return messages


def target_owners(enc: EncodedDialogue) -> list[int]:
    """Message index owning each next-token target position. Position i
    predicts tokens[i+1]; the leading dialogue marker is never a target, so
    the list covers len(tokens) - 1 positions, each owned by exactly one
    message."""
    owners = [-1] * (len(enc.tokens) - 1)
    for index, (start, end) in enumerate(enc.spans):
        for pos in range(start - 1, end - 1):
            owners[pos] = index
    if any(owner < 0 for owner in owners):
        raise DataError("token stream has positions outside any message span")
    return owners


def token_weights(enc: EncodedDialogue, message_mask: Sequence[int]) -> list[float]:
    """Expand a per-message 0/1 mask to per-target-position loss weights."""
    if len(message_mask) != len(enc.spans):
        raise DataError(
            f"mask length {len(message_mask)} does not match {len(enc.spans)} messages"
        )
    owners = target_owners(enc)
    return [float(message_mask[owner]) for owner in owners]


def assistant_targets(enc: EncodedDialogue) -> list[bool]:
    """Role-derived truth for which target positions belong to assistant
    messages; the mask verifier checks supplied weights against this."""
    owners = target_owners(enc)
    return [enc.roles[owner] == "assistant" for owner in owners]
