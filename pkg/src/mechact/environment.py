"""Tool environment: document store, failure-memory store, critic.

Everything here is deterministic given its inputs. The fixture docstore and
the local embedder are the test/offline implementations; Wikipedia and a
remote embeddings endpoint cover live runs. Tool errors surface as
observation text (the episode keeps going), never as exceptions.
"""

from __future__ import annotations

import json
import re
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
import requests

from .errors import DataFormatError, GatewayError, MemoryBuildError, ValidationError
from .gateway import (
    Backend,
    ChatMessage,
    SamplingParams,
    render_transcript,
    system_message,
    user_message,
)
from .grammar import render_agent_turn
from .model import SCHEMA_VERSION, Trajectory

NO_SIMILAR_CASE = "No similar case found."
SEARCH_UNAVAILABLE = "Error: search unavailable"
NO_PAGE_LOADED = "Error: no page loaded; Search first"
NO_MORE_RESULTS = "No more results."
CRITIC_UNAVAILABLE = "Error: critic unavailable"
NO_ISSUES_FOUND = "No issues found."

DEFAULT_CRITIC_PROMPT = (
    "You are a strict reviewer. Review the reasoning and answer in the "
    "following trajectory; identify errors; suggest corrections. Reply with "
    "a short critic review."
)


# ---------------------------------------------------------------------------
# Embedders


class Embedder(Protocol):
    @property
    def id(self) -> str: ...

    @property
    def dim(self) -> int: ...

    def embed(self, texts: Sequence[str]) -> np.ndarray: ...


class DeterministicEmbedder:
    """Hashed character-trigram counts, L2-normalized. Offline and stable.

    Uses crc32 for bucket assignment (Python's builtin hash is salted per
    process and would break cross-run determinism).
    """

    def __init__(self, dim: int = 256):
        if dim < 8:
            raise ValidationError("embedding dimension too small")
        self._dim = dim

    @property
    def id(self) -> str:
        return f"trigram-{self._dim}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(texts), self._dim), dtype=np.float64)
        for row, text in enumerate(texts):
            grams = (
                [text[i : i + 3] for i in range(len(text) - 2)] if len(text) >= 3 else [text]
            )
            for gram in grams:
                if not gram:
                    continue
                idx = zlib.crc32(gram.encode("utf-8")) % self._dim
                out[row, idx] += 1.0
            norm = np.linalg.norm(out[row])
            if norm > 0:
                out[row] /= norm
        return out


class RemoteEmbedder:
    """OpenAI-compatible embeddings endpoint client."""

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key_env: str | None = None,
        dim: int = 1536,
        timeout: float = 60.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self._dim = dim
        self.timeout = timeout
        self._session = session or requests.Session()

    @property
    def id(self) -> str:
        return f"remote:{self.model}"

    @property
    def dim(self) -> int:
        return self._dim

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        import os

        headers = {"Content-Type": "application/json"}
        if self.api_key_env:
            key = os.environ.get(self.api_key_env)
            if not key:
                raise GatewayError(f"environment variable {self.api_key_env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = self._session.post(
                self.endpoint,
                json={"model": self.model, "input": list(texts)},
                headers=headers,
                timeout=self.timeout,
            )
        except (requests.ConnectionError, requests.Timeout) as exc:
            raise GatewayError(f"embeddings endpoint unreachable: {exc}") from exc
        if resp.status_code != 200:
            raise GatewayError(f"embeddings endpoint returned {resp.status_code}")
        try:
            data = resp.json()["data"]
            vectors = np.array([item["embedding"] for item in data], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as exc:
            raise GatewayError(f"malformed embeddings response: {exc}") from exc
        return vectors


# ---------------------------------------------------------------------------
# Failure-memory store


@dataclass(frozen=True)
class MemoryEntry:
    question: str
    wrong_solution: str
    embedding: np.ndarray = field(repr=False)

    @property
    def case_text(self) -> str:
        return f"{self.question} {self.wrong_solution}"


@dataclass
class MemoryStore:
    embedder_id: str
    dim: int
    entries: list[MemoryEntry] = field(default_factory=list)

    def matrix(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, self.dim), dtype=np.float64)
        return np.stack([e.embedding for e in self.entries])

    def save(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            header = {
                "schema_version": SCHEMA_VERSION,
                "embedder_id": self.embedder_id,
                "dim": self.dim,
            }
            fh.write(json.dumps(header, ensure_ascii=False, separators=(",", ":")) + "\n")
            for e in self.entries:
                record = {
                    "question": e.question,
                    "wrong_solution": e.wrong_solution,
                    "embedding": [round(float(x), 12) for x in e.embedding],
                }
                fh.write(json.dumps(record, ensure_ascii=False, separators=(",", ":")) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "MemoryStore":
        with open(path, encoding="utf-8") as fh:
            lines = [line for line in fh if line.strip()]
        if not lines:
            raise DataFormatError(f"{path}: empty memory store file")
        try:
            header = json.loads(lines[0])
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: bad header: {exc}") from exc
        if header.get("schema_version") != SCHEMA_VERSION:
            raise DataFormatError(
                f"unsupported schema_version {header.get('schema_version')!r} "
                f"(expected {SCHEMA_VERSION})"
            )
        store = cls(embedder_id=header["embedder_id"], dim=header["dim"])
        for i, line in enumerate(lines[1:], 2):
            try:
                obj = json.loads(line)
                entry = MemoryEntry(
                    question=obj["question"],
                    wrong_solution=obj["wrong_solution"],
                    embedding=np.array(obj["embedding"], dtype=np.float64),
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{i}: bad memory entry: {exc}") from exc
            if entry.embedding.shape != (store.dim,):
                raise DataFormatError(f"{path}:{i}: embedding dimension mismatch")
            store.entries.append(entry)
        return store


def render_wrong_solution(traj: Trajectory) -> str:
    """Flatten a failed trajectory's agent turns into reference text."""
    return " ".join(render_agent_turn(t) for t in traj.agent_turns())


def build_memory(failed_trajectories: Sequence[Trajectory], embedder: Embedder) -> MemoryStore:
    """One entry per failed trajectory, embedded by question text.

    Accepts failures only (reward 0). An embedder failure aborts with the
    partial-progress count so long builds can be resumed by the caller.
    """
    for traj in failed_trajectories:
        if traj.reward != 0:
            raise ValidationError("memory store accepts failed trajectories only")
    store = MemoryStore(embedder_id=embedder.id, dim=embedder.dim)
    total = len(failed_trajectories)
    for i, traj in enumerate(failed_trajectories):
        try:
            vector = embedder.embed([traj.question])[0]
        except Exception as exc:
            raise MemoryBuildError(
                f"embedder failed after {i} of {total} entries: {exc}", completed=i, total=total
            ) from exc
        store.entries.append(
            MemoryEntry(
                question=traj.question,
                wrong_solution=render_wrong_solution(traj),
                embedding=vector,
            )
        )
    return store


def retrieve_memory(question: str, store: MemoryStore, embedder: Embedder, k: int = 1) -> str:
    """Cosine top-k retrieval; returns the case text (question + wrong solution).

    The caller wraps the result into the canonical "Case: ..." observation.
    An empty store yields the no-case sentinel instead of an error.
    """
    if not store.entries:
        return NO_SIMILAR_CASE
    if embedder.id != store.embedder_id:
        raise ValidationError(
            f"store was built with embedder {store.embedder_id!r}, got {embedder.id!r}"
        )
    query = embedder.embed([question])[0]
    norm = np.linalg.norm(query)
    if norm > 0:
        query = query / norm
    scores = store.matrix() @ query
    order = np.argsort(-scores, kind="stable")[: max(1, k)]
    return "\n".join(store.entries[int(i)].case_text for i in order)


# ---------------------------------------------------------------------------
# Document store


def levenshtein(a: str, b: str) -> int:
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + (ca != cb))
            )
        previous = current
    return previous[-1]


def normalized_edit_distance(a: str, b: str) -> float:
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


_SENTENCE_SPLIT = re.compile(r"(?<=[.!?])\s+")


def split_sentences(paragraphs: Sequence[str]) -> list[str]:
    sentences = []
    for para in paragraphs:
        sentences.extend(s for s in _SENTENCE_SPLIT.split(para.strip()) if s)
    return sentences


@dataclass(frozen=True)
class Page:
    title: str
    paragraphs: tuple[str, ...]

    @property
    def first_paragraph(self) -> str:
        return self.paragraphs[0]

    def sentences(self) -> list[str]:
        return split_sentences(self.paragraphs)


class Docstore(Protocol):
    def get_page(self, title: str) -> Page | None: ...

    def similar(self, entity: str, n: int = 5) -> list[str]: ...


class FixtureDocstore:
    """In-memory docstore loaded from {title: [paragraph, ...]} JSON."""

    def __init__(self, pages: dict[str, list[str]]):
        for title, paragraphs in pages.items():
            if not paragraphs:
                raise DataFormatError(f"page {title!r} has no paragraphs")
        self._pages = {
            title: Page(title=title, paragraphs=tuple(paragraphs))
            for title, paragraphs in pages.items()
        }

    @classmethod
    def load(cls, path: str | Path) -> "FixtureDocstore":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise DataFormatError(f"{path}: not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise DataFormatError(f"{path}: docstore must be a JSON object")
        return cls(data)

    def get_page(self, title: str) -> Page | None:
        page = self._pages.get(title)
        if page is not None:
            return page
        # Tolerate capitalization differences on exact titles.
        lowered = title.strip().lower()
        for candidate in self._pages.values():
            if candidate.title.lower() == lowered:
                return candidate
        return None

    def similar(self, entity: str, n: int = 5) -> list[str]:
        ranked = sorted(
            self._pages,
            key=lambda title: (normalized_edit_distance(entity.lower(), title.lower()), title),
        )
        return ranked[:n]


class WikipediaDocstore:
    """Live docstore backed by the public Wikipedia API."""

    def __init__(
        self,
        endpoint: str = "https://en.wikipedia.org/w/api.php",
        timeout: float = 20.0,
        session: requests.Session | None = None,
    ):
        self.endpoint = endpoint
        self.timeout = timeout
        self._session = session or requests.Session()

    def _get(self, params: dict) -> dict:
        resp = self._session.get(self.endpoint, params=params, timeout=self.timeout)
        resp.raise_for_status()
        return resp.json()

    def get_page(self, title: str) -> Page | None:
        data = self._get(
            {
                "action": "query",
                "prop": "extracts",
                "explaintext": 1,
                "redirects": 1,
                "titles": title,
                "format": "json",
            }
        )
        pages = data.get("query", {}).get("pages", {})
        for page in pages.values():
            extract = page.get("extract")
            if extract:
                paragraphs = [p.strip() for p in extract.split("\n") if p.strip()]
                if paragraphs:
                    return Page(title=page.get("title", title), paragraphs=tuple(paragraphs))
        return None

    def similar(self, entity: str, n: int = 5) -> list[str]:
        data = self._get(
            {
                "action": "opensearch",
                "search": entity,
                "limit": n,
                "namespace": 0,
                "format": "json",
            }
        )
        try:
            return list(data[1])[:n]
        except (IndexError, TypeError):
            return []


@dataclass
class DocstoreState:
    """Per-episode lookup cursor; mutated by search/lookup."""

    current_page: Page | None = None
    lookup_keyword: str | None = None
    lookup_index: int = 0


def search(entity: str, docstore: Docstore | None, state: DocstoreState) -> str:
    """Exact-title search; a miss lists up to five closest titles."""
    if docstore is None:
        return SEARCH_UNAVAILABLE
    try:
        page = docstore.get_page(entity)
        if page is not None:
            state.current_page = page
            state.lookup_keyword = None
            state.lookup_index = 0
            return page.first_paragraph
        suggestions = docstore.similar(entity, 5)
    except Exception:
        return SEARCH_UNAVAILABLE
    return f"Could not find {entity}. Similar: [{', '.join(suggestions)}]"


def lookup(keyword: str, state: DocstoreState) -> str:
    """Next sentence containing the keyword in the current page.

    The cursor advances per call, resets when the keyword changes or a new
    page is loaded, and reports "(Result k/n)" positions. Matching is
    case-insensitive on the keyword.
    """
    if state.current_page is None:
        return NO_PAGE_LOADED
    if state.lookup_keyword != keyword:
        state.lookup_keyword = keyword
        state.lookup_index = 0
    needle = keyword.lower()
    matches = [s for s in state.current_page.sentences() if needle in s.lower()]
    if state.lookup_index >= len(matches):
        return NO_MORE_RESULTS
    sentence = matches[state.lookup_index]
    state.lookup_index += 1
    return f"(Result {state.lookup_index}/{len(matches)}) {sentence}"


# ---------------------------------------------------------------------------
# Critic


def reflect(
    dialogue: Sequence[ChatMessage],
    critic_backend: Backend,
    critic_prompt: str = DEFAULT_CRITIC_PROMPT,
    params: SamplingParams | None = None,
) -> str:
    """Ask the critic model to review the dialogue so far.

    Raises GatewayError upward (the episode runner turns that into the
    critic-unavailable observation). An empty review becomes the no-issues
    sentinel.
    """
    messages = [system_message(critic_prompt), user_message(render_transcript(dialogue))]
    review = critic_backend.complete(messages, params or SamplingParams())
    review = review.strip()
    return review if review else NO_ISSUES_FOUND
