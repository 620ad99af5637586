"""Embedder, memory store, docstore, and critic behavior.

Retrieval is checked against a brute-force cosine argmax; title suggestions
against a memoized recursive Levenshtein.
"""

from __future__ import annotations

import functools
import random
import string

import numpy as np
import pytest

from mechact.environment import (
    CRITIC_UNAVAILABLE,
    DEFAULT_CRITIC_PROMPT,
    DeterministicEmbedder,
    DocstoreState,
    FixtureDocstore,
    MemoryEntry,
    MemoryStore,
    NO_ISSUES_FOUND,
    NO_MORE_RESULTS,
    NO_PAGE_LOADED,
    NO_SIMILAR_CASE,
    Page,
    SEARCH_UNAVAILABLE,
    build_memory,
    levenshtein,
    lookup,
    normalized_edit_distance,
    reflect,
    render_wrong_solution,
    retrieve_memory,
    search,
    split_sentences,
)
from mechact.errors import (
    DataFormatError,
    GatewayError,
    MemoryBuildError,
    NoScriptError,
    ValidationError,
)
from mechact.gateway import ScriptedBackend, user_message, assistant_message
from mechact.model import (
    Action,
    ActionKind,
    AgentTurn,
    Domain,
    EnvSource,
    EnvTurn,
    Mechanism,
    Trajectory,
    TrajectoryFormat,
)


def failed_traj(question: str, answer: str = "0") -> Trajectory:
    return Trajectory(
        task_id=question[:8].replace(" ", "_"),
        domain=Domain.MATH,
        mechanism=Mechanism.REASON,
        turns=(
            EnvTurn(question, EnvSource.TASK_STATEMENT),
            AgentTurn("I guess.", Action(ActionKind.FINISH, answer)),
        ),
        reward=0,
        format=TrajectoryFormat.UNIACT,
        extracted_answer=answer,
    )


# ---------------------------------------------------------------------------
# Embedder

def test_embedder_deterministic_and_normalized():
    emb = DeterministicEmbedder(dim=64)
    texts = ["how many apples", "how many apples", "what color is the sky"]
    vectors = emb.embed(texts)
    assert vectors.shape == (3, 64)
    assert np.array_equal(vectors[0], vectors[1])
    assert not np.array_equal(vectors[0], vectors[2])
    for row in vectors:
        assert np.linalg.norm(row) == pytest.approx(1.0)
    # fresh instance, same output
    again = DeterministicEmbedder(dim=64).embed(texts)
    assert np.array_equal(vectors, again)


def test_embedder_short_and_empty_text():
    emb = DeterministicEmbedder(dim=32)
    short = emb.embed(["ab"])
    assert np.linalg.norm(short[0]) == pytest.approx(1.0)
    empty = emb.embed([""])
    assert np.linalg.norm(empty[0]) == 0.0


def test_embedder_id_and_dim_contract():
    emb = DeterministicEmbedder(dim=128)
    assert emb.id == "trigram-128"
    assert emb.dim == 128
    with pytest.raises(ValidationError):
        DeterministicEmbedder(dim=4)


# ---------------------------------------------------------------------------
# Memory store

def test_build_memory_and_round_trip(tmp_path):
    emb = DeterministicEmbedder(dim=64)
    trajs = [failed_traj("What is 2+2?"), failed_traj("What is 3*3?")]
    store = build_memory(trajs, emb)
    assert store.embedder_id == emb.id
    assert len(store.entries) == 2
    assert store.entries[0].question == "What is 2+2?"
    assert "Finish[0]" in store.entries[0].wrong_solution
    path = tmp_path / "memory.jsonl"
    store.save(path)
    loaded = MemoryStore.load(path)
    assert loaded.embedder_id == store.embedder_id
    assert loaded.dim == store.dim
    assert len(loaded.entries) == 2
    # rounded to 12 decimals on save, well inside retrieval tolerance
    assert np.allclose(loaded.matrix(), store.matrix(), atol=1e-11)


def test_build_memory_rejects_successes():
    emb = DeterministicEmbedder(dim=64)
    good = Trajectory(
        task_id="t", domain=Domain.MATH, mechanism=Mechanism.REASON,
        turns=(
            EnvTurn("q", EnvSource.TASK_STATEMENT),
            AgentTurn("sure", Action(ActionKind.FINISH, "4")),
        ),
        reward=1, format=TrajectoryFormat.UNIACT,
    )
    with pytest.raises(ValidationError) as exc_info:
        build_memory([good], emb)
    assert "failed trajectories only" in str(exc_info.value)


class ExplodingEmbedder:
    id = "exploder"
    dim = 8

    def __init__(self, after: int):
        self.after = after
        self.calls = 0

    def embed(self, texts):
        self.calls += 1
        if self.calls > self.after:
            raise RuntimeError("boom")
        return np.zeros((len(texts), self.dim))


def test_build_memory_partial_progress():
    trajs = [failed_traj(f"q{i}") for i in range(5)]
    with pytest.raises(MemoryBuildError) as exc_info:
        build_memory(trajs, ExplodingEmbedder(after=3))
    err = exc_info.value
    assert err.completed == 3
    assert err.total == 5
    assert "after 3 of 5" in str(err)


def test_memory_store_load_errors(tmp_path):
    path = tmp_path / "m.jsonl"
    path.write_text("", encoding="utf-8")
    with pytest.raises(DataFormatError):
        MemoryStore.load(path)
    path.write_text('{"schema_version": 9}\n', encoding="utf-8")
    with pytest.raises(DataFormatError):
        MemoryStore.load(path)
    path.write_text(
        '{"schema_version": 1, "embedder_id": "trigram-8", "dim": 8}\n'
        '{"question": "q", "wrong_solution": "w", "embedding": [0.0, 1.0]}\n',
        encoding="utf-8",
    )
    with pytest.raises(DataFormatError) as exc_info:
        MemoryStore.load(path)
    assert "dimension mismatch" in str(exc_info.value)


def test_retrieve_empty_store():
    emb = DeterministicEmbedder(dim=64)
    store = MemoryStore(embedder_id=emb.id, dim=64)
    assert retrieve_memory("anything", store, emb) == NO_SIMILAR_CASE


def test_retrieve_embedder_mismatch():
    store = MemoryStore(embedder_id="trigram-64", dim=64)
    store.entries.append(
        MemoryEntry(question="q", wrong_solution="w", embedding=np.zeros(64))
    )
    with pytest.raises(ValidationError):
        retrieve_memory("q", store, DeterministicEmbedder(dim=128))


def test_retrieve_matches_brute_force_cosine():
    rng = random.Random(7)
    emb = DeterministicEmbedder(dim=64)
    words = ["apples", "trains", "rivers", "angles", "primes", "ratios", "coins", "tiles"]
    questions = []
    for i in range(40):
        picked = rng.sample(words, 3)
        questions.append(f"Question {i} about {picked[0]} and {picked[1]} near {picked[2]}")
    store = build_memory([failed_traj(q) for q in questions], emb)
    matrix = store.matrix()
    for trial in range(60):
        query = f"Question about {rng.choice(words)} and {rng.choice(words)}"
        q = emb.embed([query])[0]
        # brute force: max cosine, earliest index on ties
        sims = [float(np.dot(matrix[i], q)) for i in range(len(questions))]
        best = max(range(len(sims)), key=lambda i: (sims[i], -i))
        got = retrieve_memory(query, store, emb, k=1)
        assert got == store.entries[best].case_text


def test_retrieve_top_k_order():
    emb = DeterministicEmbedder(dim=64)
    questions = ["alpha beta gamma", "alpha beta delta", "omega psi chi"]
    store = build_memory([failed_traj(q) for q in questions], emb)
    got = retrieve_memory("alpha beta gamma", store, emb, k=2)
    lines = got.split("\n")
    assert len(lines) == 2
    assert lines[0] == store.entries[0].case_text
    assert lines[1] == store.entries[1].case_text
    # k=0 still returns one case
    got_zero = retrieve_memory("alpha beta gamma", store, emb, k=0)
    assert got_zero == store.entries[0].case_text


def test_render_wrong_solution():
    traj = failed_traj("What is 2+2?", "5")
    assert render_wrong_solution(traj) == "Thought: I guess. Action: Finish[5]"


# ---------------------------------------------------------------------------
# Levenshtein oracle

@functools.cache
def lev_recursive(a: str, b: str) -> int:
    if not a:
        return len(b)
    if not b:
        return len(a)
    cost = a[-1] != b[-1]
    return min(
        lev_recursive(a[:-1], b) + 1,
        lev_recursive(a, b[:-1]) + 1,
        lev_recursive(a[:-1], b[:-1]) + cost,
    )


def test_levenshtein_matches_recursive_oracle():
    rng = random.Random(13)
    alphabet = string.ascii_lowercase[:6]
    for _ in range(300):
        a = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 9)))
        b = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 9)))
        assert levenshtein(a, b) == lev_recursive(a, b)


def test_levenshtein_fixtures():
    assert levenshtein("", "") == 0
    assert levenshtein("kitten", "sitting") == 3
    assert levenshtein("flaw", "lawn") == 2
    assert levenshtein("abc", "abc") == 0
    assert normalized_edit_distance("", "") == 0.0
    assert normalized_edit_distance("ab", "abcd") == pytest.approx(0.5)


# ---------------------------------------------------------------------------
# Docstore

PAGES = {
    "Paris": [
        "Paris is the capital of France. It sits on the Seine.",
        "The city hosts the Louvre. Paris has many museums.",
    ],
    "Parisite": ["Parisite is a rare mineral."],
    "London": ["London is the capital of England. The Thames flows through London."],
}


def make_docstore() -> FixtureDocstore:
    return FixtureDocstore({k: list(v) for k, v in PAGES.items()})


def test_docstore_exact_and_case_insensitive():
    ds = make_docstore()
    assert ds.get_page("Paris").title == "Paris"
    assert ds.get_page("paris").title == "Paris"
    assert ds.get_page(" PARIS ").title == "Paris"
    assert ds.get_page("Madrid") is None


def test_docstore_similar_ranked_by_edit_distance():
    ds = make_docstore()
    ranked = ds.similar("Pariss", 3)
    assert ranked[0] == "Paris"
    assert "Parisite" in ranked
    # oracle: normalized distance with alphabetical tie-break
    expected = sorted(
        PAGES,
        key=lambda t: (normalized_edit_distance("pariss", t.lower()), t),
    )[:3]
    assert ranked == expected


def test_docstore_rejects_empty_page():
    with pytest.raises(DataFormatError):
        FixtureDocstore({"Empty": []})


def test_docstore_load(tmp_path):
    path = tmp_path / "pages.json"
    path.write_text('{"A": ["first para."]}', encoding="utf-8")
    assert FixtureDocstore.load(path).get_page("A").first_paragraph == "first para."
    path.write_text("[]", encoding="utf-8")
    with pytest.raises(DataFormatError):
        FixtureDocstore.load(path)
    path.write_text("{nope", encoding="utf-8")
    with pytest.raises(DataFormatError):
        FixtureDocstore.load(path)


def test_search_hit_miss_unavailable():
    ds = make_docstore()
    state = DocstoreState()
    assert search("Paris", ds, state) == PAGES["Paris"][0]
    assert state.current_page.title == "Paris"
    miss = search("Atlantis", ds, state)
    assert miss.startswith("Could not find Atlantis. Similar: [")
    assert miss.endswith("]")
    assert search("Paris", None, DocstoreState()) == SEARCH_UNAVAILABLE


class ExplodingDocstore:
    def get_page(self, title):
        raise RuntimeError("network down")

    def similar(self, entity, n=5):
        raise RuntimeError("network down")


def test_search_swallows_docstore_errors():
    # tool errors become observation text, never exceptions
    assert search("Paris", ExplodingDocstore(), DocstoreState()) == SEARCH_UNAVAILABLE


def test_lookup_cursor_semantics():
    ds = make_docstore()
    state = DocstoreState()
    assert lookup("Seine", state) == NO_PAGE_LOADED
    search("Paris", ds, state)
    first = lookup("Paris", state)
    assert first.startswith("(Result 1/")
    second = lookup("Paris", state)
    assert second.startswith("(Result 2/")
    assert first != second
    # keyword change resets the cursor
    assert lookup("Louvre", state).startswith("(Result 1/1)")
    assert lookup("Louvre", state) == NO_MORE_RESULTS
    # case-insensitive keyword
    state2 = DocstoreState()
    search("Paris", ds, state2)
    assert lookup("paris", state2).startswith("(Result 1/")
    # new search resets everything
    search("London", ds, state)
    assert lookup("London", state).startswith("(Result 1/")


def test_lookup_counts_all_matches():
    ds = make_docstore()
    state = DocstoreState()
    search("Paris", ds, state)
    sentences = ds.get_page("Paris").sentences()
    expected = sum("paris" in s.lower() for s in sentences)
    got = lookup("Paris", state)
    assert f"/{expected})" in got


def test_split_sentences():
    assert split_sentences(["One. Two! Three?"]) == ["One.", "Two!", "Three?"]
    assert split_sentences(["A.", "B."]) == ["A.", "B."]
    assert split_sentences([""]) == []


def test_page_accessors():
    page = Page(title="T", paragraphs=("First. Second.", "Third."))
    assert page.first_paragraph == "First. Second."
    assert page.sentences() == ["First.", "Second.", "Third."]


# ---------------------------------------------------------------------------
# Critic

def test_reflect_builds_critic_dialogue():
    captured = {}

    def fn(messages, params):
        captured["messages"] = list(messages)
        return "  The sum is wrong.  "

    backend = ScriptedBackend(script_fn=fn)
    dialogue = [
        user_message("Task: q"),
        assistant_message("Thought: t Action: Reflect"),
    ]
    review = reflect(dialogue, backend)
    assert review == "The sum is wrong."
    sent = captured["messages"]
    assert sent[0].content == DEFAULT_CRITIC_PROMPT
    assert "Environment: Task: q" in sent[1].content
    assert "Agent: Thought: t Action: Reflect" in sent[1].content


def test_reflect_empty_review_sentinel():
    backend = ScriptedBackend(script_fn=lambda m, p: "   ")
    assert reflect([user_message("Task: q")], backend) == NO_ISSUES_FOUND


def test_reflect_propagates_gateway_error():
    backend = ScriptedBackend()  # NoScriptError is a GatewayError
    with pytest.raises(GatewayError):
        reflect([user_message("Task: q")], backend)
    assert issubclass(NoScriptError, GatewayError)


def test_critic_unavailable_sentinel_exists():
    assert CRITIC_UNAVAILABLE.startswith("Error:")
