"""
Environment tools: calculator, docstore, episodic memory
========================================================
"""

from mechact.calculator import calculate
from mechact.environment import (
    DeterministicEmbedder, DocstoreState, FixtureDocstore, build_memory,
    lookup, retrieve_memory, search,
)
from mechact.model import (
    Action, ActionKind, AgentTurn, Domain, EnvSource, EnvTurn, Mechanism,
    Trajectory, TrajectoryFormat,
)

# --- calculator -------------------------------------------------------------
for expr in ("2 + 3 * 4", "2^3^2", "(1 + 2) / 4", "-2^2", "10 % 3", "1/0"):
    print(f"{expr:>12} = {calculate(expr)}")

# --- docstore search and lookup ----------------------------------------------
pages = {
    "Ada Lovelace": [
        "Ada Lovelace was an English mathematician and writer.",
        "She worked on the Analytical Engine. Her notes describe an algorithm.",
    ],
    "Analytical Engine": [
        "The Analytical Engine was a proposed mechanical general-purpose computer.",
    ],
}
store = FixtureDocstore(pages)
state = DocstoreState()

print()
print(search("Ada Lovelace", store, state))
print(lookup("algorithm", state))
print(lookup("algorithm", state))      # cursor advances, then runs out
print(search("Charles Babage", store, state))  # miss: suggests close titles

# --- episodic memory ----------------------------------------------------------
# failed episodes become retrievable cases: similar question in, past attempt out
def failed_attempt(task_id, question, wrong):
    return Trajectory(
        task_id=task_id, domain=Domain.MATH, mechanism=Mechanism.REASON,
        turns=(
            EnvTurn(question, EnvSource.TASK_STATEMENT),
            AgentTurn(f"it must be {wrong}", Action(ActionKind.FINISH, wrong)),
        ),
        reward=0, format=TrajectoryFormat.UNIACT, extracted_answer=wrong,
    )

failures = [
    failed_attempt("m1", "A farm has 12 hens laying 3 eggs each. How many eggs?", "15"),
    failed_attempt("m2", "A car travels 60 km/h for 2 hours. How far does it go?", "62"),
    failed_attempt("m3", "What is 15% of 200?", "215"),
]
embedder = DeterministicEmbedder(dim=64)
memory = build_memory(failures, embedder)
print()
print("memory entries:", len(memory.entries), " embedder:", memory.embedder_id)

case = retrieve_memory("A train travels 80 km/h for 3 hours. How far?", memory, embedder)
print()
print(case)
