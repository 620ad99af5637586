"""
Exploring a task set with every mechanism
=========================================

Five mechanisms x eight tasks, all scripted. The interesting output is the
reward matrix: which mechanism solved which task. Tasks solved by everyone
teach nothing about choosing a mechanism; tasks solved by no one (kept as
negatives) and tasks with mixed outcomes drive the training sets.
"""

import tempfile
from pathlib import Path

from mechact.explorer import DemoSet, EpisodeEnvironment, ExplorationRun, explore_all
from mechact.forge import partition
from mechact.gateway import PlaybookEntry, ScriptedBackend
from mechact.model import Domain, Mechanism, Split, Task

# which mechanisms crack which task, by first letter
# (Reason, Plan, Memory, reFlection, External augmentation)
OUTCOMES = {
    "q1": "RPMFE",  # easy, everyone gets it
    "q2": "R",
    "q3": "P",
    "q4": "MF",
    "q5": "RPM",
    "q6": "",       # nobody solves it
    "q7": "E",
    "q8": "RPMFE",
}
CODE = {m: c for m, c in zip(Mechanism.ordered(), "RPMFE")}

# one distinctive phrase from each packaged math demo, to route scripts
SIGNATURE = {
    Mechanism.REASON: "bakery sold 14 muffins",
    Mechanism.PLAN: "Lena has 3 boxes",
    Mechanism.MEMORY: "train travels 60 miles",
    Mechanism.REFLECTION: "Tom buys 4 notebooks",
    Mechanism.EXTERNAL_AUGMENTATION: "127 * 43",
}


def turns_for(mechanism, answer):
    finish = f"Thought: That settles it. Action: Finish[{answer}]"
    return {
        Mechanism.REASON: (finish,),
        Mechanism.PLAN: (
            "Thought: Devising a detailed plan before solving this problem may be helpful. Action: Make plan",
            "Thought: My plan: 1. work it out. 2. answer. Action: Carry out plan",
            finish,
        ),
        Mechanism.MEMORY: (
            "Thought: A similar case from memory may help here. Action: Retrieve memory",
            finish,
        ),
        Mechanism.REFLECTION: (
            "Thought: The answer might be 0. Action: Reflect",
            finish,
        ),
        Mechanism.EXTERNAL_AUGMENTATION: (
            "Thought: Let me compute it. Action: Calculate[20 + 1]",
            finish,
        ),
    }[mechanism]


tasks = [
    Task(id=q, dataset="demo", split=Split.TRAIN, question=f"Task {q}: what is planted here?",
         gold_answer=str(20 + i), domain=Domain.MATH)
    for i, q in enumerate(OUTCOMES)
]
gold = {t.id: t.gold_answer for t in tasks}

playbook = []
for q, codes in OUTCOMES.items():
    for mech in Mechanism.ordered():
        answer = gold[q] if CODE[mech] in codes else "-1"
        playbook.append(
            PlaybookEntry(
                task_contains=f"Task {q}:",
                demo_contains=SIGNATURE[mech],
                turns=turns_for(mech, answer),
            )
        )

out_dir = Path(tempfile.mkdtemp(prefix="explore_demo_"))
run = ExplorationRun(
    tasks=tasks,
    mechanisms=Mechanism.ordered(),
    demos=DemoSet.load_default(),
    backend=ScriptedBackend(playbook=playbook),
    environment=EpisodeEnvironment(domain=Domain.MATH),
    out_dir=out_dir,
    concurrency=4,
)
result = explore_all(run)

print("episodes:", result.report["n_cells"], " ok:", result.report["n_ok"])
print()

# the reward matrix, rows in mechanism order
header = "              " + "".join(f"{t.id:>4}" for t in tasks)
print(header)
for i, mech in enumerate(result.matrix.mechanisms):
    row = "".join(f"{int(result.matrix.cells[i, j]):>4}" for j in range(len(tasks)))
    print(f"{mech.label:>14}{row}")

part = partition(result.matrix)
print()
print("solved by all: ", list(part.solved_by_all))
print("sensitive:     ", list(part.sensitive))
print("positive cells:", len(part.maao_pos), " negative cells:", len(part.maao_neg))
print("files in", out_dir)
for p in sorted(out_dir.iterdir()):
    print("  ", p.name, p.stat().st_size, "bytes")
