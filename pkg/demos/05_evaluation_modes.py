"""
Evaluation modes and the specificity report
===========================================

The same scripted world evaluated four ways: one mechanism at a time, a
majority vote across mechanisms, zero-shot, and sampled self-consistency.
Then the reward matrix is distilled into the specificity report: how much
of each mechanism's accuracy is shared vs mechanism-specific.
"""

import numpy as np

from mechact.evaluation import evaluate, majority_vote, specificity_report
from mechact.explorer import DemoSet, EpisodeEnvironment
from mechact.gateway import PlaybookEntry, ScriptedBackend
from mechact.model import Domain, Mechanism, RewardMatrix, Split, Task

SIGNATURE = {
    Mechanism.REASON: "bakery sold 14 muffins",
    Mechanism.PLAN: "Lena has 3 boxes",
    Mechanism.MEMORY: "train travels 60 miles",
    Mechanism.REFLECTION: "Tom buys 4 notebooks",
    Mechanism.EXTERNAL_AUGMENTATION: "127 * 43",
}
OUTCOMES = {"e1": "RPMFE", "e2": "RP", "e3": "M", "e4": "RPM", "e5": ""}
CODE = {m: c for m, c in zip(Mechanism.ordered(), "RPMFE")}

tasks = [
    Task(id=q, dataset="demo", split=Split.TEST, question=f"Task {q}: what is planted?",
         gold_answer=str(50 + i), domain=Domain.MATH)
    for i, q in enumerate(OUTCOMES)
]
gold = {t.id: t.gold_answer for t in tasks}

playbook = []
for q, codes in OUTCOMES.items():
    for mech in Mechanism.ordered():
        answer = gold[q] if CODE[mech] in codes else "0"
        playbook.append(PlaybookEntry(
            task_contains=f"Task {q}:",
            demo_contains=SIGNATURE[mech],
            turns=(f"Thought: Done. Action: Finish[{answer}]",),
        ))
    # a no-demo entry so zero-shot and consistency modes get answers too
    playbook.append(PlaybookEntry(
        task_contains=f"Task {q}:",
        turns=(f"Thought: Guessing cold. Action: Finish[{gold[q] if codes else '0'}]",),
    ))

backend = ScriptedBackend(playbook=playbook)
env = EpisodeEnvironment(domain=Domain.MATH)
demos = DemoSet.load_default()

for mode in ("single:Reason", "single:Memory", "majority", "zero_shot",
             "self_adapt_consistency:3"):
    report = evaluate(tasks, mode, backend, env, demos)
    print(f"{mode:>26}: score={report.score:.3f} over n={report.n}")

# majority voting is normalization-aware: 5.0 and 5 pool their votes
print()
print("vote(['5.0', '7', '5']) ->", majority_vote(["5.0", "7", "5"], Domain.MATH))
print("vote(['a', 'b'])        ->", majority_vote(["a", "b"], Domain.KIQA), "(tie: earliest wins)")

# the specificity report, straight from a reward matrix
cells = np.array([[1 if CODE[m] in OUTCOMES[q] else 0 for q in OUTCOMES]
                  for m in Mechanism.ordered()], dtype=np.int8)
matrix = RewardMatrix(Mechanism.ordered(), tuple(OUTCOMES), cells)
spec = specificity_report(matrix)
print()
print("solved by all:", spec.solved_by_all, "  any mechanism:", spec.olama)
for label, acc in spec.per_mechanism_accuracy.items():
    print(f"  {label:>22}: accuracy={acc:.2f}  beyond-shared={spec.residual[label]:.2f}")
