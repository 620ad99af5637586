"""
One scripted episode, turn by turn
==================================

Runs a single planning-style episode against a scripted backend and prints
everything: the dialogue the model sees, the actions it takes, and what the
environment answers.
"""

from mechact.explorer import DemoSet, EpisodeEnvironment, run_episode
from mechact.gateway import PlaybookEntry, ScriptedBackend, dialogue_from_trajectory, render_transcript
from mechact.model import AgentTurn, Domain, Mechanism, Split, Task

task = Task(
    id="demo-plan-1",
    dataset="walkthrough",
    split=Split.TRAIN,
    question="A crate holds 6 rows of 9 apples. Two rows are rotten. How many apples are good?",
    gold_answer="36",
    domain=Domain.MATH,
)

# The backend replies from a script. Each entry matches on a substring of the
# first user message and plays its turns in order, so the whole episode is
# reproducible: same prompts in, same trajectory out.
backend = ScriptedBackend(
    playbook=[
        PlaybookEntry(
            task_contains="crate holds 6 rows",
            turns=(
                "Thought: Devising a detailed plan before solving this problem may be helpful. Action: Make plan",
                "Thought: My plan: 1. Count all apples: 6 * 9 = 54. 2. Remove the two rotten rows: 2 * 9 = 18. 3. Subtract. Action: Carry out plan",
                "Thought: 54 - 18 = 36, so 36 apples are good. Action: Finish[36]",
            ),
        )
    ]
)

demos = DemoSet.load_default()
env = EpisodeEnvironment(domain=Domain.MATH)

result = run_episode(task, demos.get(Mechanism.PLAN, Domain.MATH), backend, env, Mechanism.PLAN)

print("reward:", result.reward)
print("extracted answer:", result.trajectory.extracted_answer)
print("turns:")
for i, turn in enumerate(result.trajectory.turns):
    if isinstance(turn, AgentTurn):
        print(f"  {i:2d} agent  {turn.action.kind.value:>14}  thought={turn.thought[:60]!r}")
    else:
        print(f"  {i:2d} env    {turn.source.value:>14}  {turn.observation[:60]!r}")

# The same trajectory as the chat dialogue a fine-tuning pipeline would see.
print()
print(render_transcript(dialogue_from_trajectory(result.trajectory)))
