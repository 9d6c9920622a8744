#!/usr/bin/env python3
"""The reward model mapping inferred stage distributions to actions.

Fits the 3-component mixture on the shipped canonical training data and
walks through how the recommended action escalates as confidence moves from
benign through gathering to late attack stages.
"""

import numpy as np

from stagewatch.rewards import ACTIONS, choose_action, default_reward_model, reward

model = default_reward_model()

print("reward table u(action, stage):")
header = "        " + " ".join(f"s{s:<5}" for s in range(11))
print(header)
for a in ACTIONS:
    row = " ".join(f"{reward(model, a, s):.4f}"[:6] for s in range(11))
    print(f"  {a}:  {row}")

print("\npreferred action per stage:",
      [ACTIONS[int(np.argmax(model.table[:, s]))] for s in range(11)])

def onehot(s):
    v = [0.0] * 11
    v[s] = 1.0
    return v

cases = [
    ("certain benign", onehot(0)),
    ("certain discovery", onehot(1)),
    ("uncertain around access/gathering", [0, 0.1, 0.35, 0.35, 0.2, 0, 0, 0, 0, 0, 0]),
    ("certain lateral movement", onehot(7)),
    ("mid-attack, spread over late stages", [0.05, 0.05, 0.05, 0.05, 0.1, 0.3, 0.2, 0.05, 0.05, 0.05, 0.05]),
]
print()
for name, dist in cases:
    print(f"  {name:<38} -> {choose_action(dist, model)}")

print("\nEM fit:", len(model.ll_history), "iterations, penalized log-likelihood",
      " -> ".join(f"{x:.2f}" for x in model.ll_history[:4]))
