"""
What each component buys
========================

Train the full system and three ablations on the same seeds and budget:
no peer evaluation (peers return a flat 0.5), a single draft per query, and
no reinforcement learning at all. Final reward is the mean task reward of the
selected drafts over the last 25 iterations.

This takes a few minutes on one core; lower ``ITERATIONS`` for a quick look.
"""
from dataclasses import replace

import matplotlib.pyplot as plt
import numpy as np

from draftrl.config import ablation_config
from draftrl.orchestrator import train

ITERATIONS = 300
SEEDS = (1, 2)
NAMES = ("full", "no_peer_eval", "no_drafts", "no_rl_training")

curves, finals = {}, {}
for name in NAMES:
    runs = []
    for seed in SEEDS:
        cfg = replace(ablation_config(name), seed=seed, iterations=ITERATIONS, patience=0)
        runs.append([m.mean_task_reward for m in train(cfg).history])
    curves[name] = np.mean(runs, axis=0)
    finals[name] = float(np.mean([r[-25:] for r in runs]))
    print(f"{name:15s} final reward {finals[name]:.3f}")

###############################################################################
# Smoothed training curves
# ------------------------

window = 10
fig, ax = plt.subplots(figsize=(7, 4))
for name, c in curves.items():
    smooth = np.convolve(c, np.ones(window) / window, mode="valid")
    ax.plot(smooth, label=f"{name} ({finals[name]:.3f})")
ax.set_xlabel("iteration")
ax.set_ylabel(f"task reward ({window}-iteration mean)")
ax.legend()
fig.tight_layout()
plt.show()
