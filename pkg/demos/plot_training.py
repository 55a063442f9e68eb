"""
A short training run
====================

Three agents, five drafts per query, trained on the bundled 500-task suite.
We plot the training reward, the held-out validation reward and the reward
components that the metrics file tracks per iteration.
"""
from dataclasses import replace

import matplotlib.pyplot as plt
import numpy as np

from draftrl.config import TrainingConfig
from draftrl.orchestrator import reward_fidelity, train
from draftrl.env import generate_suite

cfg = replace(TrainingConfig(), iterations=100, validate_every=10, patience=0)
result = train(cfg)
hist = result.history

print("steps to", cfg.threshold, ":", result.report.steps_to_threshold)
print("validation:", [(s, round(v, 3)) for s, v in result.validation_curve])

###############################################################################
# Learning curves
# ---------------

it = np.array([m.iteration for m in hist])
fig, axes = plt.subplots(1, 2, figsize=(10, 4))
axes[0].plot(it, [m.mean_task_reward for m in hist], alpha=0.5, label="train (selected drafts)")
steps, vals = zip(*result.validation_curve)
axes[0].plot(np.array(steps) - 1, vals, "o-", label="validation (global winner)")
axes[0].axhline(cfg.threshold, ls="--", c="gray")
axes[0].set_xlabel("iteration")
axes[0].set_ylabel("task reward")
axes[0].legend()

for name in ("peer", "coherence", "diversity", "combined"):
    axes[1].plot(it, [getattr(m, name) for m in hist], label=name)
axes[1].set_xlabel("iteration")
axes[1].legend()
fig.tight_layout()

###############################################################################
# How well does the reward model rank fresh drafts?
# -------------------------------------------------

rho = reward_fidelity(result.state, generate_suite(100, depth=3, seed=123))
print("Spearman(predicted, realized):", round(rho, 3))

plt.show()
