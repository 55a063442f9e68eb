"""
Drafts, peer scores and rewards for one task
============================================

A tour of a single query: sample five terse drafts from an untrained agent,
check the word limit, look at how different they are, let two peers score
them and compare the peer view with the true task reward.
"""
import numpy as np

from draftrl.cod import diversity, render_draft, validate_draft
from draftrl.env import generate_task, task_reward
from draftrl.peer import CRITERIA, EvaluatorProfile, aggregate, evaluate
from draftrl.policy import init_policy, make_hints, sample_draft, temperature_schedule

###############################################################################
# A task
# ------
# Chains of add/sub/mul over single-digit operands. The prompt is what an
# agent sees; the payload holds the chain itself.

query = generate_task(seed=3, depth=3)
print(query.prompt, "->", query.truth)
print("intermediates:", query.payload.intermediates())

###############################################################################
# Five drafts from one agent
# --------------------------
# Temperatures spread from 0.2 to 0.8, each draft gets its own strategy hint,
# and earlier drafts push later ones away from values already used.

K = 5
theta = init_policy(agent_id=0, num_strategies=K, history_repulsion=1.0)
hints = make_hints(K)
drafts = []
for k in range(K):
    d, _ = sample_draft(theta, query, drafts, hints[k], temperature_schedule(k, K), seed=100 + k)
    drafts.append(d)

for d in drafts:
    print(f"--- draft {d.draft_index} (T={d.meta.temperature:.2f}, "
          f"valid={validate_draft(d).valid})")
    print(render_draft(d))

print("diversity of the set:", round(diversity(drafts), 3))
print("diversity of one draft:", diversity(drafts[:1]))

###############################################################################
# Peer view versus ground truth
# -----------------------------
# Agents 1 and 2 score agent 0's drafts. One query rarely has a correct draft
# before training, so pool the drafts of twenty depth-2 queries. Evaluator
# noise is small and the mean peer score should track the task reward.

peers = [EvaluatorProfile(j, noise_sigma=0.1, seed=j) for j in (1, 2)]
agg = aggregate([evaluate(p, drafts[0], query) for p in peers])
print("draft 0 criteria:", ", ".join(f"{c}={v:.2f}" for c, v in zip(CRITERIA, agg[:5])))

peer_scores, rewards = [], []
for i in range(20):
    q = generate_task(seed=1000 + i, depth=2)
    pool = []
    for k in range(K):
        d, _ = sample_draft(theta, q, pool, hints[k], temperature_schedule(k, K), seed=i * K + k)
        pool.append(d)
        peer_scores.append(aggregate([evaluate(p, d, q) for p in peers])[-1])
        rewards.append(task_reward(d, q).value)

peer_scores, rewards = np.array(peer_scores), np.array(rewards)
print("drafts with a correct answer:", int(np.sum(rewards >= 0.7)), "of", len(rewards))
print("corr(peer mean, reward):", np.round(np.corrcoef(peer_scores, rewards)[0, 1], 3))
