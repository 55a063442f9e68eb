"""
Checking the gradients by hand
==============================

Every analytic gradient in the package is compared against central
differences in the tests. Here is the same check done once, in the open, for
the policy's log-probability of a draft.
"""
import numpy as np

from draftrl.env import generate_task
from draftrl.gradcheck import central_difference, max_relative_error
from draftrl.policy import (PolicyParams, feature_dim, log_prob, log_prob_grad, make_hints,
                            sample_draft, NUM_ACTIONS)

rng = np.random.default_rng(0)
K = 5
theta = PolicyParams(rng.uniform(-1, 1, (feature_dim(K), NUM_ACTIONS)),
                     rng.uniform(-1, 1, NUM_ACTIONS), agent_id=0)
hint = make_hints(K)[2]
query = generate_task(seed=11, depth=4)
draft, _ = sample_draft(theta, query, [], hint, temperature=0.5, seed=1)
print(draft.step_texts, "->", draft.answer)

gW, gb = log_prob_grad(theta, query, [], hint, 0.5, draft)
analytic = np.concatenate([gW.ravel(), gb])
numeric = central_difference(lambda x: log_prob(theta.from_flat(x), query, [], hint, 0.5, draft),
                             theta.flat(), h=1e-5)

print("parameters:", analytic.size)
print("max relative error:", max_relative_error(analytic, numeric))
# the largest entries, side by side
top = np.argsort(-np.abs(analytic))[:5]
print(np.c_[analytic[top], numeric[top]])
