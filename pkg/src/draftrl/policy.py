"""Per-agent stochastic draft policy.

At every chain position the policy picks one of ``NUM_ACTIONS`` candidate
values, the true intermediate value shifted by an offset in
``[-WINDOW, WINDOW]``. Logits are linear in a small hand-built state feature
vector and divided by the sampling temperature. Each step is rendered as the
five-word template ``apply <op> <operand> get <value>``.

Log-probabilities and their gradients are exact, so everything downstream
(PPO ratios, imitation NLL) can be checked against enumeration and finite
differences.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cod import Draft, GenerationMeta, ReasoningStep, validate_draft
from .env import MAX_DEPTH, Query, step_value

WINDOW = 4
NUM_ACTIONS = 2 * WINDOW + 1
NUM_OPERAND_BINS = 9
VALUE_BUCKETS = (0, 10, 100, 1000)  # edges: <0, [0,10), [10,100), [100,1000), >=1000
MAX_RESAMPLE = 16

STRATEGY_DESCRIPTIONS = (
    "compute each step directly",
    "double-check every operation",
    "track the running total",
    "estimate then refine",
    "verify the final answer",
)

TEMP_LOW, TEMP_HIGH = 0.2, 0.8


class OutOfSupport(ValueError):
    pass


class BadIndex(ValueError):
    pass


def temperature_schedule(k: int, K: int) -> float:
    """Inclusive linear grid over [0.2, 0.8]; the midpoint when K == 1."""
    if K < 1 or not 0 <= k < K:
        raise BadIndex(f"draft index {k} out of range for K={K}")
    if K == 1:
        return 0.5 * (TEMP_LOW + TEMP_HIGH)
    return TEMP_LOW + (TEMP_HIGH - TEMP_LOW) * k / (K - 1)


@dataclass(frozen=True)
class StrategyHint:
    strategy_id: int
    num_strategies: int
    description: str = ""

    def one_hot(self) -> np.ndarray:
        v = np.zeros(self.num_strategies)
        v[self.strategy_id] = 1.0
        return v


def make_hints(K: int) -> list[StrategyHint]:
    return [
        StrategyHint(k, K, STRATEGY_DESCRIPTIONS[k % len(STRATEGY_DESCRIPTIONS)])
        for k in range(K)
    ]


def feature_dim(num_strategies: int) -> int:
    # position, operator, operand, previous-value bucket, strategy, history counts
    return 1 + 3 + NUM_OPERAND_BINS + len(VALUE_BUCKETS) + 1 + num_strategies + NUM_ACTIONS


@dataclass(frozen=True)
class PolicyParams:
    weights: np.ndarray  # [feature_dim, NUM_ACTIONS]
    bias: np.ndarray  # [NUM_ACTIONS]
    agent_id: int = 0
    version: int = 0

    @property
    def num_strategies(self) -> int:
        return self.weights.shape[0] - feature_dim(0)

    def with_update(self, weights: np.ndarray, bias: np.ndarray) -> "PolicyParams":
        return replace(self, weights=weights, bias=bias, version=self.version + 1)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.weights.ravel(), self.bias])

    def from_flat(self, x: np.ndarray) -> "PolicyParams":
        n = self.weights.size
        return replace(self, weights=x[:n].reshape(self.weights.shape).copy(),
                       bias=x[n:].copy())


def init_policy(agent_id: int, num_strategies: int, history_repulsion: float = 0.0) -> PolicyParams:
    """Zero weights, except an optional negative prior on repeating a candidate
    already chosen by earlier drafts of the same query."""
    F = feature_dim(num_strategies)
    W = np.zeros((F, NUM_ACTIONS))
    h0 = F - NUM_ACTIONS
    W[h0:, :] += -history_repulsion * np.eye(NUM_ACTIONS)
    return PolicyParams(W, np.zeros(NUM_ACTIONS), agent_id, 0)


def _value_bucket(v: int) -> int:
    return int(np.searchsorted(VALUE_BUCKETS, v, side="right"))


def step_features(query: Query, t: int, prev_value: int, hint: StrategyHint,
                  history_counts: np.ndarray) -> np.ndarray:
    op, operand = query.payload.ops[t]
    x = np.zeros(feature_dim(hint.num_strategies))
    x[0] = t / MAX_DEPTH
    x[1 + ("add", "sub", "mul").index(op)] = 1.0
    i = 4
    x[i + (operand - 1) % NUM_OPERAND_BINS] = 1.0
    i += NUM_OPERAND_BINS
    x[i + _value_bucket(prev_value)] = 1.0
    i += len(VALUE_BUCKETS) + 1
    x[i + hint.strategy_id] = 1.0
    i += hint.num_strategies
    x[i:] = history_counts
    return x


def _history_counts(history: Sequence[Draft], t: int, truth_t: int) -> np.ndarray:
    counts = np.zeros(NUM_ACTIONS)
    for d in history:
        if t < len(d.steps):
            v = step_value(d.steps[t].text)
            if v is not None and abs(v - truth_t) <= WINDOW:
                counts[v - truth_t + WINDOW] += 1.0
    return counts


def step_text(op: str, operand: int, value: int) -> str:
    return f"apply {op} {operand} get {value}"


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


@dataclass
class TrajectoryRecord:
    """Per-step samples of one draft, in the order they were generated."""

    features: np.ndarray  # [m, F]
    actions: np.ndarray  # [m]
    log_probs: np.ndarray  # [m]
    temperature: float
    draft_ref: tuple[int, int, int]  # (query id, agent id, draft index)
    policy_version: int = 0
    values: np.ndarray = field(default=None)  # critic estimates, filled by the trainer
    rewards: np.ndarray = field(default=None)

    def __len__(self) -> int:
        return len(self.actions)


def _draft_features(params: PolicyParams, query: Query, history: Sequence[Draft],
                    hint: StrategyHint, draft: Draft) -> tuple[np.ndarray, np.ndarray]:
    truth = query.payload.intermediates()
    if len(draft.steps) != len(truth):
        raise OutOfSupport(f"draft has {len(draft.steps)} steps, task has {len(truth)}")
    X, actions = [], []
    prev = query.payload.start
    for t, step in enumerate(draft.steps):
        v = step_value(step.text)
        if v is None or abs(v - truth[t]) > WINDOW:
            raise OutOfSupport(f"step {t} value {v!r} outside the candidate window")
        X.append(step_features(query, t, prev, hint, _history_counts(history, t, truth[t])))
        actions.append(v - truth[t] + WINDOW)
        prev = v
    return np.array(X), np.array(actions, dtype=np.int64)


def step_log_probs(params: PolicyParams, X: np.ndarray, actions: np.ndarray,
                   temperature: float | np.ndarray) -> np.ndarray:
    temps = np.broadcast_to(np.asarray(temperature, dtype=float), (len(X),))
    logits = (X @ params.weights + params.bias) / temps[:, None]
    return log_softmax(logits)[np.arange(len(X)), actions]


def weighted_log_prob_grad(params: PolicyParams, X: np.ndarray, actions: np.ndarray,
                           temperature: float | np.ndarray,
                           coeffs: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of ``sum_t coeffs[t] * log pi(a_t | x_t)`` w.r.t. (weights, bias)."""
    n = len(X)
    temps = np.broadcast_to(np.asarray(temperature, dtype=float), (n,))
    logits = (X @ params.weights + params.bias) / temps[:, None]
    P = np.exp(log_softmax(logits))
    G = -P
    G[np.arange(n), actions] += 1.0
    G /= temps[:, None]
    if coeffs is not None:
        G *= np.asarray(coeffs, dtype=float)[:, None]
    return X.T @ G, G.sum(axis=0)


def step_distribution(params: PolicyParams, x: np.ndarray, temperature: float) -> np.ndarray:
    return np.exp(log_softmax((x @ params.weights + params.bias) / temperature))


def sample_draft(params: PolicyParams, query: Query, history: Sequence[Draft],
                 hint: StrategyHint, temperature: float, seed: int,
                 draft_index: int | None = None) -> tuple[Draft, TrajectoryRecord]:
    """Sample one draft; a pure function of its arguments."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    k = len(history) if draft_index is None else draft_index
    rng = np.random.default_rng(seed & (2**64 - 1))
    truth = query.payload.intermediates()
    for _ in range(MAX_RESAMPLE):
        X, actions, lps, texts = [], [], [], []
        prev = query.payload.start
        for t, (op, operand) in enumerate(query.payload.ops):
            x = step_features(query, t, prev, hint, _history_counts(history, t, truth[t]))
            lp = log_softmax((x @ params.weights + params.bias) / temperature)
            a = int(np.searchsorted(np.cumsum(np.exp(lp)), rng.random() * np.exp(lp).sum(),
                                    side="right"))
            a = min(a, NUM_ACTIONS - 1)
            value = truth[t] + a - WINDOW
            X.append(x)
            actions.append(a)
            lps.append(lp[a])
            texts.append(step_text(op, operand, value))
            prev = value
        meta = GenerationMeta(temperature, hint.strategy_id, len(history), int(seed))
        draft = Draft(tuple(ReasoningStep(s) for s in texts), str(prev),
                      agent_id=params.agent_id, draft_index=k, meta=meta)
        if validate_draft(draft).valid:
            break
    else:  # pragma: no cover - the step template is always five words
        raise RuntimeError("could not sample a CoD-valid draft")
    traj = TrajectoryRecord(
        features=np.array(X),
        actions=np.array(actions, dtype=np.int64),
        log_probs=np.array(lps),
        temperature=temperature,
        draft_ref=(query.id, params.agent_id, k),
        policy_version=params.version,
    )
    return draft, traj


def log_prob(params: PolicyParams, query: Query, history: Sequence[Draft],
             hint: StrategyHint, temperature: float, draft: Draft) -> float:
    X, actions = _draft_features(params, query, history, hint, draft)
    return float(step_log_probs(params, X, actions, temperature).sum())


def log_prob_grad(params: PolicyParams, query: Query, history: Sequence[Draft],
                  hint: StrategyHint, temperature: float,
                  draft: Draft) -> tuple[np.ndarray, np.ndarray]:
    """(d/dweights, d/dbias) of :func:`log_prob`."""
    X, actions = _draft_features(params, query, history, hint, draft)
    return weighted_log_prob_grad(params, X, actions, temperature)


def save_policy(params: PolicyParams, path: str | Path, critic=None) -> None:
    """JSON checkpoint; ``critic`` (weights, bias) is stored alongside when given."""
    doc = {
        "kind": "policy",
        "agent_id": params.agent_id,
        "version": params.version,
        "weights_shape": list(params.weights.shape),
        "weights": params.weights.ravel().tolist(),
        "bias": params.bias.tolist(),
    }
    if critic is not None:
        doc["critic"] = {"weights": critic.weights.tolist(), "bias": critic.bias}
    Path(path).write_text(json.dumps(doc))


def load_policy(path: str | Path) -> PolicyParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "policy":
        raise ValueError(f"{path} is not a policy checkpoint")
    W = np.array(doc["weights"], dtype=float).reshape(doc["weights_shape"])
    return PolicyParams(W, np.array(doc["bias"], dtype=float), doc["agent_id"], doc["version"])

