"""Learned reward model used to rank drafts before execution.

A two-layer tanh perceptron with a logistic output maps a draft's feature
vector (aggregated peer scores plus cheap draft statistics) to a predicted
reward in (0, 1). It is trained online by plain gradient descent on squared
error against the realized task reward of executed drafts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .cod import Draft, pairwise_distances
from .env import MAX_DEPTH, Query

NUM_PEER_FEATURES = 6


class DimensionMismatch(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


class NonFiniteLoss(FloatingPointError):
    pass


class EmptyList(ValueError):
    pass


def reward_feature_dim(num_strategies: int) -> int:
    return NUM_PEER_FEATURES + 3 + num_strategies


@dataclass(frozen=True)
class RewardModelParams:
    w1: np.ndarray  # [hidden, dim]
    b1: np.ndarray  # [hidden]
    w2: np.ndarray  # [hidden]
    b2: float = 0.0
    version: int = 0

    @property
    def input_dim(self) -> int:
        return self.w1.shape[1]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.w1.ravel(), self.b1, self.w2, [self.b2]])

    def from_flat(self, x: np.ndarray) -> "RewardModelParams":
        H, D = self.w1.shape
        i = H * D
        return replace(self, w1=x[:i].reshape(H, D).copy(), b1=x[i:i + H].copy(),
                       w2=x[i + H:i + 2 * H].copy(), b2=float(x[-1]))


@dataclass(frozen=True)
class RewardPrediction:
    value: float
    draft_ref: tuple[int, int, int]  # (query id, agent id, draft index)


def init_reward_model(input_dim: int, hidden: int = 16, seed: int = 0,
                      zero: bool = False) -> RewardModelParams:
    """Random first layer, zero output layer: every prediction starts at 0.5."""
    if zero:
        w1 = np.zeros((hidden, input_dim))
    else:
        w1 = np.random.default_rng(seed).normal(0.0, 1.0 / np.sqrt(input_dim), (hidden, input_dim))
    return RewardModelParams(w1, np.zeros(hidden), np.zeros(hidden), 0.0, 0)


def diversity_rank(index: int, siblings: Sequence[Draft]) -> float:
    """Rank of a draft's mean distance to its siblings, scaled to [0, 1].

    Ties are ordered by draft position. A single draft ranks 0.
    """
    K = len(siblings)
    if K <= 1:
        return 0.0
    dist = np.array(pairwise_distances(siblings))
    mean_dist = dist.sum(axis=1) / (K - 1)
    order = np.argsort(mean_dist, kind="stable")
    return float(np.flatnonzero(order == index)[0]) / (K - 1)


def featurize(draft: Draft, query: Query, agg: np.ndarray, sibling_drafts: Sequence[Draft],
              num_strategies: int) -> np.ndarray:
    agg = np.asarray(agg, dtype=float)
    if agg.shape != (NUM_PEER_FEATURES,):
        raise DimensionMismatch(f"expected {NUM_PEER_FEATURES} peer features, got {agg.shape}")
    meta = draft.meta
    strategy = np.zeros(num_strategies)
    temperature = 0.5
    if meta is not None:
        if meta.strategy_id >= num_strategies:
            raise DimensionMismatch("strategy id exceeds the configured number of strategies")
        strategy[meta.strategy_id] = 1.0
        temperature = meta.temperature
    index = next((i for i, d in enumerate(sibling_drafts) if d.draft_index == draft.draft_index), 0)
    extra = [len(draft.steps) / MAX_DEPTH, diversity_rank(index, sibling_drafts), temperature]
    return np.concatenate([agg, extra, strategy])


def _forward(phi: RewardModelParams, X: np.ndarray):
    h = np.tanh(X @ phi.w1.T + phi.b1)
    z = h @ phi.w2 + phi.b2
    y = 0.5 * (1.0 + np.tanh(0.5 * z))  # logistic, overflow-free
    return h, y


def predict_values(phi: RewardModelParams, X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != phi.input_dim:
        raise DimensionMismatch(f"features have dim {X.shape[1]}, model expects {phi.input_dim}")
    return _forward(phi, X)[1]


def predict(phi: RewardModelParams, features: np.ndarray,
            draft_ref: tuple[int, int, int] = (0, 0, 0)) -> RewardPrediction:
    return RewardPrediction(float(predict_values(phi, features)[0]), draft_ref)


def select(predictions: Sequence[RewardPrediction]) -> tuple[int, int, int]:
    """Highest value wins; ties go to the lowest (agent id, draft index)."""
    if not predictions:
        raise EmptyList("no predictions to select from")
    best = min(predictions, key=lambda p: (-p.value, p.draft_ref[1], p.draft_ref[2], p.draft_ref[0]))
    return best.draft_ref


def mse_loss_and_grad(phi: RewardModelParams, X: np.ndarray,
                      targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean squared error and its gradient as a flat vector (``phi.flat()`` layout)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    t = np.asarray(targets, dtype=float)
    if X.shape[1] != phi.input_dim:
        raise DimensionMismatch(f"features have dim {X.shape[1]}, model expects {phi.input_dim}")
    n = len(t)
    h, y = _forward(phi, X)
    loss = float(np.mean((y - t) ** 2))
    dz = 2.0 * (y - t) / n * y * (1.0 - y)
    gw2 = h.T @ dz
    gb2 = dz.sum()
    da = np.outer(dz, phi.w2) * (1.0 - h**2)
    gw1 = da.T @ X
    gb1 = da.sum(axis=0)
    return loss, np.concatenate([gw1.ravel(), gb1, gw2, [gb2]])


def update_reward_model(phi: RewardModelParams, features: np.ndarray, targets: np.ndarray,
                        learning_rate: float) -> tuple[RewardModelParams, float]:
    """One gradient step on the batch; returns the new params and the pre-step loss."""
    if len(targets) == 0:
        raise EmptyBatch("reward model update needs at least one example")
    loss, grad = mse_loss_and_grad(phi, features, targets)
    if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
        raise NonFiniteLoss(f"reward model loss is not finite ({loss})")
    new = phi.from_flat(phi.flat() - learning_rate * grad)
    return replace(new, version=phi.version + 1), loss


def save_reward_model(phi: RewardModelParams, path: str | Path) -> None:
    doc = {
        "kind": "reward_model",
        "version": phi.version,
        "shape": list(phi.w1.shape),
        "params": phi.flat().tolist(),
    }
    Path(path).write_text(json.dumps(doc))


def load_reward_model(path: str | Path) -> RewardModelParams:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "reward_model":
        raise ValueError(f"{path} is not a reward model checkpoint")
    H, D = doc["shape"]
    blank = RewardModelParams(np.zeros((H, D)), np.zeros(H), np.zeros(H), 0.0, doc["version"])
    return blank.from_flat(np.array(doc["params"], dtype=float))
