"""Policy learning: PPO with GAE, a linear critic and an imitation term.

The per-agent objective is

    ppo_loss + imitation_weight * imitation_loss + 0.5 * value_loss

with all gradients written out by hand. Parameters are updated with AdamW.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .cod import Draft
from .env import Query
from .policy import (PolicyParams, StrategyHint, TrajectoryRecord, log_prob,
                     step_log_probs, weighted_log_prob_grad)

logger = logging.getLogger(__name__)

RATIO_CLAMP = 20.0
VALUE_COEF = 0.5


class LengthMismatch(ValueError):
    pass


class StaleBatch(RuntimeError):
    pass


@dataclass(frozen=True)
class PPOConfig:
    clip_epsilon: float = 0.2
    gamma: float = 0.99
    gae_lambda: float = 0.95
    imitation_weight: float = 0.5
    learning_rate: float = 0.0005
    weight_decay: float = 0.01
    epochs_per_batch: int = 4

    def __post_init__(self):
        if not 0 < self.clip_epsilon < 1:
            raise ValueError("clip_epsilon must be in (0, 1)")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must be in (0, 1]")
        if not 0 <= self.gae_lambda <= 1:
            raise ValueError("gae_lambda must be in [0, 1]")
        if self.imitation_weight < 0:
            raise ValueError("imitation_weight must be non-negative")
        if self.epochs_per_batch < 1:
            raise ValueError("epochs_per_batch must be >= 1")


@dataclass(frozen=True)
class ValueParams:
    weights: np.ndarray
    bias: float = 0.0
    agent_id: int = 0
    version: int = 0

    def flat(self) -> np.ndarray:
        return np.append(self.weights, self.bias)

    def from_flat(self, x: np.ndarray) -> "ValueParams":
        return replace(self, weights=x[:-1].copy(), bias=float(x[-1]))

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return X @ self.weights + self.bias


def init_value(agent_id: int, dim: int) -> ValueParams:
    return ValueParams(np.zeros(dim), 0.0, agent_id, 0)


def gae(rewards: Sequence[float], values: Sequence[float], bootstrap: float,
        gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimates and return targets for one episode."""
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(r) != len(v) or len(r) == 0:
        raise LengthMismatch(f"rewards ({len(r)}) and values ({len(v)}) must match and be non-empty")
    v_next = np.append(v[1:], bootstrap)
    delta = r + gamma * v_next - v
    adv = np.empty_like(delta)
    acc = 0.0
    for t in range(len(delta) - 1, -1, -1):
        acc = delta[t] + gamma * lam * acc
        adv[t] = acc
    return adv, adv + v


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    adv = np.asarray(adv, dtype=float)
    if adv.size <= 1:
        return adv.copy()
    centered = adv - adv.mean()
    std = centered.std()
    return centered / std if std > 1e-12 else centered


def _clamped_log_ratio(old: np.ndarray, new: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    diff = new - old
    inside = np.abs(diff) <= RATIO_CLAMP
    if not inside.all():
        logger.warning("clamping %d log-ratios with |new - old| > %g",
                       int((~inside).sum()), RATIO_CLAMP)
        diff = np.clip(diff, -RATIO_CLAMP, RATIO_CLAMP)
    return diff, inside


def _ppo(old_log_probs, new_log_probs, advantages, eps, normalize):
    old = np.asarray(old_log_probs, dtype=float)
    new = np.asarray(new_log_probs, dtype=float)
    adv = np.asarray(advantages, dtype=float)
    if not len(old) == len(new) == len(adv):
        raise LengthMismatch("ppo_loss inputs must have equal lengths")
    if normalize:
        adv = normalize_advantages(adv)
    diff, inside = _clamped_log_ratio(old, new)
    ratio = np.exp(diff)
    unclipped = ratio * adv
    clipped = np.clip(ratio, 1 - eps, 1 + eps) * adv
    objective = np.minimum(unclipped, clipped)
    terms = -objective
    n = len(terms)
    # d(loss)/d(new_log_prob): the unclipped branch is active when it attains the min
    active = (unclipped <= clipped) & inside
    dnew = np.where(active, -adv * ratio, 0.0) / n
    clip_frac = float(np.mean(np.abs(ratio - 1) > eps)) if n else 0.0
    return float(terms.mean()), terms, dnew, float(ratio.mean()), clip_frac


def ppo_loss(old_log_probs, new_log_probs, advantages, eps: float = 0.2,
             normalize: bool = True) -> tuple[float, np.ndarray]:
    """Clipped surrogate loss; returns the mean and the per-sample loss terms."""
    loss, terms, *_ = _ppo(old_log_probs, new_log_probs, advantages, eps, normalize)
    return loss, terms


def imitation_loss(params: PolicyParams, query: Query, history: Sequence[Draft],
                   hint: StrategyHint, temperature: float, selected: Draft) -> float:
    """Negative log-likelihood of the selected draft."""
    return -log_prob(params, query, history, hint, temperature, selected)


def value_loss_and_grad(psi: ValueParams, X: np.ndarray,
                        returns: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE of the linear critic; gradient in ``psi.flat()`` layout."""
    X = np.atleast_2d(X)
    returns = np.asarray(returns, dtype=float)
    if len(X) != len(returns):
        raise LengthMismatch(f"{len(X)} states but {len(returns)} returns")
    err = psi(X) - returns
    n = len(err)
    return float(np.mean(err**2)), np.append(2.0 / n * (X.T @ err), 2.0 / n * err.sum())


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0


def adamw_step(x: np.ndarray, grad: np.ndarray, state: AdamState | None, lr: float,
               weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
    """One AdamW step with decoupled weight decay; returns (new x, new state)."""
    if state is None:
        state = AdamState(np.zeros_like(x), np.zeros_like(x))
    b1, b2 = betas
    step = state.step + 1
    m = b1 * state.m + (1 - b1) * grad
    v = b2 * state.v + (1 - b2) * grad**2
    mhat = m / (1 - b1**step)
    vhat = v / (1 - b2**step)
    x = x - lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * x)
    return x, AdamState(m, v, step)


@dataclass
class UpdateBatch:
    """Trajectories of one agent, flattened to steps, with fixed advantage targets."""

    X: np.ndarray
    actions: np.ndarray
    temps: np.ndarray
    old_log_probs: np.ndarray
    advantages: np.ndarray
    returns: np.ndarray
    imitation_X: np.ndarray
    imitation_actions: np.ndarray
    imitation_temps: np.ndarray
    num_selected: int
    policy_version: int


def build_batch(trajectories: Sequence[TrajectoryRecord], selected: Sequence[TrajectoryRecord],
                psi: ValueParams, config: PPOConfig, normalize: bool = True) -> UpdateBatch:
    """GAE over each trajectory with the current critic, then stack into one batch.

    Each trajectory must carry per-step ``rewards``.
    """
    if not trajectories:
        raise ValueError("empty trajectory batch")
    versions = {t.policy_version for t in trajectories}
    if len(versions) != 1:
        raise StaleBatch(f"batch mixes policy versions {sorted(versions)}")
    advs, rets = [], []
    for tr in trajectories:
        if tr.rewards is None or len(tr.rewards) != len(tr):
            raise LengthMismatch(f"trajectory {tr.draft_ref} has no aligned rewards")
        values = psi(tr.features)
        a, r = gae(tr.rewards, values, 0.0, config.gamma, config.gae_lambda)
        advs.append(a)
        rets.append(r)
    adv = np.concatenate(advs)
    if normalize:
        adv = normalize_advantages(adv)

    def stack(trs):
        if not trs:
            F = trajectories[0].features.shape[1]
            return np.zeros((0, F)), np.zeros(0, dtype=np.int64), np.zeros(0)
        return (np.concatenate([t.features for t in trs]),
                np.concatenate([t.actions for t in trs]),
                np.concatenate([np.full(len(t), t.temperature) for t in trs]))

    X, actions, temps = stack(trajectories)
    iX, iA, iT = stack(selected)
    return UpdateBatch(X, actions, temps, np.concatenate([t.log_probs for t in trajectories]),
                       adv, np.concatenate(rets), iX, iA, iT, len(selected), versions.pop())


@dataclass
class LossReport:
    ppo_loss: float
    imitation_loss: float
    value_loss: float
    mean_ratio: float
    clip_fraction: float

    @property
    def total(self) -> float:
        return self.ppo_loss + self.imitation_loss + self.value_loss


def combined_loss_and_grad(theta: PolicyParams, psi: ValueParams, batch: UpdateBatch,
                           config: PPOConfig):
    """Total loss and its gradient.

    Returns ``(total, grad_theta_flat, grad_psi_flat, parts)`` where ``parts``
    holds the unweighted ppo, imitation and value losses.
    """
    new_lp = step_log_probs(theta, batch.X, batch.actions, batch.temps)
    ppo, _, dnew, mean_ratio, clip_frac = _ppo(batch.old_log_probs, new_lp, batch.advantages,
                                               config.clip_epsilon, normalize=False)
    gW, gb = weighted_log_prob_grad(theta, batch.X, batch.actions, batch.temps, dnew)

    imit = 0.0
    alpha = config.imitation_weight
    if batch.num_selected:
        lp = step_log_probs(theta, batch.imitation_X, batch.imitation_actions, batch.imitation_temps)
        imit = -float(lp.sum()) / batch.num_selected
        iW, ib = weighted_log_prob_grad(theta, batch.imitation_X, batch.imitation_actions,
                                        batch.imitation_temps)
        gW = gW - alpha * iW / batch.num_selected
        gb = gb - alpha * ib / batch.num_selected

    vloss, gpsi = value_loss_and_grad(psi, batch.X, batch.returns)
    total = ppo + alpha * imit + VALUE_COEF * vloss
    grad_theta = np.concatenate([gW.ravel(), gb])
    return total, grad_theta, VALUE_COEF * gpsi, LossReport(ppo, imit, vloss, mean_ratio, clip_frac)


@dataclass
class OptimizerState:
    theta: AdamState | None = None
    psi: AdamState | None = None


def combined_update(theta: PolicyParams, psi: ValueParams, batch: UpdateBatch,
                    config: PPOConfig, opt: OptimizerState | None = None):
    """``epochs_per_batch`` AdamW passes over one on-policy batch.

    Returns ``(theta, psi, report, opt)``; the report holds the losses of the
    first pass, i.e. at the parameters that generated the batch.
    """
    if batch.policy_version != theta.version:
        raise StaleBatch(f"batch from policy v{batch.policy_version}, current is v{theta.version}")
    opt = opt or OptimizerState()
    report = None
    for _ in range(config.epochs_per_batch):
        _, g_theta, g_psi, parts = combined_loss_and_grad(theta, psi, batch, config)
        if report is None:
            report = parts
        x, opt.theta = adamw_step(theta.flat(), g_theta, opt.theta, config.learning_rate,
                                  config.weight_decay)
        new = theta.from_flat(x)
        theta = new.with_update(new.weights, new.bias)
        y, opt.psi = adamw_step(psi.flat(), g_psi, opt.psi, config.learning_rate,
                                config.weight_decay)
        psi = replace(psi.from_flat(y), version=psi.version + 1)
    return theta, psi, report, opt
