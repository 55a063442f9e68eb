"""Peer evaluation of drafts on five criteria.

Each evaluator agent scores drafts written by other agents. Scores are
computed from the draft and the evaluator's own recomputation of the task,
then perturbed by clipped Gaussian noise whose stream depends only on the
evaluator seed and the draft reference, so evaluation order never matters.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cod import Draft, validate_step
from .env import Query, apply_op, parse_answer, parse_prompt, step_value, UnparseableAnswer

CRITERIA = ("coherence", "step_validity", "relevance", "completeness", "answer_correctness")
NOISE_CLIP = 2.0  # noise truncated at +-NOISE_CLIP sigma
MAX_NOISE_SIGMA = 0.5

_OP_RE = re.compile(r"\b(add|sub|mul)\s+([-+]?\d+)\b")


class SelfEvaluation(ValueError):
    pass


class MixedDrafts(ValueError):
    pass


class EmptyList(ValueError):
    pass


@dataclass(frozen=True)
class EvaluatorProfile:
    agent_id: int
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.noise_sigma <= MAX_NOISE_SIGMA:
            raise ValueError(f"noise_sigma must be in [0, {MAX_NOISE_SIGMA}]")


@dataclass(frozen=True)
class PeerEvaluation:
    evaluator_id: int
    draft_ref: tuple[int, int, int]  # (query id, agent id, draft index)
    criteria: tuple[float, ...]
    scalar: float
    feedback: str

    def to_record(self) -> dict:
        qid, agent, k = self.draft_ref
        return {
            "evaluator_id": self.evaluator_id,
            "query_id": qid,
            "agent_id": agent,
            "draft_index": k,
            "criteria": list(self.criteria),
            "scalar": self.scalar,
            "feedback": self.feedback,
        }


def _step_op(text: str) -> tuple[str, int] | None:
    m = _OP_RE.search(text)
    return (m.group(1), int(m.group(2))) if m else None


def criterion_scores(draft: Draft, query: Query) -> np.ndarray:
    """Noise-free criterion vector in ``CRITERIA`` order.

    The evaluator works from the prompt text alone, as a peer agent would.
    """
    spec = parse_prompt(query.prompt)
    m = len(draft.steps)
    if m == 0:
        return np.zeros(len(CRITERIA))

    chained = 0
    relevant = 0
    prev = spec.start
    for t, step in enumerate(draft.steps):
        op = _step_op(step.text)
        value = step_value(step.text)
        if op is not None and value is not None and prev is not None:
            chained += apply_op(op[0], prev, op[1]) == value
        if op is not None and t < spec.depth and op == spec.ops[t]:
            relevant += 1
        prev = value

    truth = spec.start
    for op, n in spec.ops:
        truth = apply_op(op, truth, n)
    try:
        correct = parse_answer(draft.answer) == truth
    except UnparseableAnswer:
        correct = False

    return np.array([
        chained / m,
        sum(validate_step(s) for s in draft.steps) / m,
        relevant / m,
        min(1.0, m / spec.depth),
        float(correct),
    ])


def _noise(profile: EvaluatorProfile, draft_ref: tuple[int, int, int]) -> np.ndarray:
    if profile.noise_sigma == 0:
        return np.zeros(len(CRITERIA))
    key = [profile.seed & (2**64 - 1), profile.agent_id] + [x & (2**64 - 1) for x in draft_ref]
    z = np.random.default_rng(key).standard_normal(len(CRITERIA))
    return profile.noise_sigma * np.clip(z, -NOISE_CLIP, NOISE_CLIP)


def feedback_text(criteria: Sequence[float]) -> str:
    worst = int(np.argmin(criteria))
    return f"weakest criterion: {CRITERIA[worst]} ({criteria[worst]:.2f})"


def evaluate(profile: EvaluatorProfile, draft: Draft, query: Query) -> PeerEvaluation:
    if profile.agent_id == draft.agent_id:
        raise SelfEvaluation(f"agent {profile.agent_id} cannot evaluate its own draft")
    ref = (query.id, draft.agent_id, draft.draft_index)
    scores = np.clip(criterion_scores(draft, query) + _noise(profile, ref), 0.0, 1.0)
    crit = tuple(float(c) for c in scores)
    return PeerEvaluation(profile.agent_id, ref, crit, float(np.mean(scores)), feedback_text(crit))


def constant_evaluation(evaluator_id: int, draft: Draft, query_id: int,
                        value: float = 0.5) -> PeerEvaluation:
    """Uninformative stand-in used when peer evaluation is ablated."""
    crit = (value,) * len(CRITERIA)
    return PeerEvaluation(evaluator_id, (query_id, draft.agent_id, draft.draft_index),
                          crit, value, "peer evaluation disabled")


def aggregate(evals: Sequence[PeerEvaluation]) -> np.ndarray:
    """Per-criterion means followed by the mean scalar rating (length 6)."""
    if not evals:
        raise EmptyList("no evaluations to aggregate")
    refs = {e.draft_ref for e in evals}
    if len(refs) > 1:
        raise MixedDrafts(f"evaluations reference {len(refs)} different drafts")
    crit = np.mean([e.criteria for e in evals], axis=0)
    return np.append(crit, np.mean([e.scalar for e in evals]))
