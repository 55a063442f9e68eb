import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from draftrl.cod import Draft
from draftrl.env import ChainSpec, generate_task, make_query
from draftrl.peer import (CRITERIA, EmptyList, EvaluatorProfile, MixedDrafts, PeerEvaluation,
                          SelfEvaluation, aggregate, criterion_scores, evaluate)
from draftrl.policy import init_policy, make_hints, sample_draft

Q = make_query(7, ChainSpec(3, (("add", 4), ("mul", 2), ("sub", 1))))  # 7, 14, 13
ORACLE = EvaluatorProfile(agent_id=1, noise_sigma=0.0, seed=0)


def mk(steps, answer, agent=0, k=0):
    return Draft.from_texts(steps, answer, agent_id=agent, draft_index=k)


PERFECT = mk(["apply add 4 get 7", "apply mul 2 get 14", "apply sub 1 get 13"], "13")


def test_perfect_draft_noise_free():
    e = evaluate(ORACLE, PERFECT, Q)
    assert e.criteria == (1.0,) * 5
    assert e.scalar == 1.0
    assert e.draft_ref == (7, 0, 0)


def test_step_validity_two_of_three():
    d = mk(["apply add 4 get 7", "apply the mul 2 and get 14", "apply sub 1 get 13"], "13")
    e = evaluate(ORACLE, d, Q)
    assert e.criteria[CRITERIA.index("step_validity")] == pytest.approx(2 / 3)


def test_coherence_relevance_completeness():
    # second step claims 15 (should be 14); third chains from 15 correctly: 15 - 1 = 14
    d = mk(["apply add 4 get 7", "apply mul 2 get 15", "apply sub 1 get 14"], "14")
    c = criterion_scores(d, Q)
    assert c[0] == pytest.approx(2 / 3)
    assert c[2] == 1.0 and c[3] == 1.0 and c[4] == 0.0

    short = mk(["apply add 4 get 7"], "7")
    c = criterion_scores(short, Q)
    assert c[3] == pytest.approx(1 / 3)

    wrong_op = mk(["apply sub 4 get -1", "apply mul 2 get -2", "apply sub 1 get -3"], "-3")
    c = criterion_scores(wrong_op, Q)
    assert c[2] == pytest.approx(2 / 3)
    assert c[0] == 1.0


def test_self_evaluation_rejected():
    with pytest.raises(SelfEvaluation):
        evaluate(EvaluatorProfile(0), PERFECT, Q)


def test_deterministic_and_order_independent():
    prof = EvaluatorProfile(2, 0.3, seed=99)
    drafts = [mk(["apply add 4 get 8"], "8", agent=0, k=k) for k in range(4)]
    forward = [evaluate(prof, d, Q) for d in drafts]
    backward = [evaluate(prof, d, Q) for d in reversed(drafts)][::-1]
    assert forward == backward
    assert evaluate(prof, drafts[0], Q) == forward[0]


def test_feedback_names_weakest():
    d = mk(["apply add 4 get 7", "apply mul 2 get 14", "apply sub 1 get 13"], "99")
    assert "answer_correctness" in evaluate(ORACLE, d, Q).feedback


def test_aggregate_examples():
    a = PeerEvaluation(1, (0, 0, 0), (0.4,) * 5, 0.4, "")
    b = PeerEvaluation(2, (0, 0, 0), (0.8,) * 5, 0.8, "")
    agg = aggregate([a, b])
    assert agg[-1] == pytest.approx(0.6)
    assert agg.shape == (6,)
    np.testing.assert_allclose(aggregate([a]), [0.4] * 6)
    with pytest.raises(EmptyList):
        aggregate([])
    with pytest.raises(MixedDrafts):
        aggregate([a, PeerEvaluation(1, (0, 1, 0), (0.4,) * 5, 0.4, "")])


def test_three_agents_give_two_evaluations_per_draft():
    N = 3
    profiles = [EvaluatorProfile(j, 0.1, seed=j) for j in range(N)]
    d = mk(["apply add 4 get 7"], "7", agent=1)
    evals = [evaluate(p, d, Q) for p in profiles if p.agent_id != d.agent_id]
    assert len(evals) == 2


def test_noise_sigma_bound():
    with pytest.raises(ValueError):
        EvaluatorProfile(0, 0.6)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.floats(0.0, 0.5), st.integers(1, 8))
def test_scores_in_unit_interval(seed, sigma, depth):
    q = generate_task(seed, depth)
    d, _ = sample_draft(init_policy(0, 2), q, [], make_hints(2)[0], 0.8, seed)
    e = evaluate(EvaluatorProfile(1, sigma, seed), d, q)
    assert all(0.0 <= c <= 1.0 for c in e.criteria)
    assert 0.0 <= e.scalar <= 1.0
    assert e.scalar == pytest.approx(np.mean(e.criteria))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 6))
def test_noise_free_answer_correctness_is_exact(seed, depth):
    q = generate_task(seed, depth)
    d, _ = sample_draft(init_policy(0, 2), q, [], make_hints(2)[0], 1.0, seed)
    e = evaluate(EvaluatorProfile(1, 0.0), d, q)
    assert e.criteria[4] == float(int(d.answer) == q.truth)
