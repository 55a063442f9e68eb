import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from draftrl.cod import Draft, GenerationMeta
from draftrl.env import ChainSpec, make_query
from draftrl.gradcheck import central_difference, max_relative_error
from draftrl.reward_model import (DimensionMismatch, EmptyBatch, EmptyList, NonFiniteLoss,
                                  RewardPrediction, featurize, init_reward_model,
                                  load_reward_model, mse_loss_and_grad, predict, predict_values,
                                  reward_feature_dim, save_reward_model, select,
                                  update_reward_model)

K = 5
DIM = reward_feature_dim(K)
Q = make_query(1, ChainSpec(3, (("add", 4), ("mul", 2))))


def draft(values, k=0, temp=0.2):
    return Draft.from_texts([f"apply op 1 get {v}" for v in values], str(values[-1]),
                            agent_id=0, draft_index=k, meta=GenerationMeta(temp, k, k, 0))


def test_featurize_perfect_draft_peer_block():
    d = draft([7, 14])
    f = featurize(d, Q, np.ones(6), [d], K)
    assert f.shape == (DIM,)
    np.testing.assert_array_equal(f[:6], 1.0)
    assert f[7] == 0.0  # single-draft diversity rank
    np.testing.assert_array_equal(f, featurize(d, Q, np.ones(6), [d], K))


def test_featurize_diversity_rank():
    ds = [draft([7, 14], 0), draft([7, 14], 1), draft([3, 99], 2)]
    ranks = [featurize(d, Q, np.full(6, 0.5), ds, K)[7] for d in ds]
    assert ranks[2] == 1.0  # the outlier is the most distant
    assert sorted(ranks) == [0.0, 0.5, 1.0]


def test_featurize_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        featurize(draft([7, 14]), Q, np.ones(5), [], K)


def test_zero_model_predicts_half():
    phi = init_reward_model(DIM, zero=True)
    rng = np.random.default_rng(0)
    for _ in range(10):
        assert predict(phi, rng.normal(size=DIM) * 10).value == 0.5
    assert predict_values(init_reward_model(DIM, seed=3), rng.normal(size=(4, DIM))) == \
        pytest.approx(0.5)


@settings(max_examples=50)
@given(st.integers(0, 2**31))
def test_prediction_strictly_inside_unit_interval(seed):
    rng = np.random.default_rng(seed)
    phi = init_reward_model(DIM, seed=seed)
    phi = phi.from_flat(rng.normal(size=phi.flat().size))
    v = predict_values(phi, rng.normal(size=(8, DIM)))
    assert np.all((v > 0) & (v < 1))


def test_predict_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        predict(init_reward_model(DIM), np.zeros(DIM + 1))


def refs(n):
    return [(0, i // 5, i % 5) for i in range(n)]


def test_select_argmax():
    preds = [RewardPrediction(v, r) for v, r in zip([0.3, 0.7, 0.5], refs(3))]
    assert select(preds) == refs(3)[1]


def test_select_tie_break():
    preds = [RewardPrediction(0.5, (0, 1, 0)), RewardPrediction(0.5, (0, 0, 2))]
    assert select(preds) == (0, 0, 2)
    with pytest.raises(EmptyList):
        select([])


@settings(max_examples=100)
@given(st.lists(st.integers(1, 999), min_size=1, max_size=15), st.integers(0, 2**31))
def test_select_invariant_under_monotone_transform(ticks, seed):
    # a 1e-3 grid keeps every transform strictly increasing in floating point too
    values = [t / 1000 for t in ticks]
    rng = np.random.default_rng(seed)
    a, b = rng.uniform(0.1, 5), rng.uniform(-3, 3)
    transforms = [lambda v: a * v + b, np.exp, lambda v: v**3, lambda v: np.log(v / (1 - v))]
    f = transforms[seed % len(transforms)]
    r = refs(len(values))
    base = select([RewardPrediction(v, x) for v, x in zip(values, r)])
    assert select([RewardPrediction(float(f(v)), x) for v, x in zip(values, r)]) == base


def test_loss_zero_for_half_targets():
    phi = init_reward_model(DIM, zero=True)
    loss, _ = mse_loss_and_grad(phi, np.random.default_rng(0).normal(size=(6, DIM)), [0.5] * 6)
    assert abs(loss) <= 1e-12


def test_overfit_single_pair():
    rng = np.random.default_rng(1)
    x = rng.uniform(0, 1, DIM)
    phi = init_reward_model(DIM, seed=1)
    for _ in range(500):
        phi, _ = update_reward_model(phi, x[None], np.array([0.9]), learning_rate=0.5)
    assert abs(predict(phi, x).value - 0.9) < 0.05
    assert phi.version == 500


@pytest.mark.parametrize("seed", range(10))
def test_mse_gradient_finite_differences(seed):
    rng = np.random.default_rng(seed)
    phi = init_reward_model(DIM, seed=seed)
    phi = phi.from_flat(rng.normal(0, 0.5, phi.flat().size))
    X = rng.uniform(0, 1, (6, DIM))
    t = rng.uniform(0, 1, 6)
    _, g = mse_loss_and_grad(phi, X, t)
    num = central_difference(lambda p: mse_loss_and_grad(phi.from_flat(p), X, t)[0], phi.flat())
    assert max_relative_error(g, num) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_small_step_never_increases_loss(seed):
    rng = np.random.default_rng(seed)
    phi = init_reward_model(DIM, seed=seed)
    phi = phi.from_flat(rng.normal(0, 0.5, phi.flat().size))
    X = rng.uniform(0, 1, (10, DIM))
    t = rng.uniform(0, 1, 10)
    new, before = update_reward_model(phi, X, t, 1e-3)
    after, _ = mse_loss_and_grad(new, X, t)
    assert after <= before


def test_update_errors():
    phi = init_reward_model(DIM)
    with pytest.raises(EmptyBatch):
        update_reward_model(phi, np.zeros((0, DIM)), np.zeros(0), 0.1)
    with pytest.raises(NonFiniteLoss):
        update_reward_model(phi, np.full((1, DIM), np.nan), np.array([0.5]), 0.1)


def test_version_consistent_predictions():
    phi = init_reward_model(DIM, seed=4)
    x = np.linspace(0, 1, DIM)
    assert predict(phi, x) == predict(phi, x)


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    phi = init_reward_model(DIM, seed=2)
    phi = phi.from_flat(rng.normal(size=phi.flat().size))
    save_reward_model(phi, tmp_path / "reward_model.ckpt")
    back = load_reward_model(tmp_path / "reward_model.ckpt")
    assert back.flat().tobytes() == phi.flat().tobytes()
    assert back.version == phi.version
