import pytest
from hypothesis import given, settings, strategies as st

from draftrl.config import (ABLATIONS, ConfigInvalid, TrainingConfig, ablation_config,
                            config_hash, derive_seed, dump_config, from_flat, load_config,
                            parse_config_text, parse_overrides, to_flat)


def test_defaults_follow_reference_setup():
    cfg = TrainingConfig()
    assert (cfg.num_agents, cfg.drafts_per_query) == (3, 5)
    p = cfg.ppo
    assert (p.clip_epsilon, p.gamma, p.gae_lambda, p.imitation_weight) == (0.2, 0.99, 0.95, 0.5)
    assert cfg.validate_every == 25 and cfg.patience == 3 and cfg.validation_size == 100


def test_round_trip(tmp_path):
    cfg = TrainingConfig(num_agents=2, seed=9, suite="tasks.jsonl")
    path = tmp_path / "run.cfg"
    path.write_text(dump_config(cfg))
    back = load_config(path)
    assert back == cfg
    assert dump_config(back) == dump_config(cfg)
    assert config_hash(back) == config_hash(cfg)


@settings(max_examples=40)
@given(st.integers(1, 6), st.integers(1, 7), st.floats(0.0, 0.5), st.booleans(),
       st.floats(1e-5, 0.1))
def test_round_trip_property(n, k, noise, peer, lr):
    cfg = from_flat({"num_agents": n, "drafts_per_query": k, "evaluator_noise": noise,
                     "peer_eval": peer, "ppo.learning_rate": lr})
    assert from_flat(parse_config_text(dump_config(cfg))) == cfg


def test_unknown_key_rejected():
    with pytest.raises(ConfigInvalid, match="unknown config key"):
        from_flat({"num_agent": 3})
    with pytest.raises(ConfigInvalid):
        from_flat({"ppo.clip": 0.1})


def test_type_and_range_errors():
    with pytest.raises(ConfigInvalid):
        from_flat({"num_agents": "three"})
    with pytest.raises(ConfigInvalid):
        from_flat({"peer_eval": 1})
    with pytest.raises(ConfigInvalid):
        from_flat({"num_agents": 0})
    with pytest.raises(ConfigInvalid):
        from_flat({"ppo.clip_epsilon": -0.1})
    with pytest.raises(ConfigInvalid):
        from_flat({"evaluator_noise": 0.7})
    assert from_flat({"reward_lr": 1}).reward_lr == 1.0


def test_text_format():
    flat = parse_config_text('# comment\nnum_agents = 2\n\nsuite = "x.jsonl"\npeer_eval = false\n')
    assert flat == {"num_agents": 2, "suite": "x.jsonl", "peer_eval": False}
    for bad in ["num_agents 3", "suite = x.jsonl", "seed = [1]"]:
        with pytest.raises(ConfigInvalid):
            parse_config_text(bad)


def test_overrides():
    assert parse_overrides(["drafts_per_query=1", "suite=my.jsonl", "ppo.gamma=0.9"]) == \
        {"drafts_per_query": 1, "suite": "my.jsonl", "ppo.gamma": 0.9}
    with pytest.raises(ConfigInvalid):
        parse_overrides(["novalue"])


def test_override_wins(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("drafts_per_query = 5\n")
    assert load_config(path, ["drafts_per_query=1"]).drafts_per_query == 1


def test_missing_file():
    with pytest.raises(ConfigInvalid, match="cannot read"):
        load_config("/nonexistent/dev.cfg")


def test_ablations():
    assert ablation_config("no_drafts").drafts_per_query == 1
    assert ablation_config("no_peer_eval").peer_eval is False
    assert ablation_config("full") == TrainingConfig()
    assert set(ABLATIONS) >= {"full", "no_drafts", "no_peer_eval"}
    with pytest.raises(ConfigInvalid):
        ablation_config("nope")


def test_hash_is_canonical():
    a = from_flat({"seed": 1, "num_agents": 2})
    b = from_flat({"num_agents": 2, "seed": 1})
    assert config_hash(a) == config_hash(b) != config_hash(TrainingConfig())
    assert list(to_flat(a)) == sorted(to_flat(a))


def test_derive_seed():
    assert derive_seed(42, 1, 2, 3) == derive_seed(42, 1, 2, 3)
    seen = {derive_seed(42, 1, q, a, k) for q in range(10) for a in range(3) for k in range(5)}
    assert len(seen) == 150
    assert derive_seed(42, 1, 2) != derive_seed(43, 1, 2)
    assert 0 <= derive_seed(-1, 2**70) < 2**63
