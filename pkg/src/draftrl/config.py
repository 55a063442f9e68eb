"""Training configuration and its flat ``key = value`` file format.

Config files hold one dotted key per line with a JSON literal value::

    # defaults
    num_agents = 3
    drafts_per_query = 5
    ppo.clip_epsilon = 0.2
    suite = "dev500"

Unknown keys are rejected so a typo never silently falls back to a default.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .rl import PPOConfig


class ConfigInvalid(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    num_agents: int = 3
    drafts_per_query: int = 5
    batch_size: int = 8
    iterations: int = 300
    seed: int = 42
    suite: str = "dev500"
    evaluator_noise: float = 0.1
    peer_eval: bool = True
    use_reward_model: bool = True
    rl_training: bool = True
    selected_only: bool = False
    history_repulsion: float = 1.0
    answer_weight: float = 0.7
    intermediate_weight: float = 0.3
    reward_hidden: int = 16
    reward_lr: float = 0.5
    reward_steps: int = 4
    validation_size: int = 100
    validation_seed: int = 7
    validate_every: int = 25
    patience: int = 3
    threshold: float = 0.8
    workers: int = 1
    backend_endpoint: str = ""  # empty: sample from the built-in policies
    backend_model: str = "default"
    backend_timeout: float = 30.0
    backend_retries: int = 2
    backend_concurrency: int = 4
    ppo: PPOConfig = field(default_factory=PPOConfig)

    def __post_init__(self):
        if self.num_agents < 1 or self.drafts_per_query < 1:
            raise ConfigInvalid("num_agents and drafts_per_query must be >= 1")
        if self.batch_size < 1 or self.iterations < 0:
            raise ConfigInvalid("batch_size must be >= 1 and iterations >= 0")
        if not 0 <= self.evaluator_noise <= 0.5:
            raise ConfigInvalid("evaluator_noise must be in [0, 0.5]")
        if self.validate_every < 1 or self.workers < 1 or self.patience < 0:
            raise ConfigInvalid("validate_every and workers must be >= 1, patience >= 0")


ABLATIONS = {
    "full": {},
    "no_drafts": {"drafts_per_query": 1},
    "no_peer_eval": {"peer_eval": False},
    "no_reward_model": {"use_reward_model": False},
    "no_rl_training": {"rl_training": False},
}


def to_flat(cfg: TrainingConfig) -> dict[str, Any]:
    out: dict[str, Any] = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            for g in fields(v):
                out[f"{f.name}.{g.name}"] = getattr(v, g.name)
        else:
            out[f.name] = v
    return dict(sorted(out.items()))


def _coerce(key: str, value: Any, default: Any) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigInvalid(f"{key}: expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigInvalid(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigInvalid(f"{key}: expected a number, got {value!r}")
        return float(value)
    if not isinstance(value, str):
        raise ConfigInvalid(f"{key}: expected a string, got {value!r}")
    return value


def from_flat(flat: dict[str, Any], base: TrainingConfig | None = None) -> TrainingConfig:
    base = base or TrainingConfig()
    known = to_flat(base)
    top: dict[str, Any] = {}
    nested: dict[str, dict[str, Any]] = {}
    for key, value in flat.items():
        if key not in known:
            raise ConfigInvalid(f"unknown config key {key!r}")
        value = _coerce(key, value, known[key])
        if "." in key:
            section, name = key.split(".", 1)
            nested.setdefault(section, {})[name] = value
        else:
            top[key] = value
    try:
        for section, values in nested.items():
            top[section] = replace(getattr(base, section), **values)
        return replace(base, **top)
    except ValueError as exc:
        raise ConfigInvalid(str(exc)) from None


def parse_config_text(text: str) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ConfigInvalid(f"line {lineno}: expected 'key = value'")
        key = key.strip()
        try:
            flat[key] = json.loads(value.strip())
        except json.JSONDecodeError:
            raise ConfigInvalid(f"line {lineno}: value for {key!r} is not a literal") from None
        if isinstance(flat[key], (list, dict)) or flat[key] is None:
            raise ConfigInvalid(f"line {lineno}: value for {key!r} must be a scalar")
    return flat


def parse_overrides(items: Iterable[str]) -> dict[str, Any]:
    """``key=value`` strings; bare words are taken as strings."""
    flat: dict[str, Any] = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigInvalid(f"override {item!r} is not key=value")
        try:
            flat[key.strip()] = json.loads(value)
        except json.JSONDecodeError:
            flat[key.strip()] = value
    return flat


def load_config(path: str | Path, overrides: Iterable[str] = ()) -> TrainingConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigInvalid(f"cannot read config {path}: {exc.strerror}") from None
    flat = parse_config_text(text)
    flat.update(parse_overrides(overrides))
    return from_flat(flat)


def dump_config(cfg: TrainingConfig) -> str:
    return "".join(f"{k} = {json.dumps(v)}\n" for k, v in to_flat(cfg).items())


def config_hash(cfg: TrainingConfig) -> str:
    return hashlib.sha256(dump_config(cfg).encode()).hexdigest()[:16]


def ablation_config(name: str, base: TrainingConfig | None = None) -> TrainingConfig:
    if name not in ABLATIONS:
        raise ConfigInvalid(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
    return replace(base or TrainingConfig(), **ABLATIONS[name])


# Stream tags for seed derivation.
GENERATION, EVALUATION, BATCH, VALIDATION, REWARD_INIT = 1, 2, 3, 4, 5


def derive_seed(root: int, *keys: int) -> int:
    """Independent 63-bit seed for a (stream, query, agent, draft, ...) key."""
    words = np.random.SeedSequence([root & (2**64 - 1), *[k & (2**64 - 1) for k in keys]])
    hi, lo = words.generate_state(2, dtype=np.uint32)
    return (int(hi) << 31) ^ int(lo)
