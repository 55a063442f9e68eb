"""Run directories: manifest, lock file, checkpoint loading and CSV exports."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .config import TrainingConfig, config_hash, load_config
from .orchestrator import TrainerState, convergence_steps, read_metrics
from .policy import load_policy
from .reward_model import load_reward_model
from .rl import ValueParams

EXPORT_KINDS = ("learning_curve", "reward_components", "ablation_summary")
REWARD_COMPONENT_COLUMNS = ("stage", "task", "peer", "coherence", "diversity", "combined")
LEARNING_CURVE_COLUMNS = ("iteration", "mean_task_reward", "validation_reward")
ABLATION_COLUMNS = ("run", "num_agents", "drafts_per_query", "peer_eval", "use_reward_model",
                    "rl_training", "iterations_run", "final_mean_task_reward",
                    "final_validation_reward", "steps_to_threshold")
NUM_STAGES = 5


class RunLocked(RuntimeError):
    pass


class RunIncomplete(RuntimeError):
    pass


@contextmanager
def run_lock(run_dir: str | Path):
    """Exclusive lock on a run directory for the lifetime of the block."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise RunLocked(f"{run_dir} is in use by another run") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield run_dir
    finally:
        lock.unlink(missing_ok=True)


def _file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def write_manifest(run_dir: Path, cfg: TrainingConfig, started: float, finished: float | None,
                   artifacts: list[str]) -> dict:
    manifest = {
        "config_hash": config_hash(cfg),
        "code_version": __version__,
        "seeds": {"seed": cfg.seed, "validation_seed": cfg.validation_seed},
        "suite": cfg.suite,
        "suite_digest": _file_digest(cfg.suite) if os.path.exists(cfg.suite) else cfg.suite,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(started)),
        "finished": (time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(finished))
                     if finished is not None else None),
        "artifacts": sorted(artifacts),
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_run_config(run_dir: str | Path) -> TrainingConfig:
    return load_config(Path(run_dir) / "config.cfg")


def load_checkpoint(config: TrainingConfig, ckpt_dir: str | Path) -> TrainerState:
    """Trainer state with agents and reward model restored from ``ckpt_dir``."""
    ckpt_dir = Path(ckpt_dir)
    state = TrainerState.initial(config)
    for a in state.agents:
        path = ckpt_dir / f"agent_{a.theta.agent_id}.ckpt"
        a.theta = load_policy(path)
        critic = json.loads(path.read_text()).get("critic")
        if critic is not None:
            a.psi = ValueParams(np.array(critic["weights"], dtype=float), float(critic["bias"]),
                                a.theta.agent_id)
    state.phi = load_reward_model(ckpt_dir / "reward_model.ckpt")
    return state


def latest_checkpoint(run_dir: str | Path) -> Path | None:
    dirs = [p for p in Path(run_dir).iterdir() if p.is_dir() and p.name.isdigit()]
    return max(dirs, key=lambda p: int(p.name)) if dirs else None


def _float(v: str) -> float | None:
    return float(v) if v not in ("", None) else None


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(round(v, 6))
    return str(v)


def _csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _require_metrics(run_dir: Path) -> list[dict]:
    if not (run_dir / "metrics.csv").exists():
        raise RunIncomplete(f"{run_dir} has no metrics.csv")
    return read_metrics(run_dir)


def export_learning_curve(run_dir: str | Path) -> str:
    rows = _require_metrics(Path(run_dir))
    return _csv(LEARNING_CURVE_COLUMNS,
                [(int(r["iteration"]), float(r["mean_task_reward"]), _float(r["validation_reward"]))
                 for r in rows])


def export_reward_components(run_dir: str | Path, num_stages: int = NUM_STAGES) -> str:
    """Per-stage means of the reward components; stages split the run into equal spans."""
    rows = _require_metrics(Path(run_dir))
    out = []
    if rows:
        chunks = np.array_split(np.arange(len(rows)), min(num_stages, len(rows)))
        for idx in chunks:
            first, last = int(rows[idx[0]]["iteration"]), int(rows[idx[-1]]["iteration"])
            means = [float(np.mean([float(rows[i][c]) for i in idx])) for c in
                     REWARD_COMPONENT_COLUMNS[1:]]
            out.append([f"{first}-{last + 1}", *means])
    return _csv(REWARD_COMPONENT_COLUMNS, out)


def final_reward(rows: list[dict], window: int) -> float | None:
    """Mean training ``mean_task_reward`` over the last ``window`` iterations."""
    if not rows:
        return None
    return float(np.mean([float(r["mean_task_reward"]) for r in rows[-window:]]))


def _summary_row(run_dir: Path) -> list:
    rows = _require_metrics(run_dir)
    cfg = load_run_config(run_dir)
    curve = [(int(r["iteration"]) + 1, float(r["validation_reward"]))
             for r in rows if r["validation_reward"] != ""]
    report = convergence_steps(curve, cfg.threshold)
    return [run_dir.name, cfg.num_agents, cfg.drafts_per_query, cfg.peer_eval,
            cfg.use_reward_model, cfg.rl_training, len(rows),
            final_reward(rows, cfg.validate_every), curve[-1][1] if curve else None,
            report.steps_to_threshold]


def export_ablation_summary(run_dir: str | Path) -> str:
    """One row per run: ``run_dir`` itself or each run directory directly inside it."""
    run_dir = Path(run_dir)
    if (run_dir / "metrics.csv").exists():
        runs = [run_dir]
    else:
        runs = sorted(p for p in run_dir.iterdir() if (p / "config.cfg").exists())
        if not runs:
            raise RunIncomplete(f"no runs found under {run_dir}")
    return _csv(ABLATION_COLUMNS, [_summary_row(r) for r in runs])


def export(run_dir: str | Path, kind: str) -> str:
    if kind == "learning_curve":
        return export_learning_curve(run_dir)
    if kind == "reward_components":
        return export_reward_components(run_dir)
    if kind == "ablation_summary":
        return export_ablation_summary(run_dir)
    raise ValueError(f"unknown export kind {kind!r}; choose from {', '.join(EXPORT_KINDS)}")
