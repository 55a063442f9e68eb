"""The multi-agent draft training loop.

One iteration runs, in order: draft generation for every (agent, query),
peer evaluation of every draft by every other agent, reward prediction and
per-agent selection, execution of the selected drafts, PPO + imitation
updates of each agent, and a reward-model update on the executed drafts.

All randomness is derived from ``config.seed`` keyed by
(stream, query, agent, draft), and every reduction walks items in sorted
(query id, agent id, draft index) order, so a run is reproducible byte for
byte whatever the worker count.
"""

from __future__ import annotations

import csv
import itertools
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.stats import spearmanr

from . import peer, policy, reward_model as rm, rl
from .cod import Draft, diversity, validate_draft
from .config import (BATCH, EVALUATION, GENERATION, REWARD_INIT, VALIDATION, TrainingConfig,
                     ConfigInvalid, derive_seed, dump_config)
from .env import Query, generate_suite, load_dev500, read_suite, task_reward

PHASES = ("generation", "evaluation", "selection", "execution", "policy_update",
          "reward_update")
METRIC_COLUMNS = ("iteration", "mean_task_reward", "task", "peer", "coherence", "diversity",
                  "combined", "agreement", "specialization", "validation_reward")
UPDATE_COLUMNS = ("iteration", "agent_id", "ppo_loss", "imitation_loss", "value_loss",
                  "mean_ratio", "clip_fraction")


class SuiteNotFound(FileNotFoundError):
    pass


class IterationError(RuntimeError):
    """Module failure with the (query, agent, draft) it happened on."""


def load_suite(name: str) -> list[Query]:
    if name == "dev500":
        return load_dev500()
    if not os.path.exists(name):
        raise SuiteNotFound(f"task suite {name!r} not found")
    return read_suite(name)


@dataclass
class IterationMetrics:
    iteration: int
    mean_task_reward: float
    task: float
    peer: float
    coherence: float
    diversity: float
    combined: float
    agreement: float
    specialization: float
    validation_reward: float | None = None
    phase_seconds: dict = field(default_factory=dict, compare=False, repr=False)

    def row(self) -> list:
        return [getattr(self, c) if getattr(self, c) is not None else "" for c in METRIC_COLUMNS]


@dataclass
class ConvergenceReport:
    steps_to_threshold: int | None
    threshold: float
    final_mean_reward: float | None


def agreement(answers_by_query: Sequence[Sequence[str]]) -> float:
    """Mean fraction of agent pairs whose selected answers match."""
    if not answers_by_query:
        return 1.0
    per_query = []
    for answers in answers_by_query:
        pairs = list(itertools.combinations(answers, 2))
        per_query.append(1.0 if not pairs else sum(a == b for a, b in pairs) / len(pairs))
    return float(np.mean(per_query))


def specialization(histograms: Sequence[Sequence[float]]) -> float:
    """Mean pairwise total-variation distance between agents' strategy histograms."""
    if len(histograms) < 2:
        return 0.0
    dists = []
    for h in histograms:
        h = np.asarray(h, dtype=float)
        dists.append(h / h.sum() if h.sum() > 0 else np.full(len(h), 1.0 / len(h)))
    tv = [0.5 * np.abs(a - b).sum() for a, b in itertools.combinations(dists, 2)]
    return float(np.mean(tv))


def convergence_steps(history: Sequence[tuple[int, float]], threshold: float) -> ConvergenceReport:
    """First step whose validation reward reaches ``threshold``.

    ``history`` is a sequence of (step, validation reward) pairs in step order.
    """
    hit = next((step for step, r in history if r >= threshold), None)
    final = history[-1][1] if history else None
    return ConvergenceReport(hit, threshold, final)


@dataclass
class AgentState:
    theta: policy.PolicyParams
    psi: rl.ValueParams
    opt: rl.OptimizerState = field(default_factory=rl.OptimizerState)


@dataclass
class TrainerState:
    config: TrainingConfig
    agents: list[AgentState]
    phi: rm.RewardModelParams
    iteration: int = 0
    # external draft source, e.g. backend.make_sampler(...); disables policy updates
    sampler: Callable | None = None

    @classmethod
    def initial(cls, config: TrainingConfig) -> "TrainerState":
        K = config.drafts_per_query
        agents = []
        for i in range(config.num_agents):
            theta = policy.init_policy(i, K, config.history_repulsion)
            agents.append(AgentState(theta, rl.init_value(i, theta.weights.shape[0])))
        phi = rm.init_reward_model(rm.reward_feature_dim(K), config.reward_hidden,
                                   derive_seed(config.seed, REWARD_INIT))
        return cls(config, agents, phi)


class RunLog:
    """Collects event records, metric rows and update rows; optionally mirrors to files."""

    def __init__(self, run_dir: str | Path | None = None):
        self.seq = 0
        self.events: list[dict] = []
        self.metrics: list[IterationMetrics] = []
        self.updates: list[list] = []
        self.timings: list[dict] = []
        self.run_dir = Path(run_dir) if run_dir is not None else None
        self._files = {}
        if self.run_dir is not None:
            self.run_dir.mkdir(parents=True, exist_ok=True)
            self._files["events"] = open(self.run_dir / "events.jsonl", "w", encoding="utf-8")
            self._files["metrics"] = open(self.run_dir / "metrics.csv", "w", newline="")
            self._files["updates"] = open(self.run_dir / "updates.csv", "w", newline="")
            self._files["timing"] = open(self.run_dir / "timing.jsonl", "w", encoding="utf-8")
            csv.writer(self._files["metrics"]).writerow(METRIC_COLUMNS)
            csv.writer(self._files["updates"]).writerow(UPDATE_COLUMNS)

    def event(self, kind: str, iteration: int, phase: str, **payload) -> None:
        self.seq += 1
        rec = {"seq": self.seq, "iteration": iteration, "phase": phase, "type": kind, **payload}
        self.events.append(rec)
        if "events" in self._files:
            self._files["events"].write(json.dumps(rec, sort_keys=True) + "\n")

    def metric(self, m: IterationMetrics) -> None:
        self.metrics.append(m)
        if "metrics" in self._files:
            csv.writer(self._files["metrics"]).writerow(m.row())
        self.timings.append({"iteration": m.iteration, **m.phase_seconds})
        if "timing" in self._files:
            self._files["timing"].write(json.dumps(self.timings[-1]) + "\n")

    def update(self, row: list) -> None:
        self.updates.append(row)
        if "updates" in self._files:
            csv.writer(self._files["updates"]).writerow(row)

    def close(self) -> None:
        for f in self._files.values():
            f.close()
        self._files.clear()


@dataclass
class DraftSet:
    """Everything produced for one batch of queries, keyed by (query id, agent, k)."""

    queries: dict[int, Query]
    drafts: dict[tuple[int, int], list[Draft]]
    trajectories: dict[tuple[int, int], list[policy.TrajectoryRecord]]
    evaluations: dict[tuple[int, int, int], list[peer.PeerEvaluation]] = field(default_factory=dict)
    aggregated: dict[tuple[int, int, int], np.ndarray] = field(default_factory=dict)
    features: dict[tuple[int, int, int], np.ndarray] = field(default_factory=dict)
    predictions: dict[tuple[int, int, int], float] = field(default_factory=dict)

    def refs(self) -> list[tuple[int, int, int]]:
        return [(q, a, k) for (q, a), ds in sorted(self.drafts.items()) for k in range(len(ds))]

    def draft(self, ref) -> Draft:
        return self.drafts[ref[0], ref[1]][ref[2]]


def _pmap(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _guard(fn: Callable, context: str):
    try:
        return fn()
    except Exception as exc:
        raise IterationError(f"{context}: {type(exc).__name__}: {exc}") from exc


def generate(state: TrainerState, queries: Sequence[Query], stream: int, salt: int) -> DraftSet:
    cfg = state.config
    K = cfg.drafts_per_query
    hints = policy.make_hints(K)

    def work(item):
        q, agent = item
        theta = state.agents[agent].theta
        drafts, trajs = [], []
        for k in range(K):
            seed = derive_seed(cfg.seed, stream, salt, q.id, agent, k)
            temp = policy.temperature_schedule(k, K)
            where = f"generation (query {q.id}, agent {agent}, draft {k})"
            if state.sampler is not None:
                d, tr = _guard(lambda: state.sampler(agent, q, list(drafts), hints[k], temp,
                                                     seed, k), where), None
                if not validate_draft(d).valid:
                    raise IterationError(f"{where}: sampler returned an invalid draft")
            else:
                d, tr = _guard(lambda: policy.sample_draft(theta, q, drafts, hints[k], temp,
                                                           seed, k), where)
            drafts.append(d)
            trajs.append(tr)
        return drafts, trajs

    items = [(q, a) for q in sorted(queries, key=lambda q: q.id) for a in range(cfg.num_agents)]
    out = _pmap(work, items, cfg.workers)
    ds = DraftSet({q.id: q for q in queries}, {}, {})
    for (q, a), (drafts, trajs) in zip(items, out):
        ds.drafts[q.id, a] = drafts
        ds.trajectories[q.id, a] = trajs
    return ds


def evaluate_all(state: TrainerState, ds: DraftSet) -> None:
    cfg = state.config
    N = cfg.num_agents
    profiles = [peer.EvaluatorProfile(j, cfg.evaluator_noise, derive_seed(cfg.seed, EVALUATION, j))
                for j in range(N)]

    def work(ref):
        d, q = ds.draft(ref), ds.queries[ref[0]]
        if not cfg.peer_eval:
            return [peer.constant_evaluation(j, d, q.id) for j in range(N) if j != ref[1]]
        return [_guard(lambda: peer.evaluate(profiles[j], d, q),
                       f"evaluation (query {ref[0]}, agent {ref[1]}, draft {ref[2]})")
                for j in range(N) if j != ref[1]]

    refs = ds.refs()
    for ref, evals in zip(refs, _pmap(work, refs, cfg.workers)):
        ds.evaluations[ref] = evals
        # a lone agent has no peers: fall back to an uninformative constant vector
        ds.aggregated[ref] = peer.aggregate(evals) if evals else np.full(rm.NUM_PEER_FEATURES, 0.5)


def predict_all(state: TrainerState, ds: DraftSet) -> None:
    cfg = state.config
    refs = ds.refs()
    for ref in refs:
        siblings = ds.drafts[ref[0], ref[1]]
        ds.features[ref] = rm.featurize(ds.draft(ref), ds.queries[ref[0]], ds.aggregated[ref],
                                        siblings, cfg.drafts_per_query)
    if cfg.use_reward_model:
        values = rm.predict_values(state.phi, np.array([ds.features[r] for r in refs]))
    else:
        values = np.array([ds.aggregated[r][-1] for r in refs])
    ds.predictions = {r: float(v) for r, v in zip(refs, values)}


def select_per_agent(ds: DraftSet, qid: int, agent: int) -> tuple[int, int, int]:
    K = len(ds.drafts[qid, agent])
    return rm.select([rm.RewardPrediction(ds.predictions[qid, agent, k], (qid, agent, k))
                      for k in range(K)])


def select_global(ds: DraftSet, qid: int, num_agents: int) -> tuple[int, int, int]:
    return rm.select([rm.RewardPrediction(ds.predictions[r], r)
                      for r in ds.refs() if r[0] == qid])


def run_iteration(state: TrainerState, queries: Sequence[Query], log: RunLog | None = None,
                  learn: bool = True) -> IterationMetrics:
    cfg = state.config
    log = log if log is not None else RunLog()
    it = state.iteration
    N, K = cfg.num_agents, cfg.drafts_per_query
    timing = {}

    t0 = time.perf_counter()
    ds = generate(state, queries, GENERATION, it)
    for (qid, agent), drafts in sorted(ds.drafts.items()):
        for d in drafts:
            log.event("draft", it, "generation", query_id=qid, **d.to_record())
    timing["generation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    evaluate_all(state, ds)
    for ref in ds.refs():
        for e in ds.evaluations[ref]:
            log.event("evaluation", it, "evaluation", **e.to_record())
    timing["evaluation"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    predict_all(state, ds)
    qids = sorted(ds.queries)
    selected = {}
    for qid in qids:
        for agent in range(N):
            selected[qid, agent] = select_per_agent(ds, qid, agent)
            log.event("selection", it, "selection", scope="agent", query_id=qid, agent_id=agent,
                      draft_index=selected[qid, agent][2],
                      predicted=ds.predictions[selected[qid, agent]])
        g = select_global(ds, qid, N)
        log.event("selection", it, "selection", scope="global", query_id=qid, agent_id=g[1],
                  draft_index=g[2], predicted=ds.predictions[g])
    timing["selection"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    realized = {}
    for qid in qids:
        for agent in range(N):
            ref = selected[qid, agent]
            r = task_reward(ds.draft(ref), ds.queries[qid], cfg.answer_weight,
                            cfg.intermediate_weight)
            realized[ref] = r.value
            log.event("execution", it, "execution", query_id=qid, agent_id=agent,
                      draft_index=ref[2], reward=r.value, answer_correct=r.answer_correct,
                      intermediate_fraction=r.intermediate_fraction)
    timing["execution"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    if learn and cfg.rl_training and state.sampler is None:
        for agent in range(N):
            report = update_agent(state, ds, agent, selected, realized)
            row = [it, agent, report.ppo_loss, report.imitation_loss, report.value_loss,
                   report.mean_ratio, report.clip_fraction]
            log.update(row)
            log.event("update", it, "policy_update", **dict(zip(UPDATE_COLUMNS[1:], row[1:])))
    timing["policy_update"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    executed = sorted(realized)
    if learn and cfg.use_reward_model:
        X = np.array([ds.features[r] for r in executed])
        y = np.array([realized[r] for r in executed])
        for _ in range(cfg.reward_steps):
            state.phi, loss = rm.update_reward_model(state.phi, X, y, cfg.reward_lr)
        log.event("reward_update", it, "reward_update", version=state.phi.version)
    timing["reward_update"] = time.perf_counter() - t0

    hist = np.zeros((N, K))
    for (qid, agent), ref in selected.items():
        hist[agent, ds.draft(ref).meta.strategy_id] += 1
    metrics = IterationMetrics(
        iteration=it,
        mean_task_reward=float(np.mean([realized[r] for r in executed])),
        task=float(np.mean([realized[r] for r in executed])),
        peer=float(np.mean([ds.aggregated[r][-1] for r in executed])),
        coherence=float(np.mean([ds.aggregated[r][0] for r in executed])),
        diversity=float(np.mean([diversity(ds.drafts[key]) for key in sorted(ds.drafts)])),
        combined=float(np.mean([ds.predictions[r] for r in executed])),
        agreement=agreement([[ds.draft(selected[qid, a]).answer for a in range(N)] for qid in qids]),
        specialization=specialization(list(hist)),
        phase_seconds=timing,
    )
    if learn:
        state.iteration += 1
    return metrics


def update_agent(state: TrainerState, ds: DraftSet, agent: int, selected: dict,
                 realized: dict) -> rl.LossReport:
    cfg = state.config
    a = state.agents[agent]
    trajs, imitation = [], []
    for (qid, ag), records in sorted(ds.trajectories.items()):
        if ag != agent:
            continue
        chosen = selected[qid, agent]
        for k, tr in enumerate(records):
            ref = (qid, agent, k)
            if ref == chosen:
                reward = realized[ref]
                imitation.append(tr)
            elif cfg.selected_only:
                continue
            else:
                reward = ds.predictions[ref]
            tr.rewards = np.zeros(len(tr))
            tr.rewards[-1] = reward
            tr.values = a.psi(tr.features)
            trajs.append(tr)
    batch = rl.build_batch(trajs, imitation, a.psi, cfg.ppo)
    a.theta, a.psi, report, a.opt = rl.combined_update(a.theta, a.psi, batch, cfg.ppo, a.opt)
    return report


def validation_suite(cfg: TrainingConfig) -> list[Query]:
    return generate_suite(cfg.validation_size, depth=3, seed=cfg.validation_seed)


def validate(state: TrainerState, queries: Sequence[Query]) -> float:
    """Mean realized reward of the globally selected draft per query; no learning."""
    cfg = state.config
    ds = generate(state, queries, VALIDATION, 0)
    evaluate_all(state, ds)
    predict_all(state, ds)
    rewards = []
    for qid in sorted(ds.queries):
        g = select_global(ds, qid, cfg.num_agents)
        rewards.append(task_reward(ds.draft(g), ds.queries[qid], cfg.answer_weight,
                                   cfg.intermediate_weight).value)
    return float(np.mean(rewards))


def reward_fidelity(state: TrainerState, queries: Sequence[Query]) -> float:
    """Spearman correlation between predicted and realized reward over all drafts."""
    cfg = state.config
    ds = generate(state, queries, VALIDATION, 1)
    evaluate_all(state, ds)
    predict_all(state, ds)
    refs = ds.refs()
    pred = [ds.predictions[r] for r in refs]
    real = [task_reward(ds.draft(r), ds.queries[r[0]], cfg.answer_weight,
                        cfg.intermediate_weight).value for r in refs]
    return float(spearmanr(pred, real).statistic)


@dataclass
class TrainResult:
    checkpoints: list[Path]
    history: list[IterationMetrics]
    report: ConvergenceReport
    state: TrainerState
    log: RunLog

    @property
    def validation_curve(self) -> list[tuple[int, float]]:
        return [(m.iteration + 1, m.validation_reward) for m in self.history
                if m.validation_reward is not None]


def save_checkpoint(state: TrainerState, directory: Path) -> list[Path]:
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for a in state.agents:
        p = directory / f"agent_{a.theta.agent_id}.ckpt"
        policy.save_policy(a.theta, p, critic=a.psi)
        paths.append(p)
    p = directory / "reward_model.ckpt"
    rm.save_reward_model(state.phi, p)
    paths.append(p)
    return paths


def train(config: TrainingConfig, run_dir: str | Path | None = None,
          suite: Sequence[Query] | None = None) -> TrainResult:
    """Run the training loop until the iteration budget or an early stop."""
    if not isinstance(config, TrainingConfig):
        raise ConfigInvalid("train expects a TrainingConfig")
    queries = list(suite) if suite is not None else load_suite(config.suite)
    if len(queries) < config.batch_size:
        raise ConfigInvalid(f"suite has {len(queries)} tasks, batch_size is {config.batch_size}")
    val_queries = validation_suite(config)
    state = TrainerState.initial(config)
    if config.backend_endpoint:
        from .backend import BackendConfig, make_sampler
        state.sampler = make_sampler(BackendConfig(
            config.backend_endpoint, config.backend_model, config.backend_timeout,
            config.backend_retries, max_concurrency=config.backend_concurrency))
    log = RunLog(run_dir)
    if run_dir is not None:
        Path(run_dir, "config.cfg").write_text(dump_config(config))
    checkpoints: list[Path] = []
    best, stale = -np.inf, 0
    try:
        for it in range(config.iterations):
            rng = np.random.default_rng(derive_seed(config.seed, BATCH, it))
            idx = np.sort(rng.choice(len(queries), size=config.batch_size, replace=False))
            metrics = run_iteration(state, [queries[i] for i in idx], log)
            stop = False
            if (it + 1) % config.validate_every == 0:
                metrics.validation_reward = validate(state, val_queries)
                log.event("validation", it, "validation", reward=metrics.validation_reward)
                if run_dir is not None:
                    checkpoints += save_checkpoint(state, Path(run_dir) / str(it + 1))
                if metrics.validation_reward > best + 1e-12:
                    best, stale = metrics.validation_reward, 0
                else:
                    stale += 1
                    stop = config.patience > 0 and stale >= config.patience
            log.metric(metrics)
            if stop:
                log.event("early_stop", it, "validation", patience=config.patience)
                break
    finally:
        log.close()
    result = TrainResult(checkpoints, log.metrics, None, state, log)
    result.report = convergence_steps(result.validation_curve, config.threshold)
    return result


def read_metrics(run_dir: str | Path) -> list[dict]:
    with open(Path(run_dir) / "metrics.csv", newline="") as f:
        return list(csv.DictReader(f))
