"""Seeded multi-user experiment runner, transfer pretraining and CSV output."""

from __future__ import annotations

import csv
import dataclasses
import io
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import yaml

from . import aggregation as agg
from . import bandit, metrics, qpn, simenv
from .metrics import SessionLog
from .qpn import QpnParams, TrainConfig
from .solicitation import Schedule, ScheduleState, step

log = logging.getLogger(__name__)

CSV_COLUMNS = (
    "session", "policy", "seed", "user", "chosen_arm", "oracle_arm", "reward", "expected_reward",
    "oracle_expected_reward", "solicited", "cum_regret", "cum_m_regret",
)
POLICIES = ("neural_ucb", "neural_ucb_transfer", "neural_ucb_agg", "linucb", "random", "oracle")
AGGREGATIONS = ("none", "mean", "sequence")

# extra SeedSequence key for the pretraining population; changing it changes every transfer run
_PRETRAIN_TAG = 7_919
MAX_STEP_HALVINGS = 8


@dataclass
class ExperimentConfig:
    policy: str = "neural_ucb"
    schedule: Schedule = field(default_factory=Schedule.always)
    sessions: int = 200
    users: int = 50
    seed: int = 0
    repetitions: int = 1
    lam: float = 0.13
    gamma: float = 0.1
    width_h: float = bandit.DEFAULT_WIDTH_H
    learning_rate: float = 0.003
    # pretrained weights give much larger gradients, so stable descent needs a smaller step
    transfer_learning_rate: float = 1e-4
    train_steps: int = 100
    warm_start: bool = False
    linucb_alpha: float = 1.0
    aggregation: str = "none"
    mixed_fraction: float = 1.0
    max_changes: int = 4
    naive_attribution: bool = False
    refine_tolerance: float = 1e-3
    refine_max_iterations: int = 50
    transfer: bool = False
    transfer_params: str | None = None
    pretrain_users: int = 50
    pretrain_samples_per_user: int = 10
    pretrain_learning_rate: float = 1e-4
    pretrain_steps: int = 1000
    workers: int = 1
    env: simenv.EnvConfig = field(default_factory=simenv.EnvConfig)

    def __post_init__(self):
        if isinstance(self.schedule, str):
            self.schedule = Schedule.parse(self.schedule)
        self.policy = normalize_policy(self.policy)
        if self.sessions < 1:
            raise ValueError("sessions must be >= 1")
        if self.users < 1:
            raise ValueError("users must be >= 1")
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not 0.0 <= self.mixed_fraction <= 1.0:
            raise ValueError("mixed_fraction must be in [0, 1]")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")
        if self.max_changes < 1:
            raise ValueError("max_changes must be >= 1")
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if self.schedule.variant == "fixed_horizon" and self.schedule.horizon < self.sessions:
            raise ValueError("fixed-horizon schedule is shorter than the number of sessions")
        if self.policy.startswith("fixed:"):
            m = int(self.policy.split(":")[1])
            if not 0 <= m < len(self.env.catalog):
                raise ValueError(f"fixed arm {m} not in catalog")

    @property
    def seeds(self) -> list[int]:
        return [self.seed + r for r in range(self.repetitions)]

    @property
    def train_cfg(self) -> TrainConfig:
        lr = self.transfer_learning_rate if self.uses_transfer else self.learning_rate
        return TrainConfig(lr, self.train_steps)

    @property
    def uses_transfer(self) -> bool:
        return self.policy == "neural_ucb_transfer" or (self.transfer and self.policy.startswith("neural"))

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


def normalize_policy(name: str) -> str:
    name = name.strip().lower()
    if name.startswith("fixed"):
        arg = name[5:].strip("():= ")
        if not arg.isdigit():
            raise ValueError(f"fixed policy needs an arm index, e.g. fixed(0); got {name!r}")
        return f"fixed:{int(arg)}"
    if name not in POLICIES:
        raise ValueError(f"unknown policy {name!r}; choose from {POLICIES} or fixed(m)")
    return name


_ENV_FIELDS = {f.name for f in dataclasses.fields(simenv.EnvConfig)} - {"catalog"}
_CONFIG_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)} - {"env"}
_ALIASES = {"lambda": "lam", "t": "sessions", "n": "users"}


def config_from_mapping(values: dict, base: ExperimentConfig | None = None) -> ExperimentConfig:
    """Build a config from flat keys; simulator fields (e.g. ``battery_low_prob``) go to ``env``."""
    base = base or ExperimentConfig()
    top, env = {}, {}
    for key, value in values.items():
        key = _ALIASES.get(key.replace("-", "_"), key.replace("-", "_"))
        if value is None and key != "transfer_params":
            continue
        if key in _CONFIG_FIELDS:
            top[key] = value
        elif key in _ENV_FIELDS:
            env[key] = value
        elif key == "catalog":
            env["catalog"] = tuple(
                simenv.DnnCandidate(i, c["name"], float(c["nominal_accuracy"]), float(c["nominal_delay"]),
                                    float(c.get("size", 0.0)))
                for i, c in enumerate(value))
        else:
            raise ValueError(f"unknown config key {key!r}")
    if env:
        top["env"] = dataclasses.replace(base.env, **env)
    return dataclasses.replace(base, **top)


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path) as fh:
        values = yaml.safe_load(fh) or {}
    if not isinstance(values, dict):
        raise ValueError(f"{path}: config must be a flat key/value mapping")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return config_from_mapping(values)


# --- policies ------------------------------------------------------------------

class _Policy:
    learns = False

    def select(self, arms: np.ndarray, ctx: simenv.EnvContext) -> int:
        raise NotImplementedError

    def learn(self, samples: list[tuple[np.ndarray, float, int]]) -> None:
        """``samples`` are (context, reward, arm) triples."""

    def learn_aggregated(self, record: agg.AggregatedRecord) -> None:
        # naive attribution: the aggregated rating is credited to the last model used
        self.learn([(record.contexts[-1], record.aggregated_reward, record.arm_indices[-1])])


class _NeuralUcb(_Policy):
    learns = True

    def __init__(self, state: bandit.BanditState, cfg: ExperimentConfig):
        self.state = state
        self.train_cfg = cfg.train_cfg
        self.refine_cfg = agg.RefinementConfig(cfg.refine_tolerance, cfg.refine_max_iterations, cfg.train_cfg)
        self.refine_agg = cfg.policy == "neural_ucb_agg" and not cfg.naive_attribution
        self.records: list[agg.AggregatedRecord] = []
        self.step_halvings = 0

    def select(self, arms, ctx):
        return bandit.select_arm(self.state, arms)

    def _grow_confidence(self, contexts):
        # gradients at the pre-retrain theta
        for g in qpn.batch_gradients(self.state.theta, np.asarray(contexts)):
            bandit.update_confidence(self.state, g)

    def learn(self, samples):
        self._grow_confidence([x for x, _, _ in samples])
        for x, r, _ in samples:
            self.state.contexts.append(np.asarray(x, dtype=float))
            self.state.rewards.append(float(r))
        self._retrain()

    def learn_aggregated(self, record):
        if not self.refine_agg:
            return super().learn_aggregated(record)
        self._grow_confidence(record.contexts)
        self.records.append(record)
        self._retrain()

    def _retrain(self):
        # The stable step shrinks as data accumulates, so a diverged retrain halves the
        # step for the rest of the run and is repeated from the same starting point.
        for _ in range(MAX_STEP_HALVINGS + 1):
            try:
                if self.records:
                    result = agg.refine(self.records, self.state.training_arrays(), self.state.theta,
                                        self.refine_cfg, start=self.state.theta_init)
                    self.state.theta = result.theta
                else:
                    self.state.theta = qpn.train_qpn(self.state.training_start(), self.state.training_arrays(),
                                                     self.train_cfg)
                return
            except qpn.TrainingDiverged:
                lr = self.train_cfg.learning_rate / 2
                self.train_cfg = TrainConfig(lr, self.train_cfg.steps)
                self.refine_cfg = dataclasses.replace(self.refine_cfg, train_cfg=self.train_cfg)
                self.step_halvings += 1
                log.info("retrain diverged at n=%d; step halved to %g", len(self.state.rewards), lr)
        raise qpn.TrainingDiverged(f"retrain still diverges after {MAX_STEP_HALVINGS} step halvings")


class _LinUcb(_Policy):
    learns = True

    def __init__(self, n_arms, alpha):
        self.state = bandit.LinUcbState.create(n_arms, alpha=alpha)

    def select(self, arms, ctx):
        return bandit.linucb_select(self.state, arms)

    def learn(self, samples):
        for x, r, m in samples:
            bandit.linucb_update(self.state, m, x, r)


class _Random(_Policy):
    def __init__(self, rng, n_arms):
        self.rng, self.n_arms = rng, n_arms

    def select(self, arms, ctx):
        return bandit.random_select(self.rng, self.n_arms)


class _Fixed(_Policy):
    def __init__(self, m, n_arms):
        self.m = bandit.fixed_select(m, n_arms)

    def select(self, arms, ctx):
        return self.m


class _Oracle(_Policy):
    def __init__(self, profile, env: simenv.EnvConfig):
        self.profile, self.env = profile, env

    def select(self, arms, ctx):
        return simenv.oracle_best(self.profile, ctx, self.env.catalog, self.env.delay_scale)[0]


def _make_policy(cfg: ExperimentConfig, profile, policy_rng, pretrained: QpnParams | None) -> _Policy:
    n_arms = len(cfg.env.catalog)
    if cfg.policy.startswith("neural"):
        if cfg.uses_transfer:
            if pretrained is None:
                raise ValueError("transfer policy needs pretrained parameters")
            state = bandit.init_with_transfer(pretrained, cfg.gamma, cfg.width_h, cfg.warm_start)
        else:
            state = bandit.init_state(policy_rng, cfg.gamma, cfg.width_h, cfg.warm_start)
        return _NeuralUcb(state, cfg)
    if cfg.policy == "linucb":
        return _LinUcb(n_arms, cfg.linucb_alpha)
    if cfg.policy == "random":
        return _Random(policy_rng, n_arms)
    if cfg.policy == "oracle":
        return _Oracle(profile, cfg.env)
    return _Fixed(int(cfg.policy.split(":")[1]), n_arms)


# --- single run ------------------------------------------------------------------

def run_streams(seed: int, user: int) -> list[np.random.Generator]:
    """Independent generators for profile, contexts, reward noise and the policy."""
    children = np.random.SeedSequence([seed, user]).spawn(4)
    return [np.random.default_rng(c) for c in children]


def run_user(cfg: ExperimentConfig, seed: int, user: int, pretrained: QpnParams | None = None) -> list[SessionLog]:
    """Simulate one user for ``cfg.sessions`` sessions under the configured policy."""
    profile_rng, ctx_rng, reward_rng, policy_rng = run_streams(seed, user)
    env = cfg.env
    dnns = env.catalog
    profile = simenv.sample_user(profile_rng, env, seed=seed)
    policy = _make_policy(cfg, profile, policy_rng, pretrained)
    aggregate = agg.aggregate_sequence if cfg.aggregation == "sequence" else agg.aggregate_mean
    sched_state = ScheduleState()
    logs = []
    for t in range(1, cfg.sessions + 1):
        k_changes = 1 if cfg.aggregation == "none" else int(ctx_rng.integers(1, cfg.max_changes + 1))
        chosen, xs, rewards, expected, oracle_arms, oracle_vals = [], [], [], [], [], []
        for _ in range(k_changes):
            ctx = simenv.sample_context(ctx_rng, env)
            arms = simenv.arm_contexts(ctx, dnns)
            m = policy.select(arms, ctx)
            values = simenv.expected_qoes(profile, ctx, dnns, env.delay_scale)
            best = int(np.argmax(values))
            chosen.append(m)
            xs.append(arms[m])
            rewards.append(simenv.qoe(profile, ctx, dnns[m], reward_rng, env.delay_scale))
            expected.append(values[m])
            oracle_arms.append(best)
            oracle_vals.append(values[best])
        aggregated = cfg.aggregation != "none" and ctx_rng.random() < cfg.mixed_fraction
        solicited = step(cfg.schedule, sched_state)
        if solicited and policy.learns:
            if aggregated:
                record = agg.AggregatedRecord(np.array(xs), chosen, aggregate(rewards), t)
                policy.learn_aggregated(record)
            else:
                policy.learn(list(zip(xs, rewards, chosen)))
        logs.append(SessionLog(
            session=t, chosen_arm=chosen[-1], oracle_arm=oracle_arms[-1],
            reward=float(np.mean(rewards)), expected_reward=float(np.mean(expected)),
            oracle_expected_reward=float(np.mean(oracle_vals)), solicited=solicited,
            cost=cfg.lam if solicited else 0.0,
        ))
    return logs


# --- transfer pretraining --------------------------------------------------------

def collect_pretrain_samples(env_seed: int, samples_per_user: int = 10, users: int = 50,
                             env: simenv.EnvConfig = simenv.EnvConfig()) -> tuple[np.ndarray, np.ndarray]:
    """QoE samples from freshly sampled users under uniformly random model choice."""
    rng = np.random.default_rng(np.random.SeedSequence([env_seed, _PRETRAIN_TAG]))
    xs, ys = [], []
    for _ in range(users):
        profile = simenv.sample_user(rng, env)
        for _ in range(samples_per_user):
            ctx = simenv.sample_context(rng, env)
            m = int(rng.integers(len(env.catalog)))
            xs.append(simenv.encode_context(ctx, env.catalog[m]))
            ys.append(simenv.qoe(profile, ctx, env.catalog[m], rng, env.delay_scale))
    return np.array(xs), np.array(ys)


def pretrain_transfer_qpn(env_seed: int, samples_per_user: int = 10, users: int = 50,
                          train_cfg: TrainConfig = TrainConfig(1e-4, 1000),
                          env: simenv.EnvConfig = simenv.EnvConfig()) -> QpnParams:
    X, y = collect_pretrain_samples(env_seed, samples_per_user, users, env)
    rng = np.random.default_rng(np.random.SeedSequence([env_seed, _PRETRAIN_TAG, 1]))
    return qpn.train_qpn(qpn.init_params(rng), (X, y), train_cfg)


@lru_cache(maxsize=64)
def _cached_pretrain(env_seed, samples_per_user, users, lr, steps, env):
    return pretrain_transfer_qpn(env_seed, samples_per_user, users, TrainConfig(lr, steps), env)


def pretrained_for(cfg: ExperimentConfig, seed: int) -> QpnParams | None:
    if not cfg.uses_transfer:
        return None
    if cfg.transfer_params:
        return qpn.load_params(cfg.transfer_params)
    return _cached_pretrain(seed, cfg.pretrain_samples_per_user, cfg.pretrain_users,
                            cfg.pretrain_learning_rate, cfg.pretrain_steps, cfg.env).copy()


# --- experiments -----------------------------------------------------------------

@dataclass
class ExperimentResult:
    config: ExperimentConfig
    runs: dict[tuple[int, int], list[SessionLog]]  # (seed, user) -> logs

    def _stack(self, fn) -> np.ndarray:
        return np.array([fn(logs) for logs in self.runs.values()])

    def regret_matrix(self) -> np.ndarray:
        return self._stack(metrics.cumulative_regret)

    def m_regret_matrix(self) -> np.ndarray:
        return self._stack(lambda logs: metrics.m_regret(logs, self.config.lam))

    def solicitation_matrix(self) -> np.ndarray:
        return self._stack(metrics.cumulative_solicitations)

    def average_qoes(self) -> np.ndarray:
        return self._stack(metrics.average_qoe)

    def per_seed(self, values: np.ndarray) -> np.ndarray:
        """Average a per-run quantity over users within each seed."""
        seeds = np.array([s for s, _ in self.runs])
        return np.array([values[seeds == s].mean(axis=0) for s in self.config.seeds])

    def mean_regret_curve(self) -> np.ndarray:
        return self.regret_matrix().mean(axis=0)

    def mean_m_regret_curve(self) -> np.ndarray:
        return self.m_regret_matrix().mean(axis=0)

    def summary(self) -> dict:
        reg = self.regret_matrix()[:, -1]
        mreg = self.m_regret_matrix()[:, -1]
        qoe = self.average_qoes()
        sol = self.solicitation_matrix()[:, -1]
        return {
            "policy": self.config.policy,
            "schedule": str(self.config.schedule),
            "aggregation": self.config.aggregation,
            "runs": len(self.runs),
            "sessions": self.config.sessions,
            "average_qoe_mean": float(qoe.mean()),
            "average_qoe_std": float(qoe.std()),
            "final_regret_mean": float(reg.mean()),
            "final_regret_std": float(reg.std()),
            "final_m_regret_mean": float(mreg.mean()),
            "final_m_regret_std": float(mreg.std()),
            "solicitations_mean": float(sol.mean()),
        }


def _run_one(args):
    cfg, seed, user = args
    return run_user(cfg, seed, user, pretrained_for(cfg, seed))


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> ExperimentResult:
    jobs = [(cfg, s, u) for s in cfg.seeds for u in range(cfg.users)]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            outputs = list(pool.map(_run_one, jobs, chunksize=max(1, len(jobs) // (4 * cfg.workers))))
    else:
        outputs = [_run_one(j) for j in jobs]
    result = ExperimentResult(cfg, {(s, u): logs for (_, s, u), logs in zip(jobs, outputs)})
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


def sessions_csv(results: list[ExperimentResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for result in results:
        lam = result.config.lam
        for (seed, user), logs in result.runs.items():
            reg = metrics.cumulative_regret(logs)
            mreg = metrics.m_regret(logs, lam)
            for l, r, mr in zip(logs, reg, mreg):
                writer.writerow([l.session, result.config.policy, seed, user, l.chosen_arm, l.oracle_arm,
                                 repr(l.reward), repr(l.expected_reward), repr(l.oracle_expected_reward),
                                 int(l.solicited), repr(float(r)), repr(float(mr))])
    return buf.getvalue()


def curves_csv(results: list[ExperimentResult]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["session", "policy", "cum_regret_mean", "cum_regret_std",
                     "cum_m_regret_mean", "cum_m_regret_std", "reward_mean", "reward_std"])
    for result in results:
        reg = result.regret_matrix()
        mreg = result.m_regret_matrix()
        rew = np.array([[l.reward for l in logs] for logs in result.runs.values()])
        for t in range(result.config.sessions):
            writer.writerow([t + 1, result.config.policy, repr(float(reg[:, t].mean())), repr(float(reg[:, t].std())),
                             repr(float(mreg[:, t].mean())), repr(float(mreg[:, t].std())),
                             repr(float(rew[:, t].mean())), repr(float(rew[:, t].std()))])
    return buf.getvalue()


def summary_csv(results: list[ExperimentResult]) -> str:
    rows = [r.summary() for r in results]
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def write_outputs(results, out_dir) -> Path:
    if isinstance(results, ExperimentResult):
        results = [results]
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, text in (("sessions.csv", sessions_csv(results)), ("curves.csv", curves_csv(results)),
                       ("summary.csv", summary_csv(results))):
        (out / name).write_text(text)
    log.info("wrote %s", os.fspath(out))
    return out
