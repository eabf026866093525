"""Aggregated session feedback and its refinement into per-model QoE estimates."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import qpn
from .qpn import QpnParams, TrainConfig


@dataclass
class AggregatedRecord:
    contexts: np.ndarray  # (K, n_features), context of the arm chosen at each change point
    arm_indices: list[int]
    aggregated_reward: float
    session: int = 0

    def __post_init__(self):
        self.contexts = np.atleast_2d(np.asarray(self.contexts, dtype=float))
        if len(self.contexts) < 1:
            raise ValueError("a record needs at least one context")
        if len(self.arm_indices) != len(self.contexts):
            raise ValueError("contexts and arm_indices must have the same length")

    @property
    def k(self) -> int:
        return len(self.contexts)


@dataclass(frozen=True)
class RefinementConfig:
    residual_tolerance: float = 1e-3
    max_iterations: int = 50
    train_cfg: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.residual_tolerance <= 0:
            raise ValueError("residual_tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")


@dataclass
class RefineResult:
    theta: QpnParams
    samples: tuple[np.ndarray, np.ndarray]  # (X, y) individualized plus plain samples
    converged: bool
    iterations: int
    residual_changes: list[float]


def aggregate_mean(rewards: Sequence[float]) -> float:
    if len(rewards) < 1:
        raise ValueError("need at least one reward")
    return float(np.mean(rewards))


def sequence_weights(k: int) -> np.ndarray:
    """w_k = 2^k / sum_{i=1..K} 2^i: later picks weigh more."""
    if k < 1:
        raise ValueError("need at least one reward")
    w = 2.0 ** np.arange(1, k + 1)
    return w / w.sum()


def aggregate_sequence(rewards: Sequence[float]) -> float:
    rewards = np.asarray(rewards, dtype=float)
    return float(sequence_weights(len(rewards)) @ rewards)


def group_residual(record: AggregatedRecord, theta: QpnParams) -> float:
    return record.aggregated_reward - float(np.mean(qpn.predict(theta, record.contexts)))


def individualize(record: AggregatedRecord, theta: QpnParams) -> np.ndarray:
    """Per-change QoE estimates; their mean is exactly the aggregated reward."""
    preds = qpn.predict(theta, record.contexts)
    delta = record.aggregated_reward - float(np.mean(preds))
    est = preds + delta
    # remove the last ulp of drift so the mean is exact
    return est + (record.aggregated_reward - np.mean(est))


class _Batch:
    """All record contexts stacked once so each refinement pass is a single forward call."""

    def __init__(self, records):
        self.x = np.concatenate([r.contexts for r in records])
        self.sizes = np.array([r.k for r in records])
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)[:-1]])
        self.group = np.repeat(np.arange(len(records)), self.sizes)
        self.target = np.array([r.aggregated_reward for r in records])

    def residuals(self, preds):
        return self.target - np.add.reduceat(preds, self.starts) / self.sizes

    def estimates(self, preds):
        est = preds + self.residuals(preds)[self.group]
        # same exact-mean correction as individualize
        return est + self.residuals(est)[self.group]


def _stack(batch, plain, preds):
    px, py = plain
    if len(py):
        return np.concatenate([batch.x, px]), np.concatenate([batch.estimates(preds), py])
    return batch.x, batch.estimates(preds)


def refine(agg_dataset: Sequence[AggregatedRecord], plain_dataset, theta: QpnParams,
           cfg: RefinementConfig = RefinementConfig(), start: QpnParams | None = None) -> RefineResult:
    """Alternate individualizing aggregated records and retraining theta.

    Each iteration replaces the previous individualized estimates. Stops when
    the largest change of any group residual between consecutive iterations is
    below ``cfg.residual_tolerance`` or after ``cfg.max_iterations`` retrains.
    Plain samples are used as-is. Each retrain starts from ``start`` when given
    (e.g. the bandit's initial parameters), otherwise from the current theta.
    """
    records = list(agg_dataset)
    plain = qpn.as_arrays(plain_dataset)
    if not records and len(plain[1]) == 0:
        raise ValueError("refine needs at least one aggregated record or plain sample")

    if not records:
        init = theta if start is None else start
        return RefineResult(qpn.train_qpn(init, plain, cfg.train_cfg), plain, True, 1, [])

    batch = _Batch(records)
    if np.all(batch.sizes == 1):
        # estimates do not depend on theta, so one retrain reaches the fixed point
        samples = _stack(batch, plain, qpn.predict(theta, batch.x))
        init = theta if start is None else start
        return RefineResult(qpn.train_qpn(init, samples, cfg.train_cfg), samples, True, 1, [])

    prev = None
    changes: list[float] = []
    samples = None
    for it in range(cfg.max_iterations + 1):
        preds = qpn.predict(theta, batch.x)
        res = batch.residuals(preds)
        if not np.all(np.isfinite(res)):
            raise FloatingPointError("non-finite group residual during refinement")
        if prev is not None:
            changes.append(float(np.max(np.abs(res - prev))))
            if changes[-1] < cfg.residual_tolerance:
                return RefineResult(theta, samples, True, it, changes)
        if it == cfg.max_iterations:
            break
        samples = _stack(batch, plain, preds)
        theta = qpn.train_qpn(theta if start is None else start, samples, cfg.train_cfg)
        prev = res
    return RefineResult(theta, samples, False, cfg.max_iterations, changes)
