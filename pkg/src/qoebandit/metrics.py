"""Regret, m-regret, average QoE and log-log slope diagnostics over session logs."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class SessionLog:
    session: int
    chosen_arm: int
    oracle_arm: int
    reward: float  # realized QoE
    expected_reward: float  # expected QoE of the chosen arm
    oracle_expected_reward: float
    solicited: bool
    cost: float = 0.0  # lambda if solicited else 0

    def __post_init__(self):
        if not self.solicited and self.cost != 0.0:
            raise ValueError("a session without solicitation carries no cost")


def instant_regret(logs: Sequence[SessionLog]) -> np.ndarray:
    return np.array([l.oracle_expected_reward - l.expected_reward for l in logs], dtype=float)


def cumulative_regret(logs: Sequence[SessionLog]) -> np.ndarray:
    """Prefix sums of the expected-reward gap to the oracle (noise-free)."""
    return np.cumsum(instant_regret(logs))


def cumulative_solicitations(logs: Sequence[SessionLog]) -> np.ndarray:
    return np.cumsum([1 if l.solicited else 0 for l in logs]).astype(int)


def m_regret(logs: Sequence[SessionLog], lam: float) -> np.ndarray:
    """Learning regret plus lambda per executed solicitation; the oracle pays nothing."""
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return cumulative_regret(logs) + lam * cumulative_solicitations(logs)


def average_qoe(logs: Sequence[SessionLog]) -> float:
    if len(logs) == 0:
        raise ValueError("average_qoe of an empty log")
    return float(np.mean([l.reward for l in logs]))


def loglog_slope(series, t_min: int, t_max: int) -> float:
    """Least-squares slope of log(series_t) on log(t) for sessions t_min..t_max (1-based)."""
    series = np.asarray(series, dtype=float)
    if not 1 <= t_min < t_max <= len(series):
        raise ValueError(f"window [{t_min}, {t_max}] invalid for a series of length {len(series)}")
    t = np.arange(t_min, t_max + 1, dtype=float)
    window = series[t_min - 1:t_max]
    if np.any(~np.isfinite(window)) or np.any(window <= 0):
        raise ValueError("loglog_slope needs strictly positive values in the window")
    slope, _ = np.polyfit(np.log(t), np.log(window), 1)
    return float(slope)
