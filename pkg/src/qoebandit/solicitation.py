"""When to ask the user for a QoE rating.

Three schedules: ``always``; a known-horizon schedule that spreads exactly
ceil(T^(2/3)) solicitations evenly over T sessions; and an unknown-horizon
schedule that solicits in session t while the running count c < t^(1-alpha).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache


class HorizonOverrun(ValueError):
    pass


@dataclass(frozen=True)
class Schedule:
    variant: str  # "always" | "fixed_horizon" | "unknown_horizon"
    horizon: int | None = None
    alpha: float | None = None

    def __post_init__(self):
        if self.variant == "fixed_horizon":
            if self.horizon is None or self.horizon < 1:
                raise ValueError(f"fixed-horizon schedule needs horizon >= 1, got {self.horizon}")
        elif self.variant == "unknown_horizon":
            # alpha = 1 is allowed: it degenerates to a single solicitation
            if self.alpha is None or not 0.0 < self.alpha <= 1.0:
                raise ValueError(f"unknown-horizon schedule needs 0 < alpha <= 1, got {self.alpha}")
        elif self.variant != "always":
            raise ValueError(f"unknown schedule variant {self.variant!r}")

    @classmethod
    def always(cls) -> "Schedule":
        return cls("always")

    @classmethod
    def fixed_horizon(cls, horizon: int) -> "Schedule":
        return cls("fixed_horizon", horizon=int(horizon))

    @classmethod
    def unknown_horizon(cls, alpha: float) -> "Schedule":
        return cls("unknown_horizon", alpha=float(alpha))

    @classmethod
    def parse(cls, text: str) -> "Schedule":
        """``always``, ``fss:<T>`` or ``fssut:<alpha>``."""
        text = text.strip().lower()
        if text == "always":
            return cls.always()
        kind, _, arg = text.partition(":")
        if kind == "fss" and arg:
            return cls.fixed_horizon(int(arg))
        if kind == "fssut" and arg:
            return cls.unknown_horizon(float(arg))
        raise ValueError(f"cannot parse schedule {text!r}; expected always, fss:<T> or fssut:<alpha>")

    def __str__(self):
        if self.variant == "fixed_horizon":
            return f"fss:{self.horizon}"
        if self.variant == "unknown_horizon":
            return f"fssut:{self.alpha:g}"
        return "always"


@dataclass
class ScheduleState:
    t: int = 1  # index of the session about to be decided
    c: int = 0  # solicitations executed so far


def ceil_two_thirds_power(n: int) -> int:
    """Exact ceil(n^(2/3)) for integers: the smallest L with L^3 >= n^2."""
    if n < 0:
        raise ValueError("n must be nonnegative")
    target = n * n
    guess = max(int(round(n ** (2.0 / 3.0))), 0)
    while guess > 0 and (guess - 1) ** 3 >= target:
        guess -= 1
    while guess ** 3 < target:
        guess += 1
    return guess


@lru_cache(maxsize=256)
def fixed_horizon_sessions(horizon: int) -> frozenset[int]:
    n_solicit = ceil_two_thirds_power(horizon)
    return frozenset((l * horizon) // n_solicit + 1 for l in range(n_solicit))


def _unknown_horizon_budget(t: int, alpha: float) -> float:
    return t ** (1.0 - alpha)


def should_solicit(schedule: Schedule, state: ScheduleState) -> bool:
    if state.t < 1:
        raise ValueError(f"session index must be >= 1, got {state.t}")
    if schedule.variant == "always":
        return True
    if schedule.variant == "fixed_horizon":
        if state.t > schedule.horizon:
            raise HorizonOverrun(f"session {state.t} exceeds the known horizon {schedule.horizon}")
        return state.t in fixed_horizon_sessions(schedule.horizon)
    return state.c < _unknown_horizon_budget(state.t, schedule.alpha)


def step(schedule: Schedule, state: ScheduleState) -> bool:
    """Decide for the current session and advance ``state`` in place."""
    decision = should_solicit(schedule, state)
    if decision:
        state.c += 1
    state.t += 1
    return decision


def solicitation_count(schedule: Schedule, horizon: int) -> int:
    """Number of solicitations over ``horizon`` sessions, in closed form."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if schedule.variant == "always":
        return horizon
    if schedule.variant == "fixed_horizon":
        if horizon > schedule.horizon:
            raise HorizonOverrun(f"horizon {horizon} exceeds the schedule's horizon {schedule.horizon}")
        if horizon == schedule.horizon:
            return ceil_two_thirds_power(horizon)
        return sum(1 for t in fixed_horizon_sessions(schedule.horizon) if t <= horizon)
    return math.ceil(_unknown_horizon_budget(horizon, schedule.alpha))


def solicitation_cost(count: int, lam: float) -> float:
    if count < 0:
        raise ValueError("count must be nonnegative")
    if lam < 0:
        raise ValueError("lambda must be nonnegative")
    return lam * count
