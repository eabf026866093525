"""Synthetic multi-user QoE environment.

Each simulated user has weight tables over location, time of day and battery
state. A session's QoE for a candidate DNN is

    w_a * accuracy - w_d * delay / max_delay

where accuracy depends on ambient brightness and the DNN's nominal accuracy,
and delay on CPU temperature and the DNN's nominal delay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

N_LOCATIONS = 10
N_HOURS = 24


@dataclass(frozen=True)
class DnnCandidate:
    id: int
    name: str
    nominal_accuracy: float
    nominal_delay: float  # ms
    size: float = 0.0  # MB, informational

    def __post_init__(self):
        if not 0.0 < self.nominal_accuracy < 1.0:
            raise ValueError(f"nominal_accuracy must be in (0, 1), got {self.nominal_accuracy}")
        if not self.nominal_delay > 0.0:
            raise ValueError(f"nominal_delay must be positive, got {self.nominal_delay}")


DEFAULT_CATALOG = (
    DnnCandidate(0, "MobileNet-v2", 0.708, 12.0, 3.4),
    DnnCandidate(1, "Inception-v2", 0.735, 59.0, 11.0),
    DnnCandidate(2, "Inception-v3", 0.775, 148.0, 23.0),
)


def catalog() -> list[DnnCandidate]:
    return list(DEFAULT_CATALOG)


@dataclass(frozen=True)
class EnvConfig:
    """Distribution parameters of the simulator; every field can be overridden."""

    brightness_low: float = 0.1
    brightness_high: float = 1.0
    battery_low_prob: float = 0.3
    loc_weight_low: float = 0.0
    loc_weight_high: float = 2.0
    time_weight_mean: float = 1.0
    time_weight_std: float = 0.5
    battery_low_weight_mean: float = 3.0
    battery_low_weight_std: float = 1.0
    # False keeps one w(loc) draw per user instead of re-drawing it every session
    resample_loc_weight: bool = True
    delay_scale: float = 148.0  # ms; normalizes the delay term
    catalog: tuple[DnnCandidate, ...] = DEFAULT_CATALOG

    def __post_init__(self):
        if not 0.0 < self.brightness_low <= self.brightness_high <= 1.0:
            raise ValueError("brightness range must satisfy 0 < low <= high <= 1")
        if not 0.0 <= self.battery_low_prob <= 1.0:
            raise ValueError("battery_low_prob must be in [0, 1]")
        if self.delay_scale <= 0:
            raise ValueError("delay_scale must be positive")
        if len(self.catalog) < 1:
            raise ValueError("catalog must contain at least one DNN")


@dataclass(frozen=True)
class EnvContext:
    brightness: float
    location: int  # 1..10
    time: int  # 0..23
    battery: str  # "high" | "low"
    cpu_temperature: float  # [0, 1]

    def __post_init__(self):
        if not 0.0 < self.brightness <= 1.0:
            raise ValueError(f"brightness must be in (0, 1], got {self.brightness}")
        if not 1 <= self.location <= N_LOCATIONS:
            raise ValueError(f"location must be in 1..{N_LOCATIONS}, got {self.location}")
        if not 0 <= self.time < N_HOURS:
            raise ValueError(f"time must be in 0..{N_HOURS - 1}, got {self.time}")
        if self.battery not in ("high", "low"):
            raise ValueError(f"battery must be 'high' or 'low', got {self.battery!r}")
        if not 0.0 <= self.cpu_temperature <= 1.0:
            raise ValueError(f"cpu_temperature must be in [0, 1], got {self.cpu_temperature}")


@dataclass
class UserProfile:
    loc_weight_mean: np.ndarray  # (10,)
    loc_weight_std: np.ndarray  # (10,)
    loc_weights: np.ndarray  # (10,) one draw, used when loc weights are not resampled
    time_weights: np.ndarray  # (24,)
    battery_low_weight: float
    battery_high_weight: float = 1.0
    resample_loc_weight: bool = True
    seed: int | None = field(default=None, compare=False)


def sample_user(rng: np.random.Generator, cfg: EnvConfig = EnvConfig(), seed: int | None = None) -> UserProfile:
    mean = rng.uniform(cfg.loc_weight_low, cfg.loc_weight_high, size=N_LOCATIONS)
    std = rng.uniform(cfg.loc_weight_low, cfg.loc_weight_high, size=N_LOCATIONS)
    loc_weights = rng.normal(mean, std)
    time_weights = rng.normal(cfg.time_weight_mean, cfg.time_weight_std, size=N_HOURS)
    battery_low = float(rng.normal(cfg.battery_low_weight_mean, cfg.battery_low_weight_std))
    return UserProfile(mean, std, loc_weights, time_weights, battery_low, 1.0,
                       cfg.resample_loc_weight, seed)


def sample_context(rng: np.random.Generator, cfg: EnvConfig = EnvConfig()) -> EnvContext:
    brightness = float(rng.uniform(cfg.brightness_low, cfg.brightness_high))
    location = int(rng.integers(1, N_LOCATIONS + 1))
    time = int(rng.integers(0, N_HOURS))
    battery = "low" if rng.random() < cfg.battery_low_prob else "high"
    ctemp = float(rng.uniform(0.0, 1.0))
    return EnvContext(brightness, location, time, battery, ctemp)


def accuracy(ctx: EnvContext, dnn: DnnCandidate) -> float:
    """brt ** (2 * (1 - nacc)); a higher nominal accuracy is less sensitive to dim light."""
    return float(ctx.brightness ** (2.0 * (1.0 - dnn.nominal_accuracy)))


def delay(ctx: EnvContext, dnn: DnnCandidate) -> float:
    return ctx.cpu_temperature * dnn.nominal_delay


def delay_weight(profile: UserProfile, ctx: EnvContext) -> float:
    battery_w = profile.battery_low_weight if ctx.battery == "low" else profile.battery_high_weight
    return float(profile.time_weights[ctx.time] * battery_w)


def _qoe(w_a: float, w_d: float, ctx: EnvContext, dnn: DnnCandidate, delay_scale: float) -> float:
    return w_a * accuracy(ctx, dnn) - w_d * delay(ctx, dnn) / delay_scale


def accuracy_weight(profile: UserProfile, ctx: EnvContext, rng: np.random.Generator) -> float:
    i = ctx.location - 1
    if profile.resample_loc_weight:
        return float(rng.normal(profile.loc_weight_mean[i], profile.loc_weight_std[i]))
    return float(profile.loc_weights[i])


def qoe(profile: UserProfile, ctx: EnvContext, dnn: DnnCandidate, rng: np.random.Generator,
        delay_scale: float = 148.0) -> float:
    """One stochastic QoE rating; w(loc) is drawn from ``rng`` when the profile resamples it."""
    return _qoe(accuracy_weight(profile, ctx, rng), delay_weight(profile, ctx), ctx, dnn, delay_scale)


def expected_qoe(profile: UserProfile, ctx: EnvContext, dnn: DnnCandidate,
                 delay_scale: float = 148.0) -> float:
    i = ctx.location - 1
    w_a = profile.loc_weight_mean[i] if profile.resample_loc_weight else profile.loc_weights[i]
    return _qoe(float(w_a), delay_weight(profile, ctx), ctx, dnn, delay_scale)


def expected_qoes(profile: UserProfile, ctx: EnvContext, dnns=DEFAULT_CATALOG,
                  delay_scale: float = 148.0) -> np.ndarray:
    return np.array([expected_qoe(profile, ctx, d, delay_scale) for d in dnns])


def oracle_best(profile: UserProfile, ctx: EnvContext, dnns=DEFAULT_CATALOG,
                delay_scale: float = 148.0) -> tuple[int, float]:
    """Arm with the highest expected QoE; ties go to the lowest index."""
    values = expected_qoes(profile, ctx, dnns, delay_scale)
    best = int(np.argmax(values))
    return best, float(values[best])


def encode_context(ctx: EnvContext, dnn: DnnCandidate, delay_scale: float = 148.0) -> np.ndarray:
    """7-feature QPN input in [0, 1]: environment features plus the DNN's nominal stats."""
    return np.array([
        ctx.brightness,
        (ctx.location - 1) / (N_LOCATIONS - 1),
        ctx.time / (N_HOURS - 1),
        1.0 if ctx.battery == "low" else 0.0,
        ctx.cpu_temperature,
        dnn.nominal_accuracy,
        min(dnn.nominal_delay / delay_scale, 1.0),
    ])


def arm_contexts(ctx: EnvContext, dnns=DEFAULT_CATALOG, delay_scale: float = 148.0) -> np.ndarray:
    """(M, 7) matrix of per-arm context vectors."""
    return np.stack([encode_context(ctx, d, delay_scale) for d in dnns])
