"""NeuralUCB arm selection plus the LinUCB, random and fixed baselines."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import qpn
from .qpn import QpnParams, TrainConfig

DEFAULT_GAMMA = 1.0
DEFAULT_WIDTH_H = float(sum(qpn.LAYER_SIZES[1:-1]))  # 8 + 16 + 8 hidden nodes


class ConfidenceStateError(ArithmeticError):
    """The confidence matrix produced a negative quadratic form."""


@dataclass
class BanditState:
    theta: QpnParams
    z_inverse: np.ndarray
    z_matrix: np.ndarray
    gamma: float = DEFAULT_GAMMA
    width_h: float = DEFAULT_WIDTH_H
    contexts: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    # parameters each retrain starts from; None means warm start from the current theta
    theta_init: QpnParams | None = None

    def training_start(self) -> QpnParams:
        return self.theta if self.theta_init is None else self.theta_init

    @property
    def dataset(self) -> list[tuple[np.ndarray, float]]:
        return list(zip(self.contexts, self.rewards))

    def training_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        if not self.contexts:
            return np.empty((0, self.theta.layer_sizes[0])), np.empty(0)
        return np.array(self.contexts), np.array(self.rewards)


def _fresh_state(theta: QpnParams, gamma: float, width_h: float, warm_start: bool) -> BanditState:
    if gamma < 0:
        raise ValueError(f"gamma must be nonnegative, got {gamma}")
    if width_h <= 0:
        raise ValueError(f"width_h must be positive, got {width_h}")
    p = theta.num_params
    return BanditState(theta, np.eye(p), np.eye(p), float(gamma), float(width_h),
                       theta_init=None if warm_start else theta.copy())


def init_state(seed, gamma: float = DEFAULT_GAMMA, width_h: float = DEFAULT_WIDTH_H,
               warm_start: bool = False) -> BanditState:
    """Random theta, Z = Z^-1 = I and no data.

    By default every retrain restarts gradient descent from this initial theta;
    ``warm_start=True`` continues from the latest theta instead.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return _fresh_state(qpn.init_params(rng), gamma, width_h, warm_start)


def init_with_transfer(pretrained: QpnParams, gamma: float = DEFAULT_GAMMA,
                       width_h: float = DEFAULT_WIDTH_H, warm_start: bool = False) -> BanditState:
    return _fresh_state(pretrained.copy(), gamma, width_h, warm_start)


def _bonus_from_quad(quad: np.ndarray, gamma: float, width_h: float) -> np.ndarray:
    if np.any(quad < -1e-9):
        raise ConfidenceStateError(f"negative quadratic form {quad.min():.3g}; Z inverse is corrupted")
    return gamma * np.sqrt(np.maximum(quad, 0.0) / width_h)


def exploration_bonus(state: BanditState, g: np.ndarray) -> np.ndarray:
    """gamma * sqrt(g^T Z^-1 g / h) for one gradient or a stack of gradients."""
    g = np.atleast_2d(g)
    quad = np.sum((g @ state.z_inverse) * g, axis=1)
    return _bonus_from_quad(quad, state.gamma, state.width_h)


def ucb_scores(state: BanditState, arms: np.ndarray) -> np.ndarray:
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    preds = qpn.predict(state.theta, arms)
    if state.gamma == 0.0:
        return preds
    grads = qpn.batch_gradients(state.theta, arms)
    return preds + exploration_bonus(state, grads)


def select_arm(state: BanditState, arms: np.ndarray) -> int:
    # np.argmax returns the first maximum, so ties go to the lowest index
    return int(np.argmax(ucb_scores(state, arms)))


def sherman_morrison_update(a_inv: np.ndarray, u: np.ndarray, v: np.ndarray | None = None,
                            eps: float = 1e-12) -> np.ndarray | None:
    """Inverse of (A + u v^T) given A^-1, or None when the update is numerically singular."""
    a_inv_u = a_inv @ u
    v_a_inv = a_inv_u if v is None else v @ a_inv  # symmetric A^-1 when v is u
    denom = 1.0 + (u if v is None else v) @ a_inv_u
    if abs(denom) <= eps:
        return None
    return a_inv - np.outer(a_inv_u / denom, v_a_inv)


def update_confidence(state: BanditState, g: np.ndarray) -> BanditState:
    """Z <- Z + g g^T / h, keeping Z^-1 in step via a rank-one inverse update."""
    g = np.asarray(g, dtype=float)
    u = g / np.sqrt(state.width_h)
    state.z_matrix += np.outer(u, u)
    new_inv = sherman_morrison_update(state.z_inverse, u)
    if new_inv is None:
        warnings.warn("rank-one update denominator vanished; re-inverting Z directly", RuntimeWarning)
        new_inv = np.linalg.inv(state.z_matrix)
    state.z_inverse = new_inv
    return state


def observe_reward(state: BanditState, chosen_context: np.ndarray, reward: float,
                   cfg: TrainConfig = TrainConfig()) -> BanditState:
    """Store the sample, retrain theta on all data and grow Z with the pre-retrain gradient."""
    if not np.isfinite(reward):
        raise ValueError(f"reward must be finite, got {reward}")
    x = np.asarray(chosen_context, dtype=float)
    g = qpn.gradient(state.theta, x)
    state.contexts.append(x)
    state.rewards.append(float(reward))
    state.theta = qpn.train_qpn(state.training_start(), state.training_arrays(), cfg)
    return update_confidence(state, g)


# --- LinUCB (disjoint arms) ---------------------------------------------------

@dataclass
class LinUcbState:
    a_matrix: np.ndarray  # (M, d, d)
    b_vector: np.ndarray  # (M, d)
    alpha: float = 1.0

    @classmethod
    def create(cls, n_arms: int, n_features: int = qpn.N_FEATURES, alpha: float = 1.0) -> "LinUcbState":
        if n_arms < 1:
            raise ValueError("need at least one arm")
        if alpha < 0:
            raise ValueError("alpha must be nonnegative")
        return cls(np.stack([np.eye(n_features)] * n_arms), np.zeros((n_arms, n_features)), float(alpha))


def linucb_scores(state: LinUcbState, arms: np.ndarray) -> np.ndarray:
    arms = np.atleast_2d(np.asarray(arms, dtype=float))
    if arms.shape != state.b_vector.shape:
        raise ValueError(f"expected arm contexts of shape {state.b_vector.shape}, got {arms.shape}")
    scores = np.empty(len(arms))
    for m, x in enumerate(arms):
        a_inv = np.linalg.inv(state.a_matrix[m])
        theta_hat = a_inv @ state.b_vector[m]
        scores[m] = theta_hat @ x + state.alpha * np.sqrt(max(x @ a_inv @ x, 0.0))
    return scores


def linucb_select(state: LinUcbState, arms: np.ndarray) -> int:
    return int(np.argmax(linucb_scores(state, arms)))


def linucb_update(state: LinUcbState, arm: int, context: np.ndarray, reward: float) -> LinUcbState:
    x = np.asarray(context, dtype=float)
    state.a_matrix[arm] += np.outer(x, x)
    state.b_vector[arm] += reward * x
    return state


def random_select(rng: np.random.Generator, n_arms: int) -> int:
    if n_arms < 1:
        raise ValueError("need at least one arm")
    return int(rng.integers(n_arms))


def fixed_select(m_fixed: int, n_arms: int | None = None) -> int:
    if m_fixed < 0 or (n_arms is not None and m_fixed >= n_arms):
        raise ValueError(f"fixed arm {m_fixed} out of range")
    return m_fixed
