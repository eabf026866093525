"""QoE predicting network: a small fully-connected regressor in plain numpy.

Hidden layers use ReLU, the output layer is linear. Weights are stored as
``(fan_out, fan_in)`` matrices so that a layer computes ``W @ a + b``.
The flat parameter order is, per layer, the row-major weight matrix followed
by the bias vector.
"""

from __future__ import annotations

import os
import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np

try:
    from . import _fastqpn
except ImportError:  # numba not installed
    _fastqpn = None

if os.environ.get("QOEBANDIT_NO_NUMBA"):
    _fastqpn = None

LAYER_SIZES = (7, 8, 16, 8, 1)
N_FEATURES = LAYER_SIZES[0]


class TrainingDiverged(FloatingPointError):
    """Raised when the training loss becomes non-finite (learning rate too large)."""


@dataclass
class QpnParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def num_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "QpnParams":
        return QpnParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    steps: int = 100

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ValueError(f"learning_rate must be nonnegative, got {self.learning_rate}")
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")


def num_params(sizes: Sequence[int] = LAYER_SIZES) -> int:
    return sum(n_out * n_in + n_out for n_in, n_out in zip(sizes[:-1], sizes[1:]))


def init_params(rng: np.random.Generator, sizes: Sequence[int] = LAYER_SIZES) -> QpnParams:
    """Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases."""
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(n_in)
        weights.append(rng.uniform(-bound, bound, size=(n_out, n_in)))
        biases.append(rng.uniform(-bound, bound, size=n_out))
    return QpnParams(weights, biases)


def zero_params(sizes: Sequence[int] = LAYER_SIZES) -> QpnParams:
    return QpnParams(
        [np.zeros((n_out, n_in)) for n_in, n_out in zip(sizes[:-1], sizes[1:])],
        [np.zeros(n_out) for n_out in sizes[1:]],
    )


def flatten(params: QpnParams) -> np.ndarray:
    parts = []
    for w, b in zip(params.weights, params.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def unflatten(flat: np.ndarray, sizes: Sequence[int] = LAYER_SIZES) -> QpnParams:
    flat = np.asarray(flat, dtype=float)
    if flat.shape != (num_params(sizes),):
        raise ValueError(f"expected {num_params(sizes)} parameters, got shape {flat.shape}")
    weights, biases = [], []
    pos = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[pos:pos + n_out * n_in].reshape(n_out, n_in).copy())
        pos += n_out * n_in
        biases.append(flat[pos:pos + n_out].copy())
        pos += n_out
    return QpnParams(weights, biases)


def _check_inputs(params: QpnParams, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    n_in = params.weights[0].shape[1]
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n_in:
        raise ValueError(f"expected contexts with {n_in} features, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("context contains non-finite values")
    return X


def _forward_cache(params: QpnParams, X: np.ndarray):
    # pre-activations of hidden layers and the activations feeding each layer
    acts = [X]
    pre = []
    a = X
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = a @ w.T + b
        if i == last:
            return z[:, 0], acts, pre
        pre.append(z)
        a = np.maximum(z, 0.0)
        acts.append(a)


def predict(params: QpnParams, X: np.ndarray) -> np.ndarray:
    """Predicted QoE for each row of ``X``."""
    X = _check_inputs(params, X)
    return _forward_cache(params, X)[0]


def forward(params: QpnParams, x: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"forward expects a single context vector, got shape {x.shape}")
    return float(predict(params, x)[0])


def _backward(params: QpnParams, acts, pre, delta: np.ndarray):
    """Per-layer (dW, db) lists for upstream output gradient ``delta`` of shape (n, 1)."""
    n_layers = len(params.weights)
    dws = [None] * n_layers
    dbs = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        dws[i] = delta.T @ acts[i]
        dbs[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * (pre[i - 1] > 0)
    return dws, dbs


def batch_gradients(params: QpnParams, X: np.ndarray) -> np.ndarray:
    """Rows are d r_hat(x_i) / d theta, flattened in ``flatten`` order."""
    X = _check_inputs(params, X)
    _, acts, pre = _forward_cache(params, X)
    n = X.shape[0]
    n_layers = len(params.weights)
    blocks = [None] * (2 * n_layers)
    delta = np.ones((n, 1))
    for i in range(n_layers - 1, -1, -1):
        # per-sample outer products, kept separate rather than summed over the batch
        blocks[2 * i] = (delta[:, :, None] * acts[i][:, None, :]).reshape(n, -1)
        blocks[2 * i + 1] = delta
        if i > 0:
            delta = (delta @ params.weights[i]) * (pre[i - 1] > 0)
    return np.concatenate(blocks, axis=1)


def gradient(params: QpnParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"gradient expects a single context vector, got shape {x.shape}")
    return batch_gradients(params, x)[0]


def as_arrays(dataset) -> tuple[np.ndarray, np.ndarray]:
    """Accept ``(X, y)`` arrays or a sequence of ``(context, reward)`` pairs."""
    if isinstance(dataset, tuple) and len(dataset) == 2 and isinstance(dataset[0], np.ndarray) \
            and np.ndim(dataset[0]) == 2:
        X, y = dataset
    elif len(dataset) == 0:
        return np.empty((0, N_FEATURES)), np.empty(0)
    else:
        X = np.array([np.asarray(x, dtype=float) for x, _ in dataset])
        y = np.array([float(r) for _, r in dataset])
    return np.asarray(X, dtype=float), np.asarray(y, dtype=float)


def loss(params: QpnParams, dataset) -> float:
    """Summed squared error over the dataset."""
    X, y = as_arrays(dataset)
    if len(y) == 0:
        return 0.0
    resid = predict(params, X) - y
    return float(resid @ resid)


def loss_gradient(params: QpnParams, dataset) -> np.ndarray:
    X, y = as_arrays(dataset)
    X = _check_inputs(params, X)
    out, acts, pre = _forward_cache(params, X)
    dws, dbs = _backward(params, acts, pre, (2.0 * (out - y))[:, None])
    return np.concatenate([np.concatenate([dw.ravel(), db]) for dw, db in zip(dws, dbs)])


def _train_numpy(new: QpnParams, X: np.ndarray, y: np.ndarray, lr: float, steps: int) -> bool:
    ws, bs = new.weights, new.biases
    n_layers = len(ws)
    for _ in range(steps):
        acts = [X]
        pre = []
        a = X
        for i in range(n_layers - 1):
            z = a @ ws[i].T + bs[i]
            pre.append(z)
            a = np.maximum(z, 0.0)
            acts.append(a)
        out = (a @ ws[-1].T)[:, 0] + bs[-1][0]
        delta = (2.0 * (out - y))[:, None]
        if not np.all(np.isfinite(delta)):
            return False
        # the upstream delta uses W_i before W_i is stepped
        for i in range(n_layers - 1, -1, -1):
            dw = delta.T @ acts[i]
            db = delta.sum(axis=0)
            if i > 0:
                delta = np.where(pre[i - 1] > 0, delta @ ws[i], 0.0)
            ws[i] -= lr * dw
            bs[i] -= lr * db
    return True


def _train_fast(new: QpnParams, X: np.ndarray, y: np.ndarray, lr: float, steps: int) -> bool:
    flat_args = [a for pair in zip(new.weights, new.biases) for a in pair]
    return _fastqpn.train4(*flat_args, np.ascontiguousarray(X.T), np.ascontiguousarray(y), lr, steps)


def train_qpn(params: QpnParams, dataset, cfg: TrainConfig = TrainConfig()) -> QpnParams:
    """Full-batch gradient descent on the summed squared error, starting from ``params``.

    Runs ``cfg.steps`` updates and returns new parameters; the input is left untouched.
    """
    X, y = as_arrays(dataset)
    if len(y) == 0:
        warnings.warn("train_qpn called with an empty dataset; parameters unchanged", RuntimeWarning)
        return params.copy()
    X = _check_inputs(params, X)
    if not np.all(np.isfinite(y)):
        raise ValueError("rewards must be finite")
    new = params.copy()
    if cfg.learning_rate == 0.0:
        return new
    use_fast = _fastqpn is not None and len(new.weights) == 4
    ok = (_train_fast if use_fast else _train_numpy)(new, X, y, cfg.learning_rate, cfg.steps)
    if not ok or not np.all(np.isfinite(predict(new, X))):
        raise TrainingDiverged(
            f"non-finite training loss; learning rate {cfg.learning_rate} is too large for this dataset")
    return new


# --- portable parameter dump ---------------------------------------------------
# Little-endian layout: 4-byte magic b"QPN1"; uint32 layer count L; L+1 uint32
# layer widths (input first); then for each layer the float64 weight matrix in
# row-major (fan_out, fan_in) order followed by its float64 bias vector.

_MAGIC = b"QPN1"


def params_to_bytes(params: QpnParams) -> bytes:
    sizes = params.layer_sizes
    header = _MAGIC + np.array([len(sizes) - 1, *sizes], dtype="<u4").tobytes()
    body = b"".join(
        np.ascontiguousarray(w, dtype="<f8").tobytes() + np.asarray(b, dtype="<f8").tobytes()
        for w, b in zip(params.weights, params.biases)
    )
    return header + body


def params_from_bytes(data: bytes) -> QpnParams:
    if data[:4] != _MAGIC:
        raise ValueError("not a QPN parameter dump (bad magic)")
    n_layers = int(np.frombuffer(data, dtype="<u4", count=1, offset=4)[0])
    sizes = tuple(int(s) for s in np.frombuffer(data, dtype="<u4", count=n_layers + 1, offset=8))
    offset = 8 + 4 * (n_layers + 1)
    expected = offset + 8 * num_params(sizes)
    if len(data) != expected:
        raise ValueError(f"parameter dump has {len(data)} bytes, expected {expected}")
    flat = np.frombuffer(data, dtype="<f8", offset=offset).astype(float)
    return unflatten(flat, sizes)


def save_params(params: QpnParams, path) -> None:
    with open(path, "wb") as fh:
        fh.write(params_to_bytes(params))


def load_params(path) -> QpnParams:
    with open(path, "rb") as fh:
        return params_from_bytes(fh.read())
