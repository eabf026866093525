"""Fused numba kernel for full-batch training of the default 4-layer QPN.

Activations are kept feature-major, (width, n_samples), so the innermost loops
run over contiguous samples. Matches ``qpn._train_numpy`` to rounding.
"""

import numba
import numpy as np

# no nnan/ninf: the non-finite loss check must survive optimization


@numba.njit(cache=True, fastmath={'reassoc', 'contract', 'nsz', 'arcp'})
def _dense(W, b, A, out, relu):
    h, d = W.shape
    n = A.shape[1]
    for i in range(h):
        for k in range(n):
            out[i, k] = b[i]
        for j in range(d):
            w = W[i, j]
            for k in range(n):
                out[i, k] += w * A[j, k]
        if relu:
            for k in range(n):
                if out[i, k] < 0.0:
                    out[i, k] = 0.0


@numba.njit(cache=True, fastmath={'reassoc', 'contract', 'nsz', 'arcp'})
def _backprop(W, delta, A, out):
    # out = (W.T @ delta) masked by the ReLU pattern of A
    h, d = W.shape
    n = delta.shape[1]
    out[:, :] = 0.0
    for i in range(h):
        for j in range(d):
            w = W[i, j]
            for k in range(n):
                out[j, k] += w * delta[i, k]
    for j in range(d):
        for k in range(n):
            if A[j, k] <= 0.0:
                out[j, k] = 0.0


@numba.njit(cache=True, fastmath={'reassoc', 'contract', 'nsz', 'arcp'})
def _descend(W, b, delta, A, lr):
    h, d = W.shape
    n = A.shape[1]
    for i in range(h):
        s = 0.0
        for k in range(n):
            s += delta[i, k]
        for j in range(d):
            acc = 0.0
            for k in range(n):
                acc += delta[i, k] * A[j, k]
            W[i, j] -= lr * acc
        b[i] -= lr * s


@numba.njit(cache=True, fastmath={'reassoc', 'contract', 'nsz', 'arcp'})
def train4(W1, b1, W2, b2, W3, b3, W4, b4, XT, y, lr, steps):
    """In-place gradient descent on sum((r_hat - y)^2); returns False on a non-finite loss."""
    n = XT.shape[1]
    A1 = np.empty((W1.shape[0], n))
    A2 = np.empty((W2.shape[0], n))
    A3 = np.empty((W3.shape[0], n))
    D1 = np.empty_like(A1)
    D2 = np.empty_like(A2)
    D3 = np.empty_like(A3)
    out = np.empty((1, n))
    for _ in range(steps):
        _dense(W1, b1, XT, A1, True)
        _dense(W2, b2, A1, A2, True)
        _dense(W3, b3, A2, A3, True)
        _dense(W4, b4, A3, out, False)
        for k in range(n):
            out[0, k] = 2.0 * (out[0, k] - y[k])
            if not np.isfinite(out[0, k]):
                return False
        _backprop(W4, out, A3, D3)
        _backprop(W3, D3, A2, D2)
        _backprop(W2, D2, A1, D1)
        _descend(W4, b4, out, A3, lr)
        _descend(W3, b3, D3, A2, lr)
        _descend(W2, b2, D2, A1, lr)
        _descend(W1, b1, D1, XT, lr)
    return True
