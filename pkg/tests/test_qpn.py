import math
import os
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from qoebandit import qpn, simenv
from qoebandit.qpn import TrainConfig


def _loop_forward(params, x):
    """Scalar-loop reference evaluation, no numpy broadcasting."""
    a = [float(v) for v in x]
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        out = []
        for row in range(w.shape[0]):
            s = float(b[row])
            for col in range(w.shape[1]):
                s += float(w[row, col]) * a[col]
            out.append(s if i == n_layers - 1 else max(s, 0.0))
        a = out
    return a[0]


def _random_context(rng):
    return rng.uniform(0.0, 1.0, size=qpn.N_FEATURES)


def _fd_gradient(params, x, h=1e-5):
    flat = qpn.flatten(params)
    g = np.empty_like(flat)
    for i in range(flat.size):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (qpn.forward(qpn.unflatten(up), x) - qpn.forward(qpn.unflatten(dn), x)) / (2 * h)
    return g


def test_param_count_is_353():
    assert qpn.num_params() == 56 + 8 + 128 + 16 + 128 + 8 + 8 + 1 == 353
    assert qpn.init_params(np.random.default_rng(0)).num_params == 353


def test_layer_shapes():
    p = qpn.init_params(np.random.default_rng(1))
    assert [w.shape for w in p.weights] == [(8, 7), (16, 8), (8, 16), (1, 8)]
    assert [b.shape for b in p.biases] == [(8,), (16,), (8,), (1,)]
    assert p.layer_sizes == qpn.LAYER_SIZES


def test_init_bounds():
    p = qpn.init_params(np.random.default_rng(2))
    for w, b in zip(p.weights, p.biases):
        bound = 1.0 / math.sqrt(w.shape[1])
        assert np.all(np.abs(w) <= bound) and np.all(np.abs(b) <= bound)


def test_zero_params_forward_is_zero():
    assert qpn.forward(qpn.zero_params(), np.full(7, 0.3)) == 0.0


def test_output_bias_only():
    p = qpn.zero_params()
    p.biases[-1][0] = 0.7
    for x in np.random.default_rng(3).uniform(size=(5, 7)):
        assert qpn.forward(p, x) == 0.7


def test_forward_matches_loop_reference():
    rng = np.random.default_rng(4)
    for _ in range(20):
        p = qpn.init_params(rng)
        x = _random_context(rng)
        assert qpn.forward(p, x) == pytest.approx(_loop_forward(p, x), abs=1e-12)


def test_predict_batch_matches_single():
    rng = np.random.default_rng(5)
    p = qpn.init_params(rng)
    X = rng.uniform(size=(9, 7))
    np.testing.assert_allclose(qpn.predict(p, X), [qpn.forward(p, x) for x in X], rtol=0, atol=1e-14)


def test_forward_rejects_bad_inputs():
    p = qpn.zero_params()
    with pytest.raises(ValueError):
        qpn.forward(p, np.zeros(6))
    with pytest.raises(ValueError):
        qpn.forward(p, np.array([0, 0, 0, np.nan, 0, 0, 0.0]))
    with pytest.raises(ValueError):
        qpn.forward(p, np.array([0, 0, 0, np.inf, 0, 0, 0.0]))


def test_dead_rectifier_gradient_is_output_bias_indicator():
    p = qpn.zero_params()
    p.biases[-1][0] = 1.3
    g = qpn.gradient(p, np.full(7, 0.5))
    expected = np.zeros(353)
    expected[-1] = 1.0
    np.testing.assert_array_equal(g, expected)


def test_gradient_finite_difference_100_cases():
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(100):
        p = qpn.init_params(rng)
        x = _random_context(rng)
        g = qpn.gradient(p, x)
        fd = _fd_gradient(p, x)
        rel = np.abs(g - fd) / np.maximum(np.abs(fd), 1e-3)
        worst = max(worst, float(rel.max()))
    assert worst <= 1e-4


def test_identical_contexts_identical_gradients():
    rng = np.random.default_rng(7)
    p = qpn.init_params(rng)
    x = _random_context(rng)
    np.testing.assert_array_equal(qpn.gradient(p, x), qpn.gradient(p, x.copy()))


def test_batch_gradients_rows_match_single():
    rng = np.random.default_rng(8)
    p = qpn.init_params(rng)
    X = rng.uniform(size=(4, 7))
    G = qpn.batch_gradients(p, X)
    for x, row in zip(X, G):
        np.testing.assert_allclose(row, qpn.gradient(p, x), atol=1e-15)


def test_loss_gradient_finite_difference():
    rng = np.random.default_rng(9)
    p = qpn.init_params(rng)
    X, y = rng.uniform(size=(6, 7)), rng.normal(size=6)
    g = qpn.loss_gradient(p, (X, y))
    flat = qpn.flatten(p)
    h = 1e-6
    for i in rng.choice(flat.size, 30, replace=False):
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        fd = (qpn.loss(qpn.unflatten(up), (X, y)) - qpn.loss(qpn.unflatten(dn), (X, y))) / (2 * h)
        assert g[i] == pytest.approx(fd, rel=1e-5, abs=1e-7)


@settings(max_examples=50, deadline=None)
@given(hnp.arrays(np.float64, 353, elements=st.floats(-1e6, 1e6, allow_nan=False)))
def test_flatten_unflatten_roundtrip(flat):
    np.testing.assert_array_equal(qpn.flatten(qpn.unflatten(flat)), flat)


def test_unflatten_rejects_wrong_length():
    with pytest.raises(ValueError):
        qpn.unflatten(np.zeros(352))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), hnp.arrays(np.float64, 7, elements=st.floats(0, 1)))
def test_forward_is_pure(seed, x):
    p = qpn.init_params(np.random.default_rng(seed))
    before = qpn.flatten(p).copy()
    assert qpn.forward(p, x) == qpn.forward(p, x)
    np.testing.assert_array_equal(qpn.flatten(p), before)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 30))
def test_zero_learning_rate_is_identity(seed, steps):
    rng = np.random.default_rng(seed)
    p = qpn.init_params(rng)
    data = (rng.uniform(size=(5, 7)), rng.normal(size=5))
    out = qpn.train_qpn(p, data, TrainConfig(0.0, steps))
    np.testing.assert_array_equal(qpn.flatten(out), qpn.flatten(p))


def test_single_sample_loss_does_not_increase():
    rng = np.random.default_rng(10)
    p = qpn.init_params(rng)
    data = [(_random_context(rng), 0.8)]
    out = qpn.train_qpn(p, data, TrainConfig(0.001, 100))
    assert qpn.loss(out, data) <= qpn.loss(p, data)


def _simulated_dataset(seed, n):
    rng = np.random.default_rng(seed)
    env = simenv.EnvConfig()
    profile = simenv.sample_user(rng, env)
    xs, ys = [], []
    for _ in range(n):
        ctx = simenv.sample_context(rng, env)
        dnn = env.catalog[int(rng.integers(3))]
        xs.append(simenv.encode_context(ctx, dnn))
        ys.append(simenv.qoe(profile, ctx, dnn, rng))
    return np.array(xs), np.array(ys)


def test_fifty_simulated_samples_loss_decreases():
    X, y = _simulated_dataset(11, 50)
    p = qpn.init_params(np.random.default_rng(11))
    out = qpn.train_qpn(p, (X, y), TrainConfig(0.01, 100))
    assert qpn.loss(out, (X, y)) < qpn.loss(p, (X, y))


def test_train_returns_new_params_and_leaves_input():
    X, y = _simulated_dataset(12, 20)
    p = qpn.init_params(np.random.default_rng(12))
    before = qpn.flatten(p).copy()
    out = qpn.train_qpn(p, (X, y), TrainConfig(0.003, 10))
    np.testing.assert_array_equal(qpn.flatten(p), before)
    assert not np.array_equal(qpn.flatten(out), before)


def test_train_matches_explicit_gradient_steps():
    # J steps of theta - eta * grad L, using the independently checked loss_gradient
    X, y = _simulated_dataset(13, 15)
    p = qpn.init_params(np.random.default_rng(13))
    flat = qpn.flatten(p)
    for _ in range(7):
        flat = flat - 0.002 * qpn.loss_gradient(qpn.unflatten(flat), (X, y))
    out = qpn.train_qpn(p, (X, y), TrainConfig(0.002, 7))
    np.testing.assert_allclose(qpn.flatten(out), flat, atol=1e-12)


def test_train_runs_exactly_j_steps():
    X, y = _simulated_dataset(14, 10)
    p = qpn.init_params(np.random.default_rng(14))
    one = qpn.train_qpn(p, (X, y), TrainConfig(0.002, 1))
    step = qpn.flatten(p) - 0.002 * qpn.loss_gradient(p, (X, y))
    np.testing.assert_allclose(qpn.flatten(one), step, atol=1e-14)


def test_numpy_and_compiled_paths_agree():
    if qpn._fastqpn is None:
        pytest.skip("numba not installed")
    X, y = _simulated_dataset(15, 120)
    p = qpn.init_params(np.random.default_rng(15))
    fast = p.copy()
    slow = p.copy()
    assert qpn._train_fast(fast, X, y, 0.003, 100)
    assert qpn._train_numpy(slow, X, y, 0.003, 100)
    np.testing.assert_allclose(qpn.flatten(fast), qpn.flatten(slow), rtol=0, atol=1e-10)


def test_empty_dataset_warns_and_returns_copy():
    p = qpn.init_params(np.random.default_rng(16))
    with pytest.warns(RuntimeWarning):
        out = qpn.train_qpn(p, [], TrainConfig())
    np.testing.assert_array_equal(qpn.flatten(out), qpn.flatten(p))
    assert out is not p


def test_divergence_raises():
    X, y = _simulated_dataset(17, 200)
    p = qpn.init_params(np.random.default_rng(17))
    with pytest.raises(qpn.TrainingDiverged):
        qpn.train_qpn(p, (X, y * 100), TrainConfig(10.0, 200))


def test_non_finite_reward_rejected():
    with pytest.raises(ValueError):
        qpn.train_qpn(qpn.zero_params(), [(np.zeros(7), float("nan"))])


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(-0.1, 10)
    with pytest.raises(ValueError):
        TrainConfig(0.01, 0)


def test_dataset_accepts_pairs_or_arrays():
    X, y = _simulated_dataset(18, 8)
    p = qpn.init_params(np.random.default_rng(18))
    a = qpn.train_qpn(p, (X, y), TrainConfig(0.003, 5))
    b = qpn.train_qpn(p, list(zip(X, y)), TrainConfig(0.003, 5))
    np.testing.assert_array_equal(qpn.flatten(a), qpn.flatten(b))


def test_param_dump_roundtrip(tmp_path):
    p = qpn.init_params(np.random.default_rng(19))
    path = tmp_path / "theta.qpn"
    qpn.save_params(p, path)
    q = qpn.load_params(path)
    np.testing.assert_array_equal(qpn.flatten(q), qpn.flatten(p))
    assert os.path.getsize(path) == 4 + 4 + 5 * 4 + 8 * 353


def test_param_dump_layout():
    p = qpn.unflatten(np.arange(353, dtype=float))
    data = qpn.params_to_bytes(p)
    assert data[:4] == b"QPN1"
    header = np.frombuffer(data, dtype="<u4", count=6, offset=4)
    assert header.tolist() == [4, 7, 8, 16, 8, 1]
    body = np.frombuffer(data, dtype="<f8", offset=28)
    # row-major weights then bias, layer by layer, equals the flatten order
    np.testing.assert_array_equal(body, np.arange(353))
    assert body[56:64].tolist() == p.biases[0].tolist()


def test_param_dump_rejects_garbage():
    with pytest.raises(ValueError):
        qpn.params_from_bytes(b"XXXX" + bytes(40))
    good = qpn.params_to_bytes(qpn.zero_params())
    with pytest.raises(ValueError):
        qpn.params_from_bytes(good[:-8])


def test_no_warnings_on_normal_training():
    X, y = _simulated_dataset(20, 30)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        qpn.train_qpn(qpn.init_params(np.random.default_rng(20)), (X, y), TrainConfig(0.003, 20))
