import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import conv_relu_pool_loop, lstm_scalar
from hdd.neural import (
    AdamConfig,
    LstmParams,
    NonFiniteError,
    ParamStore,
    ShapeError,
    conv1d_relu_pool,
    conv1d_relu_pool_backward,
    conv1d_relu_pool_forward,
    dense_apply,
    dense_backward,
    gradient_check,
    load_checkpoint,
    loss,
    lstm_backward,
    lstm_cell_step,
    lstm_forward,
    optimizer_step,
    save_checkpoint,
)
from hdd.neural.layers import bce_with_logits, mse_with_grad


# -- gradient-check harnesses for single layers -----------------------------------------
def dense_problem(seed, n=4, d_in=5, d_out=3):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("W", rng.normal(size=(d_out, d_in)))
    store.add("b", rng.normal(size=d_out))
    x, y = rng.normal(size=(n, d_in)), rng.normal(size=(n, d_out))

    def f():
        out = dense_apply(store["W"], store["b"], x)
        value, dout = mse_with_grad(out, y)
        dW, db, _ = dense_backward(dout, store["W"], x)
        store.grads["W"][...] = dW
        store.grads["b"][...] = db
        return value
    return store, f


def conv_problem(seed, n=3, length=17, nf=3, k=5, pool=4):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("K", rng.normal(size=(nf, k)))
    store.add("b", rng.normal(size=nf) * 0.1)
    x = rng.normal(size=(n, length))
    probe = rng.normal(size=(n, nf, -(-(length - k + 1) // pool)))

    def f():
        out, cache = conv1d_relu_pool_forward(store["K"], store["b"], x, pool)
        dK, db, _ = conv1d_relu_pool_backward(probe, cache, pool)
        store.grads["K"][...] = dK
        store.grads["b"][...] = db
        return float(np.sum(out * probe))
    return store, f


def lstm_problem(seed, n=3, steps=4, d_in=3, hidden=4):
    rng = np.random.default_rng(seed)
    store = ParamStore()
    store.add("W", rng.normal(size=(4 * hidden, d_in)) * 0.5)
    store.add("U", rng.normal(size=(4 * hidden, hidden)) * 0.5)
    store.add("b", rng.normal(size=4 * hidden) * 0.1)
    xs = rng.normal(size=(n, steps, d_in))
    probe = rng.normal(size=(n, hidden))

    def f():
        p = LstmParams(store["W"], store["U"], store["b"])
        h, caches = lstm_forward(p, xs)
        _, dW, dU, db = lstm_backward(p, probe, caches)
        store.grads["W"][...] = dW
        store.grads["U"][...] = dU
        store.grads["b"][...] = db
        return float(np.sum(h * probe))
    return store, f


# -- dense ---------------------------------------------------------------------------------
def test_dense_examples():
    x = np.array([1.0, -2.0, 3.0])
    assert (dense_apply(np.eye(3), np.zeros(3), x) == x).all()
    assert (dense_apply(np.zeros((2, 3)), np.array([4.0, 5.0]), x) == [4.0, 5.0]).all()
    assert dense_apply(np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros(2), np.ones(2)).tolist() == [3.0, 7.0]
    with pytest.raises(ShapeError):
        dense_apply(np.eye(3), np.zeros(3), np.ones(2))


# -- LSTM ------------------------------------------------------------------------------------
def scalar_params(w=0.0, u=0.0, b=0.0):
    g = {f"{k}_{z}": v for k, v in (("W", w), ("U", u), ("b", b)) for z in "ifco"}
    return LstmParams.from_gates(**g)


def test_lstm_zero_params_give_zero_state():
    h, c = lstm_cell_step(scalar_params(), np.array([3.0]), np.array([0.0]), np.array([0.0]))
    assert h.tolist() == [0.0] and c.tolist() == [0.0]


def test_lstm_hand_example():
    h, c = lstm_cell_step(scalar_params(w=1.0), np.array([0.0]), np.array([0.0]), np.array([2.0]))
    assert abs(c[0] - 1.0) < 1e-15
    assert abs(h[0] - 0.5 * math.tanh(1.0)) < 1e-12
    assert abs(h[0] - 0.38079) < 1e-5


def test_lstm_saturating_input():
    h, c = lstm_cell_step(scalar_params(w=1.0), np.array([50.0]), np.array([0.0]), np.array([2.0]))
    assert abs(c[0] - 3.0) < 1e-12 and abs(h[0] - math.tanh(3.0)) < 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=15, max_size=15))
def test_lstm_matches_scalar_oracle(v):
    *ws, x, h0, c0 = v
    wi, wf, wc, wo, ui, uf, uc, uo, bi, bf, bc, bo = ws
    p = LstmParams.from_gates(W_i=wi, W_f=wf, W_c=wc, W_o=wo, U_i=ui, U_f=uf, U_c=uc, U_o=uo,
                              b_i=bi, b_f=bf, b_c=bc, b_o=bo)
    h, c = lstm_cell_step(p, np.array([x]), np.array([h0]), np.array([c0]))
    eh, ec = lstm_scalar(*ws, x, h0, c0)
    assert abs(h[0] - eh) < 1e-12 and abs(c[0] - ec) < 1e-12


def test_lstm_gate_views():
    p = LstmParams(np.arange(8.0).reshape(8, 1), np.zeros((8, 2)), np.zeros(8))
    assert p.W_i.ravel().tolist() == [0, 1] and p.W_o.ravel().tolist() == [6, 7]
    with pytest.raises(ShapeError):
        LstmParams(np.zeros((8, 1)), np.zeros((8, 3)), np.zeros(8))


def test_lstm_nonfinite_state():
    with pytest.raises(NonFiniteError):
        lstm_cell_step(scalar_params(w=1.0), np.array([np.nan]), np.array([0.0]), np.array([0.0]))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_lstm_gate_ranges(seed):
    rng = np.random.default_rng(seed)
    p = LstmParams(rng.normal(size=(12, 2)) * 3, rng.normal(size=(12, 3)) * 3, rng.normal(size=12))
    _, caches = lstm_forward(p, rng.normal(size=(4, 5, 2)) * 3)
    # closed bounds: large pre-activations round to exactly 0 or 1 in float64
    for _, _, _, i, f, g, o, _ in caches:
        for gate in (i, f, o):
            assert ((gate >= 0) & (gate <= 1)).all()
        assert (np.abs(g) <= 1).all()


def test_lstm_forward_is_deterministic():
    rng = np.random.default_rng(0)
    p = LstmParams(rng.normal(size=(8, 3)), rng.normal(size=(8, 2)), rng.normal(size=8))
    xs = rng.normal(size=(2, 4, 3))
    assert lstm_forward(p, xs)[0].tobytes() == lstm_forward(p, xs)[0].tobytes()


# -- conv -------------------------------------------------------------------------------------
def test_conv_averaging_kernel_on_constant():
    out = conv1d_relu_pool(np.full((1, 5), 0.2), np.zeros(1), np.full(12, 3.0))
    assert np.allclose(out, 3.0) and out.shape == (1, 2)


def test_conv_all_negative_is_zero():
    out = conv1d_relu_pool(np.ones((2, 5)), np.array([-100.0, -1.0]), -np.abs(np.arange(9.0)))
    assert not out.any()


def test_conv_identity_kernel_gives_pooled_maxima():
    x = np.array([1.0, -3, 2, 5, -1, 0, 4, 4, -2, 7, 1])
    out = conv1d_relu_pool(np.array([[1.0, 0, 0, 0, 0]]), np.zeros(1), x)
    relu = np.maximum(x[:7], 0)
    assert out[0].tolist() == [relu[0:4].max(), relu[4:7].max()]


def test_conv_short_input():
    with pytest.raises(ShapeError):
        conv1d_relu_pool(np.ones((1, 5)), np.zeros(1), np.ones(4))


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 64), st.integers(1, 4), st.integers(1, 6), st.integers(0, 10_000))
def test_conv_matches_loop_oracle(length, nf, pool, seed):
    rng = np.random.default_rng(seed)
    K, b, x = rng.normal(size=(nf, 5)), rng.normal(size=nf), rng.normal(size=length)
    got = conv1d_relu_pool(K, b, x, pool)
    want = conv_relu_pool_loop(K.tolist(), b.tolist(), x.tolist(), pool)
    assert np.abs(got - np.array(want)).max() < 1e-12


# -- losses ----------------------------------------------------------------------------------
def test_loss_examples():
    assert loss([1.0, 2.0], [1.0, 2.0], "mse") == 0.0
    assert loss([0.0, 2.0], [1.0, 1.0], "mse") == 1.0
    assert abs(loss([0.5], [1.0], "bce") - math.log(2)) < 1e-15
    with pytest.raises(ValueError):
        loss([1.0], [1.0], "bce")
    with pytest.raises(ShapeError):
        loss([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        loss([0.5], [1.0], "hinge")


def test_bce_with_logits_matches_probability_form():
    z = np.array([-3.0, 0.2, 4.0])
    t = np.array([0.0, 1.0, 1.0])
    value, grad = bce_with_logits(z, t)
    p = 1 / (1 + np.exp(-z))
    assert abs(value - loss(p, t, "bce")) < 1e-12
    assert np.allclose(grad, (p - t) / 3)
    assert np.isfinite(bce_with_logits(np.array([800.0, -800.0]), np.array([0.0, 1.0]))[0])


def test_zero_loss_gives_zero_gradients():
    store = ParamStore()
    store.add("W", np.array([[2.0, -1.0]]))
    x = np.array([[1.0, 1.0], [0.5, 2.0]])
    y = x @ store["W"].T
    value, dout = mse_with_grad(x @ store["W"].T, y)
    dW, _, _ = dense_backward(dout, store["W"], x)
    assert value == 0.0 and not dW.any()


def test_duplicated_sample_keeps_mean_gradient():
    rng = np.random.default_rng(1)
    W, x, y = rng.normal(size=(1, 3)), rng.normal(size=(1, 3)), rng.normal(size=(1, 1))
    _, d1 = mse_with_grad(x @ W.T, y)
    _, d2 = mse_with_grad(np.repeat(x, 2, 0) @ W.T, np.repeat(y, 2, 0))
    g1 = dense_backward(d1, W, x)[0]
    g2 = dense_backward(d2, W, np.repeat(x, 2, 0))[0]
    assert np.allclose(g1, g2, rtol=0, atol=1e-15)


# -- gradient checks ---------------------------------------------------------------------------
@pytest.mark.parametrize("problem", [dense_problem, conv_problem, lstm_problem])
@pytest.mark.parametrize("seed", range(5))
def test_layer_gradients(problem, seed):
    store, f = problem(seed)
    assert gradient_check(f, store) < 1e-4


def test_linear_quadratic_is_near_exact():
    store, f = dense_problem(3)
    assert gradient_check(f, store) < 1e-8


def test_checker_detects_corruption():
    store, f = dense_problem(0)

    def corrupted():
        value = f()
        store.grads["W"][0, 0] += 0.5
        return value
    assert gradient_check(corrupted, store) > 1e-2


def test_check_grads_names_parameter():
    store = ParamStore()
    store.add("layer.W", np.zeros(2))
    store.grads["layer.W"][1] = np.inf
    with pytest.raises(FloatingPointError, match="layer.W"):
        store.check_grads()


# -- optimizer -------------------------------------------------------------------------------------
def test_adam_zero_gradient_is_fixed_point():
    store = ParamStore()
    store.add("w", np.array([1.0, -2.0]))
    optimizer_step(store)
    assert store["w"].tolist() == [1.0, -2.0] and store.step == 1


def test_adam_first_step():
    store = ParamStore()
    store.add("w", np.array([0.0]))
    store.grads["w"][0] = 1.0
    optimizer_step(store, AdamConfig(lr=0.1))
    assert abs(store["w"][0] + 0.1) < 1e-6


def test_adam_deterministic_trajectory():
    def run():
        store = ParamStore()
        store.add("w", np.array([0.3, -0.7]))
        for k in range(20):
            store.grads["w"][...] = np.sin(store["w"] * (k + 1))
            optimizer_step(store)
        return store["w"].tobytes()
    assert run() == run()


def test_duplicate_parameter_name():
    store = ParamStore()
    store.add("w", [1.0])
    with pytest.raises(KeyError):
        store.add("w", [2.0])


# -- checkpoints ----------------------------------------------------------------------------------
def test_checkpoint_roundtrip(tmp_path):
    store = ParamStore()
    store.add("a", np.arange(6.0).reshape(2, 3))
    store.add("b.c", np.array([np.pi]))
    store.add("s", np.float64(2.5))
    save_checkpoint(store, tmp_path / "w.hddw")
    raw = (tmp_path / "w.hddw").read_bytes()
    assert raw.startswith(b"HDDW1\n")
    back = load_checkpoint(tmp_path / "w.hddw")
    assert list(back) == ["a", "b.c", "s"]
    for k in back:
        assert back[k].shape == store[k].shape and (back[k] == store[k]).all()


def test_checkpoint_bad_magic(tmp_path):
    (tmp_path / "x").write_bytes(b"nope")
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path / "x")
