"""Convolutional LSTM cell against straight-line and high-precision oracles."""

import mpmath
import numpy as np
import pytest

from revcast import ops
from revcast import recurrent as rc
from revcast.ptree import wrap_leaves
from revcast.tape import Tape, backward, mse

from test_ops import naive_conv2d


def zero_cell(c_in: int, c_hidden: int, k: int = 3, forget_bias: float = 0.0,
              dtype=np.float64) -> rc.ConvLSTMParams:
    def kern(ci, bias):
        return ops.ConvKernel(np.zeros((c_hidden, ci, k, k), dtype),
                              np.full(c_hidden, bias, dtype))
    return rc.ConvLSTMParams(
        x_i=kern(c_in, 0.0), h_i=kern(c_hidden, 0.0),
        x_f=kern(c_in, forget_bias), h_f=kern(c_hidden, 0.0),
        x_o=kern(c_in, 0.0), h_o=kern(c_hidden, 0.0),
        x_c=kern(c_in, 0.0), h_c=kern(c_hidden, 0.0),
    )


def naive_convlstm_step(x, state, params):
    """Gate-by-gate reference using the loop-nest convolution oracle."""
    h, c = state

    def gate(kx, kh):
        return (naive_conv2d(x, kx.weights, kx.bias)
                + naive_conv2d(h, kh.weights, kh.bias))

    i = 1.0 / (1.0 + np.exp(-gate(params.x_i, params.h_i)))
    f = 1.0 / (1.0 + np.exp(-gate(params.x_f, params.h_f)))
    o = 1.0 / (1.0 + np.exp(-gate(params.x_o, params.h_o)))
    cand = np.tanh(gate(params.x_c, params.h_c))
    c_new = f * c + i * cand
    return o * np.tanh(c_new), c_new


def test_all_zero_step_stays_at_rest():
    params = zero_cell(2, 3)
    state = rc.zero_state((4, 4, 3), np.float64)
    x = np.zeros((4, 4, 2))
    h_new, c_new = rc.convlstm_step(x, state, params)
    assert np.array_equal(h_new, np.zeros((4, 4, 3)))
    assert np.array_equal(c_new, np.zeros((4, 4, 3)))


def test_forget_bias_frozen_value():
    # zero weights, forget bias 1, memory c = 1: every gate logit is 0 except
    # the forget gate's, so c' = sigmoid(1) and h' = 0.5 * tanh(sigmoid(1))
    mpmath.mp.dps = 50
    params = zero_cell(1, 1, forget_bias=1.0)
    state = rc.CellState(np.zeros((2, 2, 1)), np.ones((2, 2, 1)))
    h_new, c_new = rc.convlstm_step(np.zeros((2, 2, 1)), state, params)
    sig1 = 1 / (1 + mpmath.exp(-1))
    want_c = float(sig1)
    want_h = float(mpmath.mpf("0.5") * mpmath.tanh(sig1))
    assert np.allclose(c_new, want_c, rtol=0, atol=1e-15)
    assert np.allclose(h_new, want_h, rtol=0, atol=1e-15)
    assert abs(want_c - 0.7310585786300049) < 1e-15


def test_seeded_step_matches_gate_by_gate_oracle():
    rng = np.random.default_rng(0)
    params = rc.init_convlstm(rng, 2, 3, 3, dtype=np.float64)
    x = rng.normal(size=(5, 5, 2))
    state = rc.CellState(rng.normal(size=(5, 5, 3)) * 0.5,
                         rng.normal(size=(5, 5, 3)) * 0.5)
    h_new, c_new = rc.convlstm_step(x, state, params)
    want_h, want_c = naive_convlstm_step(x, state, params)
    np.testing.assert_allclose(h_new, want_h, atol=1e-6)
    np.testing.assert_allclose(c_new, want_c, atol=1e-6)


def test_hidden_output_is_strictly_inside_unit_interval():
    rng = np.random.default_rng(1)
    params = rc.init_convlstm(rng, 2, 4, 3, dtype=np.float64)
    state = rc.zero_state((6, 6, 4), np.float64)
    x = rng.normal(size=(6, 6, 2)) * 10.0
    for _ in range(5):
        state = rc.convlstm_step(x, state, params)
    assert np.all(np.abs(state.h) < 1.0)


def test_init_biases_and_determinism():
    p1 = rc.init_convlstm(np.random.default_rng(2), 2, 3, 3)
    p2 = rc.init_convlstm(np.random.default_rng(2), 2, 3, 3)
    assert np.all(p1.x_f.bias == 1.0)
    for name in ("x_i", "h_i", "h_f", "x_o", "h_o", "x_c", "h_c"):
        assert np.all(getattr(p1, name).bias == 0.0)
    assert p1.x_i.weights.shape == (3, 2, 3, 3)
    assert p1.h_i.weights.shape == (3, 3, 3, 3)
    assert np.array_equal(p1.x_c.weights, p2.x_c.weights)


def test_three_step_unrolled_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    raw = rc.init_convlstm(rng, 1, 2, 3, dtype=np.float64)
    xs = [rng.normal(size=(3, 3, 1)) * 0.5 for _ in range(3)]
    target = rng.normal(size=(3, 3, 2))

    def run(params):
        state = rc.CellState(np.zeros((3, 3, 2)), np.zeros((3, 3, 2)))
        for x in xs:
            state = rc.convlstm_step(x, state, params)
        return state

    t = Tape()
    params = wrap_leaves(raw)
    state = rc.CellState(t.source(np.zeros((3, 3, 2))), t.source(np.zeros((3, 3, 2))))
    for x in xs:
        state = rc.convlstm_step(t.source(x), state, params)
    loss = mse(state.h, target)
    backward(loss)

    for leaf_name in ("x_i", "h_f", "x_c", "h_c"):
        analytic_w = getattr(params, leaf_name).weights.grad
        analytic_b = getattr(params, leaf_name).bias.grad

        def loss_at_w(w, _name=leaf_name):
            kern = ops.ConvKernel(np.asarray(w), getattr(raw, _name).bias)
            probed = rc.ConvLSTMParams(**{
                f.name: (kern if f.name == _name else getattr(raw, f.name))
                for f in rc.ConvLSTMParams.__dataclass_fields__.values()
            })
            h = run(probed).h
            return float(np.mean((h - target) ** 2))

        def loss_at_b(b, _name=leaf_name):
            kern = ops.ConvKernel(getattr(raw, _name).weights, np.asarray(b))
            probed = rc.ConvLSTMParams(**{
                f.name: (kern if f.name == _name else getattr(raw, f.name))
                for f in rc.ConvLSTMParams.__dataclass_fields__.values()
            })
            h = run(probed).h
            return float(np.mean((h - target) ** 2))

        numeric_w = ops.finite_diff_grad(loss_at_w, getattr(raw, leaf_name).weights)
        numeric_b = ops.finite_diff_grad(loss_at_b, getattr(raw, leaf_name).bias)
        scale = max(float(np.max(np.abs(numeric_w))), 1e-12)
        assert float(np.max(np.abs(analytic_w - numeric_w))) / scale <= 1e-5
        np.testing.assert_allclose(analytic_b, numeric_b, rtol=1e-5, atol=1e-9)


def test_zero_state_shapes_and_dtype():
    st = rc.zero_state((2, 4, 4, 3), np.float32)
    assert st.h.shape == (2, 4, 4, 3) and st.c.shape == (2, 4, 4, 3)
    assert st.h.dtype == np.float32
    assert not st.h.any()
