"""Gated recurrent coupling units: frozen gate values, conditional inverses."""

import numpy as np
import pytest

from revcast import ops
from revcast import predictor as pr
from revcast.coupling import SplitPair
from revcast.recurrent import CellState, zero_state

from test_ops import naive_conv2d
from test_recurrent import zero_cell


def zero_attention(c: int, k: int = 3, bias_b: float = 0.0,
                   dtype=np.float64) -> pr.AttentionParams:
    return pr.AttentionParams(
        conv_a=ops.ConvKernel(np.zeros((c, c, k, k), dtype), np.zeros(c, dtype)),
        conv_b=ops.ConvKernel(np.zeros((c, c, k, k), dtype),
                              np.full(c, bias_b, dtype)),
    )


def zero_unit(c: int, updates: int, bias_b: float = 0.0) -> pr.RecurrentUnitParams:
    return pr.RecurrentUnitParams(cell=zero_cell(c, c), attention=zero_attention(c, bias_b=bias_b),
                                  updates=updates)


def test_zero_attention_gate_is_one_half():
    g = pr.attention_gate(np.zeros((4, 4, 2)), zero_attention(2))
    assert np.all(g == 0.5)


def test_large_logit_gate_clamps_at_documented_bound():
    # +40 logit saturates sigmoid to 1.0 in floats; the clamp pins it just below
    g = pr.attention_gate(np.zeros((4, 4, 2)), zero_attention(2, bias_b=40.0))
    assert np.all(g == pr.GATE_MAX)
    assert pr.GATE_MAX == 1.0 - 1e-6
    g_lo = pr.attention_gate(np.zeros((4, 4, 2)), zero_attention(2, bias_b=-40.0))
    assert np.all(g_lo == pr.GATE_MIN)


def test_attention_gate_matches_composed_oracle():
    rng = np.random.default_rng(0)
    params = pr.AttentionParams(
        conv_a=ops.init_kernel(rng, 3, 3, 3, 3, dtype=np.float64),
        conv_b=ops.init_kernel(rng, 3, 3, 3, 3, dtype=np.float64),
    )
    h = rng.normal(size=(5, 5, 3))
    hidden = np.maximum(naive_conv2d(h, params.conv_a.weights, params.conv_a.bias), 0.0)
    logits = naive_conv2d(hidden, params.conv_b.weights, params.conv_b.bias)
    want = np.clip(1.0 / (1.0 + np.exp(-logits)), pr.GATE_MIN, pr.GATE_MAX)
    np.testing.assert_allclose(pr.attention_gate(h, params), want, atol=1e-12)


def test_zero_unit_halves_the_updated_group_and_passes_the_other():
    rng = np.random.default_rng(1)
    g1 = rng.normal(size=(4, 4, 2))
    g2 = rng.normal(size=(4, 4, 2))
    unit = zero_unit(2, updates=2)
    out, state_new, gate = pr.unit_forward(SplitPair(g1, g2), zero_state((4, 4, 2), np.float64), unit)
    assert out.g1 is g1  # pass-through is the same object, bit-exact for free
    np.testing.assert_array_equal(out.g2, 0.5 * g2)  # h = 0, g = 0.5
    assert np.all(gate == 0.5)
    assert not state_new.h.any() and not state_new.c.any()


def test_zero_unit_inverse_doubles_back():
    rng = np.random.default_rng(2)
    g1 = rng.normal(size=(4, 4, 2))
    y2 = rng.normal(size=(4, 4, 2))
    unit = zero_unit(2, updates=2)
    back = pr.unit_inverse(SplitPair(g1, y2), zero_state((4, 4, 2), np.float64), unit)
    assert back.g1 is g1
    np.testing.assert_array_equal(back.g2, 2.0 * y2)  # (y - 0) / (1 - 0.5)


def test_single_unit_updates_g2_only():
    rng = np.random.default_rng(3)
    g1 = rng.normal(size=(4, 4, 2))
    g2 = rng.normal(size=(4, 4, 2))
    params = pr.GatedPredictor((zero_unit(2, updates=2),))
    states = pr.zero_states(params, (4, 4, 2), np.float64)
    out, _ = pr.predictor_forward(SplitPair(g1, g2), states, params)
    np.testing.assert_array_equal(out.g1, g1)
    np.testing.assert_array_equal(out.g2, 0.5 * g2)


def test_two_zero_units_halve_both_groups():
    rng = np.random.default_rng(4)
    g1 = rng.normal(size=(4, 4, 2))
    g2 = rng.normal(size=(4, 4, 2))
    params = pr.GatedPredictor((zero_unit(2, updates=2), zero_unit(2, updates=1)))
    states = pr.zero_states(params, (4, 4, 2), np.float64)
    out, new_states = pr.predictor_forward(SplitPair(g1, g2), states, params)
    np.testing.assert_array_equal(out.g1, 0.5 * g1)
    np.testing.assert_array_equal(out.g2, 0.5 * g2)
    assert len(new_states) == 2


def test_alternation_is_enforced():
    with pytest.raises(Exception) as err:
        pr.GatedPredictor((zero_unit(2, updates=2), zero_unit(2, updates=2)))
    assert "alternating" in str(err.value)


def test_unit_count_and_state_count_must_agree():
    params = pr.GatedPredictor((zero_unit(2, updates=2), zero_unit(2, updates=1)))
    with pytest.raises(Exception):
        pr.predictor_forward(SplitPair(np.zeros((4, 4, 2)), np.zeros((4, 4, 2))),
                             pr.zero_states(params, (4, 4, 2))[:1], params)


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-4), (np.float64, 1e-12)])
def test_seeded_unit_roundtrip(dtype, tol):
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params = pr.init_gated_predictor(rng, 2, 1, 3, dtype=dtype).units[0]
        pair = SplitPair(rng.uniform(-1, 1, size=(4, 4, 2)).astype(dtype),
                         rng.uniform(-1, 1, size=(4, 4, 2)).astype(dtype))
        state = CellState(rng.uniform(-0.5, 0.5, size=(4, 4, 2)).astype(dtype),
                          rng.uniform(-0.5, 0.5, size=(4, 4, 2)).astype(dtype))
        out, _, _ = pr.unit_forward(pair, state, params)
        back = pr.unit_inverse(out, state, params)
        err = max(float(np.max(np.abs(back.g1 - pair.g1))),
                  float(np.max(np.abs(back.g2 - pair.g2))))
        assert err <= tol, f"seed {seed}: {err}"


@pytest.mark.parametrize("dtype,tol", [(np.float32, 1e-3), (np.float64, 1e-10)])
def test_seeded_predictor_roundtrip_four_units(dtype, tol):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        params = pr.init_gated_predictor(rng, 2, 4, 3, dtype=dtype)
        pair = SplitPair(rng.uniform(-1, 1, size=(4, 4, 2)).astype(dtype),
                         rng.uniform(-1, 1, size=(4, 4, 2)).astype(dtype))
        states = tuple(CellState(rng.uniform(-0.5, 0.5, size=(4, 4, 2)).astype(dtype),
                                 rng.uniform(-0.5, 0.5, size=(4, 4, 2)).astype(dtype))
                       for _ in range(4))
        out, _ = pr.predictor_forward(pair, states, params)
        back = pr.predictor_inverse(out, states, params)
        err = max(float(np.max(np.abs(back.g1 - pair.g1))),
                  float(np.max(np.abs(back.g2 - pair.g2))))
        assert err <= tol, f"seed {seed}: {err}"


def test_init_alternates_starting_with_g2():
    params = pr.init_gated_predictor(np.random.default_rng(5), 2, 4, 3)
    assert [u.updates for u in params.units] == [2, 1, 2, 1]
    p2 = pr.init_gated_predictor(np.random.default_rng(5), 2, 4, 3)
    assert np.array_equal(params.units[3].attention.conv_b.weights,
                          p2.units[3].attention.conv_b.weights)
    with pytest.raises(Exception):
        pr.init_gated_predictor(np.random.default_rng(0), 2, 0, 3)


def test_stacked_baseline_runs_but_does_not_invert():
    rng = np.random.default_rng(6)
    params = pr.init_stacked_predictor(rng, 4, 2, 3, dtype=np.float64)
    pair = SplitPair(rng.normal(size=(4, 4, 2)), rng.normal(size=(4, 4, 2)))
    states = pr.zero_states(params, (4, 4, 2), np.float64)
    assert states[0].h.shape == (4, 4, 4)  # stacked cells see the merged pair
    out, new_states, gates = pr.predictor_forward_full(pair, states, params)
    assert out.g1.shape == (4, 4, 2)
    assert gates == ()
    assert len(new_states) == 2
    from revcast.errors import ConfigError
    with pytest.raises(ConfigError):
        pr.predictor_inverse(out, states, params)


def test_gated_zero_states_shapes():
    params = pr.init_gated_predictor(np.random.default_rng(7), 3, 2, 3)
    states = pr.zero_states(params, (5, 4, 4, 3))
    assert len(states) == 2
    assert states[0].h.shape == (5, 4, 4, 3)
    assert states[0].h.dtype == np.float32
