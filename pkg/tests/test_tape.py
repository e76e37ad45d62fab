"""Recording tape, leaf fall-through, and activation-storage accounting."""

import numpy as np
import pytest

from revcast import tape as tp
from revcast.errors import ShapeError


def test_leaf_only_ops_are_not_recorded_and_return_plain_arrays():
    # parameters are leaves (tape=None); math on leaves and raw arrays must
    # fall through to the raw kernels without creating nodes
    a = tp.Var(np.ones((2, 2)))
    b = np.full((2, 2), 3.0)
    out = tp.add(a, b)
    assert isinstance(out, np.ndarray)
    assert np.array_equal(out, np.full((2, 2), 4.0))
    out2 = tp.mul(a, tp.Var(b))
    assert isinstance(out2, np.ndarray)


def test_sourced_inputs_record_and_backward_accumulates():
    t = tp.Tape()
    x = t.source(np.array([1.0, 2.0, 3.0]))
    y = tp.add(tp.mul(x, x), x)  # x^2 + x, x used three times
    assert isinstance(y, tp.Var)
    assert len(t.nodes) == 2
    tp.backward(y, seed=np.ones(3))
    np.testing.assert_allclose(x.grad, 2.0 * np.array([1.0, 2.0, 3.0]) + 1.0)
    assert not t.nodes  # consumed


def test_mixed_leaf_and_sourced_ops_record_once():
    t = tp.Tape()
    w = tp.Var(np.full((3,), 2.0), name="w")  # leaf parameter
    x = t.source(np.array([1.0, 2.0, 3.0]))
    y = tp.mul(x, w)
    tp.backward(y, seed=np.ones(3))
    np.testing.assert_allclose(x.grad, [2.0, 2.0, 2.0])
    np.testing.assert_allclose(w.grad, [1.0, 2.0, 3.0])


def test_backward_requires_taped_root():
    with pytest.raises(ValueError):
        tp.backward(tp.Var(np.ones(1)))


def test_mse_scalar_root_backward():
    t = tp.Tape()
    pred = t.source(np.array([[0.3, 0.5]]))
    target = np.array([[0.1, 0.9]])
    loss = tp.mse(pred, target)
    assert loss.value.shape == ()
    tp.backward(loss)
    np.testing.assert_allclose(pred.grad, 2.0 * (pred.value - target) / 2.0)
    with pytest.raises(ValueError):
        tp.mse(np.ones((2, 2)), np.ones((2, 3)))


def test_conv2d_wrapper_routes_gradients_to_leaf_parameters():
    rng = np.random.default_rng(0)
    t = tp.Tape()
    x = t.source(rng.normal(size=(4, 4, 2)))
    w = tp.Var(rng.normal(size=(2, 2, 3, 3)))
    b = tp.Var(rng.normal(size=2))
    out = tp.conv2d(x, w, b)
    loss = tp.mse(out, np.zeros(out.value.shape))
    tp.backward(loss)
    assert x.grad.shape == (4, 4, 2)
    assert w.grad.shape == (2, 2, 3, 3)
    # bias grad equals the summed output cotangent per channel
    np.testing.assert_allclose(b.grad, (2.0 * out.value / out.value.size).sum(axis=(0, 1)))


def test_split_concat_roundtrip_and_gradients():
    rng = np.random.default_rng(1)
    t = tp.Tape()
    x = t.source(rng.normal(size=(2, 2, 4)))
    lo, hi = tp.split2(x)
    assert np.array_equal(np.concatenate([lo.value, hi.value], -1), x.value)
    joined = tp.concat2(lo, hi)
    loss = tp.mse(joined, np.zeros((2, 2, 4)))
    tp.backward(loss)
    np.testing.assert_allclose(x.grad, 2.0 * x.value / x.value.size)
    with pytest.raises(ValueError):
        tp.split2(np.ones((2, 2, 3)))


def test_split_with_one_dead_branch_fills_zero_cotangent():
    t = tp.Tape()
    x = t.source(np.arange(8.0).reshape(2, 2, 2))
    lo, hi = tp.split2(x)
    loss = tp.mse(lo, np.zeros((2, 2, 1)))  # hi never used
    tp.backward(loss)
    assert x.grad is not None
    assert np.all(x.grad[..., 1] == 0.0)


def test_dead_nodes_are_skipped_but_state_is_cleared():
    t = tp.Tape(ledger=tp.MemoryLedger())
    x = t.source(np.ones((2, 2)))
    dead = tp.relu(x)  # recorded, never contributes to the root
    live = tp.mul(x, x)
    tp.backward(live, seed=np.ones((2, 2)))
    assert t.ledger.snapshot()["current_total"] == 0
    assert dead.grad is None
    np.testing.assert_allclose(x.grad, 2.0 * np.ones((2, 2)))


# ---------------------------------------------------------------------------
# ledger accounting


def test_ledger_alloc_free_and_peaks():
    led = tp.MemoryLedger()
    led.alloc("coupling", 10)
    led.alloc("coupling", 6)
    led.alloc("state", 4)
    led.free("coupling", 12)
    snap = led.snapshot()
    assert snap["peak"]["coupling"] == 16
    assert snap["current"]["coupling"] == 4
    assert snap["peak_total"] == 20
    assert snap["current_total"] == 8
    led.reset()
    assert led.snapshot() == {"peak": {}, "current": {}, "peak_total": 0, "current_total": 0}


def test_ledger_underflow_raises():
    led = tp.MemoryLedger()
    led.alloc("gate", 3)
    with pytest.raises(RuntimeError):
        led.free("gate", 4)
    with pytest.raises(RuntimeError):
        led.free("boundary", 1)


def test_record_books_counts_under_active_region():
    led = tp.MemoryLedger()
    t = tp.Tape(ledger=led, region="other")
    x = t.source(np.ones((2, 2, 2)))
    with t.region("coupling"):
        y = tp.relu(x)  # unary retains its input (8 elements)
    assert led.snapshot()["current"].get("coupling") == 8
    assert t.nodes[-1].category == "coupling"
    tp.backward(y, seed=np.ones((2, 2, 2)))
    assert led.snapshot()["current_total"] == 0


def test_record_accepts_category_dict():
    led = tp.MemoryLedger()
    t = tp.Tape(ledger=led)
    out = tp.Var(np.zeros(3), t)
    t.record((out,), (), lambda node, gs: (), None,
             counted={"state": [np.zeros(5)], "gate": [np.zeros((2, 2))]})
    snap = led.snapshot()
    assert snap["current"] == {"state": 5, "gate": 4}
    tp.run_backward(t.nodes, led)
    assert led.snapshot()["current_total"] == 0


def test_parameters_are_never_counted():
    led = tp.MemoryLedger()
    t = tp.Tape(ledger=led)
    x = t.source(np.ones((2, 2, 2)))
    w = tp.Var(np.ones((4, 2, 3, 3)))
    b = tp.Var(np.zeros(4))
    tp.conv2d(x, w, b)
    # only the 8-element input is booked, not the 72+4 parameter entries
    assert led.snapshot()["current_total"] == 8


def test_region_nesting_restores_previous_tag():
    t = tp.Tape(ledger=tp.MemoryLedger(), region="other")
    x = t.source(np.ones(2))
    with t.region("recompute"):
        tp.relu(x)
        with t.region("gate"):
            tp.sigmoid(x)
        tp.tanh(x)
    tp.relu(x)
    cats = [n.category for n in t.nodes]
    assert cats == ["recompute", "gate", "recompute", "other"]


def test_shuffle_wrappers_record_zero_storage():
    led = tp.MemoryLedger()
    t = tp.Tape(ledger=led)
    x = t.source(np.ones((4, 4, 1)))
    y = tp.pixel_shuffle_down(x, 2)
    z = tp.pixel_shuffle_up(y, 2)
    assert led.snapshot()["current_total"] == 0
    tp.backward(z, seed=np.ones((4, 4, 1)))
    np.testing.assert_allclose(x.grad, np.ones((4, 4, 1)))


def test_traced_values_match_raw_kernels_bitwise():
    rng = np.random.default_rng(2)
    x_raw = rng.normal(size=(3, 3, 2)).astype(np.float32)
    t = tp.Tape()
    x = t.source(x_raw.copy())
    for fn, raw in [(tp.relu, np.maximum(x_raw, 0)),
                    (tp.tanh, np.tanh(x_raw))]:
        out = fn(x)
        assert out.value.dtype == np.float32
        assert np.array_equal(out.value, raw.astype(np.float32))
