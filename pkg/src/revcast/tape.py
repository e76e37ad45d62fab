"""Reverse-mode tape over the kernels in `ops`.

Model code calls the wrappers in this module (`add`, `conv2d`, ...) with
either plain ndarrays or `Var`s.  Plain arrays fall straight through to the
raw kernels.  When an argument is a `Var` attached to a `Tape`, the wrapper
records a `Node` whose backward rule routes cotangents to the node's parents.

Every array a node keeps alive for its backward pass is declared to the
tape's `MemoryLedger` under the region active at record time ("coupling",
"boundary", "state", "gate", or "other") and released again once the node
has run backward.  Peak ledger counts are therefore the stored-activation
footprint of a training step, which is the quantity the reversible backward
path exists to shrink.  Parameters are never declared: they live for the
whole run regardless of backward strategy.
"""

from __future__ import annotations

import contextlib

import numpy as np

from . import ops


class MemoryLedger:
    """Element counts of live stored activations, split by region tag."""

    def __init__(self):
        self.current: dict[str, int] = {}
        self.peak: dict[str, int] = {}
        self.current_total = 0
        self.peak_total = 0

    def alloc(self, category: str, count: int) -> None:
        if count == 0:
            return
        self.current[category] = self.current.get(category, 0) + count
        self.peak[category] = max(self.peak.get(category, 0), self.current[category])
        self.current_total += count
        self.peak_total = max(self.peak_total, self.current_total)

    def free(self, category: str, count: int) -> None:
        if count == 0:
            return
        left = self.current.get(category, 0) - count
        if left < 0 or self.current_total < count:
            raise RuntimeError(f"ledger underflow for category {category!r}")
        self.current[category] = left
        self.current_total -= count

    def reset(self) -> None:
        self.current.clear()
        self.peak.clear()
        self.current_total = 0
        self.peak_total = 0

    def snapshot(self) -> dict:
        return {
            "peak": dict(self.peak),
            "current": dict(self.current),
            "peak_total": self.peak_total,
            "current_total": self.current_total,
        }


class Var:
    """An array being tracked for reverse-mode differentiation.

    `tape=None` marks a leaf (a parameter): ops involving only leaves and
    plain arrays are not recorded, which is what lets the same model code
    serve raw inference, per-op taped training, and the local re-execution
    inside reversible nodes.
    """

    __slots__ = ("value", "tape", "grad", "name")

    def __init__(self, value, tape=None, name=None):
        self.value = value
        self.tape = tape
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    def __repr__(self):
        kind = "leaf" if self.tape is None else "node"
        return f"Var({kind}, shape={tuple(self.value.shape)}, name={self.name})"


class Node:
    __slots__ = ("outputs", "parents", "backward", "ctx", "saved_elems", "category")

    def __init__(self, outputs, parents, backward, ctx, saved_elems, category):
        self.outputs = outputs
        self.parents = parents
        self.backward = backward
        self.ctx = ctx
        self.saved_elems = saved_elems
        self.category = category


class Tape:
    """Execution-ordered node list; list order doubles as topological order."""

    def __init__(self, ledger: MemoryLedger | None = None, region: str = "other"):
        self.nodes: list[Node] = []
        self.ledger = ledger
        self._regions = [region]

    @contextlib.contextmanager
    def region(self, name: str):
        self._regions.append(name)
        try:
            yield
        finally:
            self._regions.pop()

    def source(self, value: np.ndarray, name: str | None = None) -> Var:
        """Wrap input data so that downstream ops are recorded on this tape."""
        return Var(value, tape=self, name=name)

    def record(self, outputs, parents, backward, ctx, counted=()) -> None:
        """Append a node.

        `counted` declares the arrays the node retains for its backward rule:
        either a flat sequence (booked under the active region) or a dict
        mapping category -> arrays for nodes whose retention spans categories.
        """
        if isinstance(counted, dict):
            saved = {cat: int(sum(a.size for a in arrays)) for cat, arrays in counted.items()}
        else:
            saved = {self._regions[-1]: int(sum(a.size for a in counted))}
        saved = {cat: n for cat, n in saved.items() if n}
        if self.ledger is not None:
            for cat, n in saved.items():
                self.ledger.alloc(cat, n)
        self.nodes.append(Node(tuple(outputs), tuple(parents), backward, ctx, saved,
                               self._regions[-1]))


def run_backward(nodes: list[Node], ledger: MemoryLedger | None) -> None:
    """Consume a node list in reverse, accumulating grads into parent Vars."""
    for node in reversed(nodes):
        grads_out = tuple(o.grad for o in node.outputs)
        if any(g is not None for g in grads_out):
            grads_in = node.backward(node, grads_out)
            for parent, g in zip(node.parents, grads_in):
                if g is None or not isinstance(parent, Var):
                    continue
                parent.grad = g if parent.grad is None else parent.grad + g
        for o in node.outputs:
            o.grad = None
        if ledger is not None:
            for cat, n in node.saved_elems.items():
                ledger.free(cat, n)
        node.ctx = None
    nodes.clear()


def backward(root: Var, seed=None) -> None:
    """Run reverse mode from a (scalar) root Var, clearing the tape as it goes."""
    if root.tape is None:
        raise ValueError("backward root is not attached to a tape")
    if seed is None:
        seed = np.ones((), dtype=root.value.dtype)
    root.grad = np.asarray(seed)
    run_backward(root.tape.nodes, root.tape.ledger)


# ---------------------------------------------------------------------------
# traced wrappers


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _tape_of(*args) -> Tape | None:
    for a in args:
        if isinstance(a, Var) and a.tape is not None:
            return a.tape
    return None


def _binary(kind, a, b):
    t = _tape_of(a, b)
    av, bv = value_of(a), value_of(b)
    out_v = ops.elementwise(kind, av, bv)
    if t is None:
        return out_v
    out = Var(out_v, t)
    if kind in ("add", "sub"):
        sign = 1.0 if kind == "add" else -1.0

        def bw(node, gs):
            g = gs[0]
            return g, g if sign > 0 else -g

        t.record((out,), (a, b), bw, None, ())
    else:

        def bw(node, gs):
            return ops.vjp(node.ctx["kind"], node.ctx["inputs"], gs[0])

        t.record((out,), (a, b), bw, {"kind": kind, "inputs": (av, bv)}, (av, bv))
    return out


def add(a, b):
    return _binary("add", a, b)


def sub(a, b):
    return _binary("sub", a, b)


def mul(a, b):
    return _binary("mul", a, b)


def div(a, b):
    return _binary("div", a, b)


def _unary(kind, x, **meta):
    t = _tape_of(x)
    xv = value_of(x)
    if kind == "clamp":
        out_v = ops.clamp(xv, meta["lo"], meta["hi"])
    else:
        out_v = ops.activation(kind, xv)
    if t is None:
        return out_v
    out = Var(out_v, t)

    def bw(node, gs):
        return ops.vjp(node.ctx["kind"], (node.ctx["x"],), gs[0], **node.ctx["meta"])

    t.record((out,), (x,), bw, {"kind": kind, "x": xv, "meta": meta}, (xv,))
    return out


def sigmoid(x):
    return _unary("sigmoid", x)


def tanh(x):
    return _unary("tanh", x)


def relu(x):
    return _unary("relu", x)


def clamp(x, lo, hi):
    return _unary("clamp", x, lo=lo, hi=hi)


def conv2d(x, weights, bias):
    t = _tape_of(x, weights, bias)
    xv, wv, bv = value_of(x), value_of(weights), value_of(bias)
    out_v = ops.conv2d(xv, wv, bv)
    if t is None:
        return out_v
    out = Var(out_v, t)

    def bw(node, gs):
        return ops.vjp("conv2d", node.ctx, gs[0])

    # weights/bias ride along in ctx but only the input x is activation storage
    t.record((out,), (x, weights, bias), bw, (xv, wv, bv), (xv,))
    return out


def pixel_shuffle_down(x, n):
    t = _tape_of(x)
    out_v = ops.pixel_shuffle_down(value_of(x), n)
    if t is None:
        return out_v
    out = Var(out_v, t)

    def bw(node, gs):
        return (ops.pixel_shuffle_up(gs[0], node.ctx),)

    t.record((out,), (x,), bw, n, ())
    return out


def pixel_shuffle_up(x, n):
    t = _tape_of(x)
    out_v = ops.pixel_shuffle_up(value_of(x), n)
    if t is None:
        return out_v
    out = Var(out_v, t)

    def bw(node, gs):
        return (ops.pixel_shuffle_down(gs[0], node.ctx),)

    t.record((out,), (x,), bw, n, ())
    return out


def split2(x):
    """Split the channel axis into equal halves (lower, upper)."""
    xv = value_of(x)
    c = xv.shape[-1]
    if c % 2:
        raise ValueError(f"cannot split odd channel count {c} into halves")
    lo_v, hi_v = xv[..., : c // 2], xv[..., c // 2 :]
    t = _tape_of(x)
    if t is None:
        return lo_v, hi_v
    lo, hi = Var(lo_v, t), Var(hi_v, t)

    def bw(node, gs):
        g_lo, g_hi = gs
        if g_lo is None:
            g_lo = np.zeros_like(node.ctx[0])
        if g_hi is None:
            g_hi = np.zeros_like(node.ctx[1])
        return (np.concatenate([g_lo, g_hi], axis=-1),)

    t.record((lo, hi), (x,), bw, (lo_v, hi_v), ())
    return lo, hi


def concat2(a, b):
    """Join two equal-shape halves back along the channel axis."""
    av, bv = value_of(a), value_of(b)
    out_v = np.concatenate([av, bv], axis=-1)
    t = _tape_of(a, b)
    if t is None:
        return out_v
    out = Var(out_v, t)

    def bw(node, gs):
        g = gs[0]
        c = node.ctx
        return g[..., :c], g[..., c:]

    t.record((out,), (a, b), bw, av.shape[-1], ())
    return out


def mse(pred, target):
    """Mean squared error over all entries; returns a 0-d scalar."""
    pv, tv = value_of(pred), value_of(target)
    if pv.shape != tv.shape:
        raise ValueError(f"mse shapes differ: {pv.shape} vs {tv.shape}")
    diff = pv - tv
    out_v = np.asarray(np.mean(diff * diff), dtype=pv.dtype)
    t = _tape_of(pred, target)
    if t is None:
        return out_v
    out = Var(out_v, t)

    def bw(node, gs):
        return ops.vjp("mse", node.ctx, gs[0])

    t.record((out,), (pred, target), bw, (pv, tv), (pv, tv))
    return out
