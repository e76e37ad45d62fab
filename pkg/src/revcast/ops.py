"""Array kernels and their reverse-mode rules.

Everything downstream (coupling blocks, recurrent cells, the training tape)
is built from the handful of primitives here: same-padded convolution,
strict-shape elementwise arithmetic, three activations, two pixel-shuffle
permutations, and a `vjp` dispatcher that maps a forward op name to the
cotangents of its inputs.  Arrays are channels-last, `(..., H, W, C)`, with
any number of leading batch axes.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

DTYPES = {"f32": np.float32, "f64": np.float64}

ELEMENTWISE_KINDS = ("add", "sub", "mul", "div")
ACTIVATION_KINDS = ("sigmoid", "tanh", "relu")

# Populated by activation_census() while a gradient audit is probing the loss
# at nearby parameter points.  relu/clamp add the count of entries on their
# active side, so two evaluations with differing census crossed a kink.
_census: dict[str, int] | None = None


@contextlib.contextmanager
def activation_census():
    """Collect {'relu_on', 'clamped'} counts for ops run inside the block."""
    global _census
    prev = _census
    _census = {"relu_on": 0, "clamped": 0}
    try:
        yield _census
    finally:
        _census = prev


def require_finite(name: str, x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains NaN or Inf")


# ---------------------------------------------------------------------------
# convolution


@dataclass(frozen=True)
class ConvKernel:
    """Weights `(c_out, c_in, kh, kw)` plus per-output-channel bias `(c_out,)`."""

    weights: np.ndarray
    bias: np.ndarray


def make_kernel(weights: np.ndarray, bias: np.ndarray) -> ConvKernel:
    """Validate shapes and wrap them in a ConvKernel."""
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    if weights.ndim != 4:
        raise ShapeError(f"kernel weights must be rank 4, got {weights.shape}")
    c_out, _, kh, kw = weights.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
    if bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bias.shape}")
    return ConvKernel(weights, bias)


def init_kernel(rng: np.random.Generator, c_out: int, c_in: int, kh: int, kw: int,
                dtype=np.float32, bias_value: float = 0.0) -> ConvKernel:
    """Fan-in uniform init: weights ~ U(-s, s) with s = sqrt(1 / (c_in*kh*kw))."""
    scale = float(np.sqrt(1.0 / (c_in * kh * kw)))
    weights = rng.uniform(-scale, scale, size=(c_out, c_in, kh, kw)).astype(dtype)
    bias = np.full(c_out, bias_value, dtype=dtype)
    return ConvKernel(weights, bias)


def _im2col(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Zero-pad to same size and unfold into rows of c_in*kh*kw patch values."""
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    pad = [(0, 0)] * (x.ndim - 3) + [(ph, ph), (pw, pw), (0, 0)]
    padded = np.pad(x, pad)
    win = sliding_window_view(padded, (kh, kw), axis=(-3, -2))
    # window layout (..., H, W, C, kh, kw); the reshape copies into GEMM order
    return win.reshape(-1, x.shape[-1] * kh * kw)


def conv2d(x: np.ndarray, weights: np.ndarray, bias: np.ndarray | None = None, *,
           stride: int = 1, checked: bool = False) -> np.ndarray:
    """Same-padded 2-d convolution over the trailing (H, W, C) axes.

    Implemented as one im2col unfold plus a single GEMM, so the accumulation
    order is fixed by the BLAS for a given build and results are reproducible
    run to run.  Only stride 1 is supported; spatial down-scaling elsewhere in
    the model is done by the (invertible) pixel shuffle, never by striding.
    """
    if stride != 1:
        raise ShapeError("conv2d supports stride=1 only")
    if x.ndim < 3:
        raise ShapeError(f"conv2d input must be at least rank 3, got {x.shape}")
    if weights.ndim != 4:
        raise ShapeError(f"conv2d weights must be rank 4, got {weights.shape}")
    c_out, c_in, kh, kw = weights.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"kernel extents must be odd, got {kh}x{kw}")
    if x.shape[-1] != c_in:
        raise ShapeError(f"input has {x.shape[-1]} channels, kernel expects {c_in}")
    if bias is not None and bias.shape != (c_out,):
        raise ShapeError(f"bias must have shape ({c_out},), got {bias.shape}")
    if checked:
        require_finite("conv2d input", x)
        require_finite("conv2d weights", weights)

    lead = x.shape[:-3]
    h, w = x.shape[-3], x.shape[-2]
    cols = _im2col(x, kh, kw)
    out = cols @ weights.reshape(c_out, -1).T
    if bias is not None:
        out += bias
    return out.reshape(lead + (h, w, c_out))


def conv2d_input_vjp(g: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Cotangent of the conv input: convolve g with the flipped, transposed kernel."""
    flipped = np.ascontiguousarray(weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
    return conv2d(g, flipped)


def conv2d_param_vjp(x: np.ndarray, g: np.ndarray, kh: int, kw: int):
    """Cotangents of (weights, bias) given the saved input and output cotangent."""
    c_out = g.shape[-1]
    c_in = x.shape[-1]
    cols = _im2col(x, kh, kw)
    g2 = g.reshape(-1, c_out)
    dw = (g2.T @ cols).reshape(c_out, c_in, kh, kw)
    db = g2.sum(axis=0)
    return dw, db


# ---------------------------------------------------------------------------
# elementwise and activations


def elementwise(kind: str, a: np.ndarray, b: np.ndarray, *, checked: bool = False) -> np.ndarray:
    """Binary elementwise op on arrays of exactly equal shape (no broadcasting)."""
    if kind not in ELEMENTWISE_KINDS:
        raise ValueError(f"unknown elementwise kind {kind!r}")
    if a.shape != b.shape:
        raise ShapeError(f"elementwise {kind}: shapes {a.shape} and {b.shape} differ")
    if checked:
        require_finite("elementwise lhs", a)
        require_finite("elementwise rhs", b)
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    if np.any(b == 0):
        raise ValueError("elementwise div: divisor contains zero entries")
    return a / b


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function (never exponentiates a positive value)."""
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def tanh(x: np.ndarray) -> np.ndarray:
    return np.tanh(x)


def relu(x: np.ndarray) -> np.ndarray:
    if _census is not None:
        _census["relu_on"] += int(np.count_nonzero(x > 0))
    return np.maximum(x, 0)


def clamp(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    if _census is not None:
        _census["clamped"] += int(np.count_nonzero((x < lo) | (x > hi)))
    return np.clip(x, lo, hi)


def activation(kind: str, x: np.ndarray, *, checked: bool = False) -> np.ndarray:
    if kind not in ACTIVATION_KINDS:
        raise ValueError(f"unknown activation kind {kind!r}")
    if checked:
        require_finite("activation input", x)
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    return relu(x)


# ---------------------------------------------------------------------------
# pixel shuffles (bijective space <-> channel moves)


def pixel_shuffle_down(x: np.ndarray, n: int) -> np.ndarray:
    """Fold each n x n spatial tile into channels.

    `(..., H, W, C) -> (..., H/n, W/n, C*n*n)`; input pixel (i, j, c) lands in
    channel `c*n*n + (i % n)*n + (j % n)` of output cell (i//n, j//n).
    """
    if n < 1:
        raise ShapeError(f"shuffle factor must be >= 1, got {n}")
    if n == 1:
        return x
    if x.ndim < 3:
        raise ShapeError(f"pixel shuffle input must be at least rank 3, got {x.shape}")
    lead = x.shape[:-3]
    h, w, c = x.shape[-3:]
    if h % n or w % n:
        raise ShapeError(f"spatial extents {h}x{w} not divisible by shuffle factor {n}")
    r = x.reshape(lead + (h // n, n, w // n, n, c))
    r = np.moveaxis(r, (-4, -2), (-2, -1))
    return r.reshape(lead + (h // n, w // n, c * n * n))


def pixel_shuffle_up(x: np.ndarray, n: int) -> np.ndarray:
    """Exact inverse of pixel_shuffle_down with the same factor."""
    if n < 1:
        raise ShapeError(f"shuffle factor must be >= 1, got {n}")
    if n == 1:
        return x
    if x.ndim < 3:
        raise ShapeError(f"pixel shuffle input must be at least rank 3, got {x.shape}")
    lead = x.shape[:-3]
    h, w, cc = x.shape[-3:]
    if cc % (n * n):
        raise ShapeError(f"channel count {cc} not divisible by {n * n}")
    c = cc // (n * n)
    r = x.reshape(lead + (h, w, c, n, n))
    r = np.moveaxis(r, (-2, -1), (-4, -2))
    return r.reshape(lead + (h * n, w * n, c))


# ---------------------------------------------------------------------------
# reverse-mode rules


def _check_cotangent(g: np.ndarray, expect_shape: tuple) -> None:
    if g.shape != expect_shape:
        raise ShapeError(f"cotangent shape {g.shape} does not match output shape {expect_shape}")


def vjp(op: str, inputs: tuple, cotangent: np.ndarray, **meta):
    """Cotangents of `inputs` for one forward op, as a tuple in input order.

    `op` names the forward primitive ("add", "sub", "mul", "div", "relu",
    "sigmoid", "tanh", "clamp", "conv2d", "pixel_shuffle_down",
    "pixel_shuffle_up", "mse").  `inputs` are the primal inputs that op was
    called with; `meta` carries the op's non-array arguments (`n` for the
    shuffles, `lo`/`hi` for clamp).  Activation rules recompute the cheap
    forward value rather than requiring it to be passed in.
    """
    g = cotangent
    if op in ("add", "sub"):
        a, b = inputs
        _check_cotangent(g, a.shape)
        return (g, g) if op == "add" else (g, -g)
    if op == "mul":
        a, b = inputs
        _check_cotangent(g, a.shape)
        return g * b, g * a
    if op == "div":
        a, b = inputs
        _check_cotangent(g, a.shape)
        return g / b, -g * a / (b * b)
    if op == "relu":
        (x,) = inputs
        _check_cotangent(g, x.shape)
        return (g * (x > 0),)
    if op == "sigmoid":
        (x,) = inputs
        _check_cotangent(g, x.shape)
        s = sigmoid(x)
        return (g * s * (1.0 - s),)
    if op == "tanh":
        (x,) = inputs
        _check_cotangent(g, x.shape)
        t = np.tanh(x)
        return (g * (1.0 - t * t),)
    if op == "clamp":
        (x,) = inputs
        _check_cotangent(g, x.shape)
        inside = (x >= meta["lo"]) & (x <= meta["hi"])
        return (g * inside,)
    if op == "conv2d":
        x, weights, bias = inputs
        c_out, _, kh, kw = weights.shape
        _check_cotangent(g, x.shape[:-1] + (c_out,))
        dx = conv2d_input_vjp(g, weights)
        dw, db = conv2d_param_vjp(x, g, kh, kw)
        return dx, dw, db
    if op == "pixel_shuffle_down":
        (x,) = inputs
        return (pixel_shuffle_up(g, meta["n"]),)
    if op == "pixel_shuffle_up":
        (x,) = inputs
        return (pixel_shuffle_down(g, meta["n"]),)
    if op == "mse":
        pred, target = inputs
        scale = 2.0 / pred.size
        d = (pred - target) * (scale * g)
        return d, -d
    raise ValueError(f"no vjp rule for op {op!r}")


def finite_diff_grad(fn, x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, evaluated in float64."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp = x.copy()
        xp[idx] += step
        fp = float(fn(xp))
        xm = x.copy()
        xm[idx] -= step
        fm = float(fn(xm))
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("finite_diff_grad: function returned a non-finite value")
        grad[idx] = (fp - fm) / (2.0 * step)
    return grad
