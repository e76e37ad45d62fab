"""Additive coupling blocks over channel-split feature pairs.

A block carries two small residual operators (conv -> relu -> conv).  The
forward pass rewrites the pair as

    y2 = x2 + F1(x1)
    y1 = x1 + F2(y2)

and the inverse recovers the input by subtracting the same quantities in
reverse order, so the block is bijective regardless of what the operators
compute.  The pixel-shuffle ops that feed these blocks live in `ops` and are
re-exported here alongside the block math.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ShapeError
from .ops import ConvKernel, init_kernel
from .tape import add, conv2d, pixel_shuffle_down, pixel_shuffle_up, relu, sub, value_of

__all__ = [
    "SplitPair",
    "ResidualOperator",
    "CouplingParams",
    "make_split_pair",
    "residual_apply",
    "coupling_forward",
    "coupling_inverse",
    "init_coupling",
    "pixel_shuffle_down",
    "pixel_shuffle_up",
]


class SplitPair(NamedTuple):
    """Two feature groups of identical shape (an even channel split)."""

    g1: object
    g2: object


def make_split_pair(g1, g2) -> SplitPair:
    """Validate the even-split contract before pairing two groups."""
    a, b = np.asarray(value_of(g1)), np.asarray(value_of(g2))
    if a.shape != b.shape:
        raise ShapeError(f"split pair groups differ in shape: {a.shape} vs {b.shape}")
    if a.ndim < 3:
        raise ShapeError(f"split pair groups must be at least rank 3, got {a.shape}")
    return SplitPair(g1, g2)


@dataclass(frozen=True)
class ResidualOperator:
    """conv -> relu -> conv, mapping a group to a same-shaped increment."""

    conv_a: ConvKernel
    conv_b: ConvKernel


@dataclass(frozen=True)
class CouplingParams:
    """f1 updates g2 from g1; f2 updates g1 from the refreshed g2."""

    f1: ResidualOperator
    f2: ResidualOperator


def residual_apply(op: ResidualOperator, x):
    hidden = relu(conv2d(x, op.conv_a.weights, op.conv_a.bias))
    return conv2d(hidden, op.conv_b.weights, op.conv_b.bias)


def coupling_forward(pair: SplitPair, params: CouplingParams) -> SplitPair:
    y2 = add(pair.g2, residual_apply(params.f1, pair.g1))
    y1 = add(pair.g1, residual_apply(params.f2, y2))
    return SplitPair(y1, y2)


def coupling_inverse(pair: SplitPair, params: CouplingParams) -> SplitPair:
    x1 = sub(pair.g1, residual_apply(params.f2, pair.g2))
    x2 = sub(pair.g2, residual_apply(params.f1, x1))
    return SplitPair(x1, x2)


def init_coupling(rng: np.random.Generator, group_channels: int, hidden_multiplier: int,
                  kernel_size: int, dtype=np.float32) -> CouplingParams:
    """Draw both residual operators; draw order is f1 then f2, conv_a then conv_b."""
    hidden = hidden_multiplier * group_channels
    k = kernel_size

    def draw_operator():
        conv_a = init_kernel(rng, hidden, group_channels, k, k, dtype)
        conv_b = init_kernel(rng, group_channels, hidden, k, k, dtype)
        return ResidualOperator(conv_a, conv_b)

    return CouplingParams(draw_operator(), draw_operator())
