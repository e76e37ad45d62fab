"""Convolutional LSTM cell (no peephole terms).

Gates see the input and the previous hidden map through separate same-padded
convolutions whose biases add, so each gate has a single effective bias:

    i = sigmoid(conv(x) + conv(h))        f, o analogous
    cand = tanh(conv(x) + conv(h))
    c' = f*c + i*cand
    h' = o*tanh(c')

The forget gate's input-side bias starts at 1.0 so early steps remember.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .ops import ConvKernel, init_kernel
from .tape import add, conv2d, mul, sigmoid, tanh


@dataclass(frozen=True)
class ConvLSTMParams:
    """Input-side and hidden-side kernels for gates i, f, o and the candidate."""

    x_i: ConvKernel
    h_i: ConvKernel
    x_f: ConvKernel
    h_f: ConvKernel
    x_o: ConvKernel
    h_o: ConvKernel
    x_c: ConvKernel
    h_c: ConvKernel


class CellState(NamedTuple):
    h: object
    c: object


def zero_state(shape: tuple, dtype=np.float32) -> CellState:
    """Fresh all-zeros state; `shape` may carry leading batch axes."""
    return CellState(np.zeros(shape, dtype), np.zeros(shape, dtype))


def convlstm_step(x, state: CellState, params: ConvLSTMParams) -> CellState:
    h, c = state

    def gate(kx: ConvKernel, kh: ConvKernel):
        return add(conv2d(x, kx.weights, kx.bias), conv2d(h, kh.weights, kh.bias))

    i = sigmoid(gate(params.x_i, params.h_i))
    f = sigmoid(gate(params.x_f, params.h_f))
    o = sigmoid(gate(params.x_o, params.h_o))
    cand = tanh(gate(params.x_c, params.h_c))
    c_new = add(mul(f, c), mul(i, cand))
    h_new = mul(o, tanh(c_new))
    return CellState(h_new, c_new)


def init_convlstm(rng: np.random.Generator, in_channels: int, hidden_channels: int,
                  kernel_size: int, dtype=np.float32, forget_bias: float = 1.0) -> ConvLSTMParams:
    """Draw kernels in field order; only x_f gets the non-zero starting bias."""
    k = kernel_size

    def draw(c_in, bias_value=0.0):
        return init_kernel(rng, hidden_channels, c_in, k, k, dtype, bias_value)

    return ConvLSTMParams(
        x_i=draw(in_channels), h_i=draw(hidden_channels),
        x_f=draw(in_channels, forget_bias), h_f=draw(hidden_channels),
        x_o=draw(in_channels), h_o=draw(hidden_channels),
        x_c=draw(in_channels), h_c=draw(hidden_channels),
    )
