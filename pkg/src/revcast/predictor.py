"""Recurrent feature predictor built from gated coupling units.

Each unit reads one feature group through a ConvLSTM cell and rewrites only
the other group as a gated blend with the new hidden map:

    h = cell(x_pass, state)
    g = clamp(sigmoid(conv(relu(conv(h)))), eps, 1-eps)
    x_upd' = (1 - g) * x_upd + g * h

The pass-through group leaves a unit bit-identical, and because g is clamped
away from 0 and 1 the blend can be undone exactly when the pre-step state is
known: x_upd = (x_upd' - g*h) / (1 - g).  That conditional invertibility is
what the memory-lean backward pass exploits.  Units alternate which group
they rewrite (the first rewrites g2).

A non-reversible stacked-ConvLSTM baseline with the same calling convention
is provided for ablation runs; it merges the pair, runs the stack, and
re-splits the last hidden map.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import SplitPair
from .errors import ConfigError
from .ops import ConvKernel, init_kernel
from .recurrent import CellState, ConvLSTMParams, convlstm_step, init_convlstm, zero_state
from .tape import add, clamp, concat2, conv2d, div, mul, relu, sigmoid, split2, sub, value_of

GATE_MIN = 1e-6
GATE_MAX = 1.0 - 1e-6


@dataclass(frozen=True)
class AttentionParams:
    """Two convs shaping the hidden map into per-element gate logits."""

    conv_a: ConvKernel
    conv_b: ConvKernel


@dataclass(frozen=True)
class RecurrentUnitParams:
    cell: ConvLSTMParams
    attention: AttentionParams
    updates: int  # 1 or 2: which group this unit rewrites


@dataclass(frozen=True)
class GatedPredictor:
    units: tuple[RecurrentUnitParams, ...]

    def __post_init__(self):
        for a, b in zip(self.units, self.units[1:]):
            if a.updates == b.updates:
                raise ConfigError("consecutive units must rewrite alternating groups")


@dataclass(frozen=True)
class StackedPredictor:
    cells: tuple[ConvLSTMParams, ...]


def attention_gate(h, params: AttentionParams):
    logits = conv2d(relu(conv2d(h, params.conv_a.weights, params.conv_a.bias)),
                    params.conv_b.weights, params.conv_b.bias)
    return clamp(sigmoid(logits), GATE_MIN, GATE_MAX)


def unit_forward(pair: SplitPair, state: CellState, params: RecurrentUnitParams):
    """Returns (pair', state', gate); the pass-through group is untouched."""
    passed = pair.g1 if params.updates == 2 else pair.g2
    updated = pair.g2 if params.updates == 2 else pair.g1
    state_new = convlstm_step(passed, state, params.cell)
    g = attention_gate(state_new.h, params.attention)
    one = np.ones_like(value_of(g))
    blended = add(mul(sub(one, g), updated), mul(g, state_new.h))
    if params.updates == 2:
        return SplitPair(passed, blended), state_new, g
    return SplitPair(blended, passed), state_new, g


def unit_inverse(pair: SplitPair, state_before: CellState, params: RecurrentUnitParams) -> SplitPair:
    """Undo unit_forward given the state the unit saw before stepping."""
    passed = pair.g1 if params.updates == 2 else pair.g2
    blended = pair.g2 if params.updates == 2 else pair.g1
    state_new = convlstm_step(passed, state_before, params.cell)
    g = attention_gate(state_new.h, params.attention)
    one = np.ones_like(value_of(g))
    updated = div(sub(blended, mul(g, state_new.h)), sub(one, g))
    if params.updates == 2:
        return SplitPair(passed, updated)
    return SplitPair(updated, passed)


def predictor_forward(pair: SplitPair, states: tuple, params):
    """Advance all units once; returns (pair', states')."""
    pair, states, _ = predictor_forward_full(pair, states, params)
    return pair, states


def predictor_forward_full(pair: SplitPair, states: tuple, params):
    """Like predictor_forward but also returns the per-unit gates."""
    if isinstance(params, StackedPredictor):
        return _stacked_forward(pair, states, params)
    if len(states) != len(params.units):
        raise ConfigError(f"{len(params.units)} units but {len(states)} states")
    new_states, gates = [], []
    for unit, state in zip(params.units, states):
        pair, state_new, g = unit_forward(pair, state, unit)
        new_states.append(state_new)
        gates.append(g)
    return pair, tuple(new_states), tuple(gates)


def predictor_inverse(pair: SplitPair, states_before: tuple, params) -> SplitPair:
    """Recover the input pair of one predictor step from its pre-step states."""
    if isinstance(params, StackedPredictor):
        raise ConfigError("the stacked baseline predictor is not reversible")
    for unit, state in zip(reversed(params.units), reversed(states_before)):
        pair = unit_inverse(pair, state, unit)
    return pair


def _stacked_forward(pair: SplitPair, states: tuple, params: StackedPredictor):
    x = concat2(pair.g1, pair.g2)
    new_states = []
    for cell, state in zip(params.cells, states):
        state = convlstm_step(x, state, cell)
        new_states.append(state)
        x = state.h
    g1, g2 = split2(x)
    return SplitPair(g1, g2), tuple(new_states), ()


def zero_states(params, group_shape: tuple, dtype=np.float32) -> tuple:
    """All-zeros recurrent state per unit; `group_shape` may lead with batch axes."""
    if isinstance(params, StackedPredictor):
        merged = group_shape[:-1] + (group_shape[-1] * 2,)
        return tuple(zero_state(merged, dtype) for _ in params.cells)
    return tuple(zero_state(group_shape, dtype) for _ in params.units)


def init_gated_predictor(rng: np.random.Generator, group_channels: int, unit_count: int,
                         kernel_size: int, dtype=np.float32) -> GatedPredictor:
    """Units drawn in order; unit 0 rewrites g2, alternating from there."""
    if unit_count < 1:
        raise ConfigError(f"unit count must be >= 1, got {unit_count}")
    units = []
    for i in range(unit_count):
        cell = init_convlstm(rng, group_channels, group_channels, kernel_size, dtype)
        attention = AttentionParams(
            conv_a=init_kernel(rng, group_channels, group_channels, kernel_size, kernel_size, dtype),
            conv_b=init_kernel(rng, group_channels, group_channels, kernel_size, kernel_size, dtype),
        )
        units.append(RecurrentUnitParams(cell, attention, updates=2 if i % 2 == 0 else 1))
    return GatedPredictor(tuple(units))


def init_stacked_predictor(rng: np.random.Generator, merged_channels: int, layer_count: int,
                           kernel_size: int, dtype=np.float32) -> StackedPredictor:
    if layer_count < 1:
        raise ConfigError(f"layer count must be >= 1, got {layer_count}")
    cells = tuple(init_convlstm(rng, merged_channels, merged_channels, kernel_size, dtype)
                  for _ in range(layer_count))
    return StackedPredictor(cells)
