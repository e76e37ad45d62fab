"""Memory-lean backward passes built on the model's invertibility.

Two custom tape nodes let a training step keep almost nothing alive between
forward and backward:

* An autoencoder application (either direction) becomes one node retaining
  only its boundary outputs.  Its backward walks the step list in reverse:
  reconstruct the step's input with the inverse map, re-run just that step on
  a throwaway local tape, and pull cotangents across.  Live coupling-stack
  storage during the walk is one block's footprint regardless of depth, and
  because every step preserves element volume that footprint is also the
  same at every stage.

* A predictor step becomes one node retaining the output feature pair, the
  pre-step recurrent states, and the per-unit gates.  Its backward rebuilds
  each unit's rewritten group from the saved gate plus a raw cell recompute
  (the pass-through group is available unchanged), re-runs the unit on a
  local tape, and routes cotangents to parameters, states, and the pair.

The per-op "store everything" mode drives the same model code through the
plain traced wrappers and is the reference the reversible route is checked
against.  Both modes execute identical kernel sequences forward, so their
losses match bit for bit; only backward storage differs.
"""

from __future__ import annotations

import numpy as np

from . import autoencoder as ae
from . import predictor as pred
from .coupling import SplitPair
from .errors import ConfigError
from .recurrent import CellState, convlstm_step
from .tape import Tape, Var, add, mse, run_backward, value_of

BACKWARD_MODES = ("stored", "reversible")


def _zeros_or(g, like):
    return g if g is not None else np.zeros_like(like)


def _accumulate(var: Var, g) -> None:
    var.grad = g if var.grad is None else var.grad + g


# ---------------------------------------------------------------------------
# autoencoder segment node


def _segment_plan(config: ae.AutoencoderConfig, direction: str):
    steps = ae.build_steps(config)
    if direction == "encode":
        return tuple((s, ae.apply_step, ae.invert_step) for s in steps)
    return tuple((s, ae.invert_step, ae.apply_step) for s in reversed(steps))


def reversible_autoencoder(xs_in: tuple, wrapped_ae, raw_ae, config: ae.AutoencoderConfig,
                           tape: Tape, direction: str) -> tuple:
    """Run the autoencoder raw and record it as a single reversible node."""
    plan = _segment_plan(config, direction)
    ys = tuple(np.asarray(value_of(x)) for x in xs_in)
    for step, fwd, _ in plan:
        ys = fwd(step, ys, raw_ae)
    outs = tuple(Var(y, tape) for y in ys)
    ledger = tape.ledger

    def bw(node, gs):
        outputs, cur = node.ctx, list(node.ctx)
        grads = [_zeros_or(g, y) for g, y in zip(gs, outputs)]
        for step, fwd, inv in reversed(plan):
            xs = inv(step, tuple(cur), raw_ae)
            local = Tape(ledger, region="coupling")
            xvars = tuple(local.source(v) for v in xs)
            step_outs = fwd(step, xvars, wrapped_ae)
            for ov, g in zip(step_outs, grads):
                _accumulate(ov, g)
            run_backward(local.nodes, ledger)
            grads = [_zeros_or(xv.grad, xv.value) for xv in xvars]
            cur = list(xs)
        return tuple(grads)

    with tape.region("boundary"):
        tape.record(outs, tuple(xs_in), bw, ys, counted=ys)
    return outs


# ---------------------------------------------------------------------------
# predictor step node


def reversible_predictor_step(pair: SplitPair, states: tuple, wrapped_pred, raw_pred,
                              tape: Tape):
    """Run one gated predictor step raw and record it as a single node."""
    pair_v = SplitPair(np.asarray(value_of(pair.g1)), np.asarray(value_of(pair.g2)))
    states_v = tuple(CellState(np.asarray(value_of(s.h)), np.asarray(value_of(s.c)))
                     for s in states)
    out_pair_v, out_states_v, gates_v = pred.predictor_forward_full(pair_v, states_v, raw_pred)

    out_g1, out_g2 = Var(out_pair_v.g1, tape), Var(out_pair_v.g2, tape)
    out_state_vars = tuple(CellState(Var(s.h, tape), Var(s.c, tape)) for s in out_states_v)
    parents = (pair.g1, pair.g2) + tuple(x for s in states for x in (s.h, s.c))
    outputs = (out_g1, out_g2) + tuple(x for s in out_state_vars for x in (s.h, s.c))
    units = raw_pred.units
    ledger = tape.ledger

    def bw(node, gs):
        pair_vals, state_vals, gates = node.ctx
        cur = [pair_vals.g1, pair_vals.g2]
        grads = [_zeros_or(gs[0], cur[0]), _zeros_or(gs[1], cur[1])]
        state_grads_out = gs[2:]
        parent_state_grads: list = [None, None] * len(units)
        for i in reversed(range(len(units))):
            unit_raw, unit_wrapped = units[i], wrapped_pred.units[i]
            upd = 1 if unit_raw.updates == 2 else 0
            passed_v, y_upd_v = cur[1 - upd], cur[upd]
            gate_v = gates[i]

            # rebuild the unit's input: raw cell recompute + saved gate
            st_raw = convlstm_step(passed_v, state_vals[i], unit_raw.cell)
            x_upd_v = (y_upd_v - gate_v * st_raw.h) / (1.0 - gate_v)

            local = Tape(ledger, region="recompute")
            pass_var, upd_var = local.source(passed_v), local.source(x_upd_v)
            sh, sc = local.source(state_vals[i].h), local.source(state_vals[i].c)
            pair_x = SplitPair(pass_var, upd_var) if upd == 1 else SplitPair(upd_var, pass_var)
            out_pair_t, st_t, _ = pred.unit_forward(pair_x, CellState(sh, sc), unit_wrapped)

            blended = out_pair_t.g2 if upd == 1 else out_pair_t.g1
            _accumulate(blended, grads[upd])
            _accumulate(pass_var, grads[1 - upd])  # pass-through output is pass_var itself
            gh, gc = state_grads_out[2 * i], state_grads_out[2 * i + 1]
            if gh is not None:
                _accumulate(st_t.h, gh)
            if gc is not None:
                _accumulate(st_t.c, gc)
            run_backward(local.nodes, ledger)

            grads[upd] = _zeros_or(upd_var.grad, x_upd_v)
            grads[1 - upd] = _zeros_or(pass_var.grad, passed_v)
            cur[upd] = x_upd_v
            parent_state_grads[2 * i] = sh.grad
            parent_state_grads[2 * i + 1] = sc.grad
        return (grads[0], grads[1], *parent_state_grads)

    counted = {
        "boundary": (out_pair_v.g1, out_pair_v.g2),
        "state": tuple(x for s in states_v for x in (s.h, s.c)),
        "gate": gates_v,
    }
    tape.record(outputs, parents, bw, (out_pair_v, states_v, gates_v), counted=counted)
    return SplitPair(out_g1, out_g2), out_state_vars


# ---------------------------------------------------------------------------
# loss graph over a frame sequence


def build_loss(wrapped, raw, frames: np.ndarray, targets: np.ndarray, config,
               tape: Tape | None, mode: str):
    """Warm up on `frames`, predict len(targets) frames, sum per-frame MSE.

    `mode` is "raw" (no recording; `wrapped` may equal `raw`), "stored"
    (per-op tracing), or "reversible" (custom nodes).  All three run the same
    kernel sequence, so the returned loss value is identical across modes.
    """
    if mode not in ("raw",) + BACKWARD_MODES:
        raise ConfigError(f"unknown backward mode {mode!r}")
    if mode != "raw" and tape is None:
        raise ConfigError(f"mode {mode!r} needs a tape")
    aecfg = config.autoencoder
    gated = not isinstance(raw.predictor, pred.StackedPredictor)
    reversible = mode == "reversible"

    def enc(x):
        if reversible:
            return SplitPair(*reversible_autoencoder((x,), wrapped.autoencoder,
                                                     raw.autoencoder, aecfg, tape, "encode"))
        if mode == "stored":
            with tape.region("coupling"):
                return ae.encode(tape.source(x), wrapped.autoencoder, aecfg)
        return ae.encode(x, raw.autoencoder, aecfg)

    def dec(pair):
        if reversible:
            (frame,) = reversible_autoencoder((pair.g1, pair.g2), wrapped.autoencoder,
                                              raw.autoencoder, aecfg, tape, "decode")
            return frame
        if mode == "stored":
            with tape.region("coupling"):
                return ae.decode(pair, wrapped.autoencoder, aecfg)
        return ae.decode(pair, raw.autoencoder, aecfg)

    def step(pair, states):
        # the stacked baseline has no inverse, so it is always traced per-op
        if reversible and gated:
            return reversible_predictor_step(pair, states, wrapped.predictor,
                                             raw.predictor, tape)
        if mode == "raw":
            return pred.predictor_forward(pair, states, raw.predictor)
        with tape.region("state"):
            return pred.predictor_forward(pair, states, wrapped.predictor)

    t_in = frames.shape[-4]
    t_out = targets.shape[-4]
    lead = frames.shape[:-4]
    states = pred.zero_states(raw.predictor, lead + config.group_shape, config.dtype)
    if mode == "stored" or (reversible and not gated):
        # source the zero states so the first step's state-kernel convolutions
        # are recorded (their biases contribute to the loss even at h = 0)
        states = tuple(CellState(tape.source(s.h), tape.source(s.c)) for s in states)
    pair = None
    for t in range(t_in):
        z = enc(frames[..., t, :, :, :])
        pair, states = step(z, states)

    loss = None
    for k in range(t_out):
        if k > 0:
            pair, states = step(pair, states)
        frame = dec(pair)
        term = mse(frame, targets[..., k, :, :, :])
        loss = term if loss is None else add(loss, term)
    return loss


def sequence_loss(params, frames: np.ndarray, targets: np.ndarray, config) -> float:
    """Loss of the training objective with no tracing (for audits and probes)."""
    return float(value_of(build_loss(params, params, frames, targets, config, None, "raw")))
