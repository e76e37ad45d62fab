"""Training loop, optimizer, metrics, and the gradient audit.

The loss is the sum of per-frame MSE over the predicted horizon.  Adam keeps
per-parameter moment estimates with bias correction and the stabilizer added
inside the square root:

    theta -= lr * m_hat / sqrt(v_hat + eps)

All sampling comes from one seeded PCG64 generator and every kernel in the
step is deterministic, so a fixed seed reproduces the loss trace bit for bit.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple

import numpy as np

from . import model as mdl
from .errors import ConfigError, ShapeError, TrainingDiverged
from .ops import activation_census
from .ptree import grads_of, tree_flatten, tree_unflatten, wrap_leaves
from .revgrad import BACKWARD_MODES, build_loss, sequence_loss
from .tape import MemoryLedger, Tape, backward

METRIC_COLUMNS = ("step", "train_mse", "val_mse", "baseline_mse", "peak_activation_elems")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 2000
    batch_size: int = 8
    learning_rate: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    grad_clip: float = 5.0  # global-norm ceiling; <= 0 disables clipping
    eval_every: int = 100
    seed: int = 0
    backward: str = "reversible"

    def __post_init__(self):
        if self.backward not in BACKWARD_MODES:
            raise ConfigError(f"backward must be one of {BACKWARD_MODES}, got {self.backward!r}")
        if self.steps < 1 or self.batch_size < 1 or self.eval_every < 1:
            raise ConfigError("steps, batch_size and eval_every must be positive")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


class SequenceData(NamedTuple):
    """Training/validation sequence batches, each (N, T, H, W, C)."""

    train: np.ndarray
    val: np.ndarray


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class AdamState:
    step: int
    m: list
    v: list


def adam_init(values: list) -> AdamState:
    return AdamState(0, [np.zeros_like(p) for p in values], [np.zeros_like(p) for p in values])


def adam_step(values: list, grads: list, state: AdamState, *, lr: float,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One Adam update; pure (returns fresh arrays and a fresh state)."""
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    if len(values) != len(grads) or len(values) != len(state.m):
        raise ShapeError("parameter, gradient and moment lists disagree in length")
    for p, g in zip(values, grads):
        if p.shape != g.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
    t = state.step + 1
    corr1 = 1.0 - beta1 ** t
    corr2 = 1.0 - beta2 ** t
    new_values, new_m, new_v = [], [], []
    for p, g, m, v in zip(values, grads, state.m, state.v):
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * (g * g)
        update = lr * (m / corr1) / np.sqrt(v / corr2 + eps)
        new_values.append(p - update.astype(p.dtype, copy=False))
        new_m.append(m)
        new_v.append(v)
    return new_values, AdamState(t, new_m, new_v)


def global_norm(grads: list) -> float:
    return float(np.sqrt(sum(float(np.sum(np.asarray(g, dtype=np.float64) ** 2)) for g in grads)))


def clip_gradients(grads: list, max_norm: float) -> tuple[list, float]:
    """Scale all gradients down when their joint norm exceeds max_norm."""
    norm = global_norm(grads)
    if max_norm <= 0 or norm <= max_norm or norm == 0.0:
        return grads, norm
    return [g * g.dtype.type(max_norm / norm) for g in grads], norm


# ---------------------------------------------------------------------------
# loss and gradients


def mse_loss(pred: np.ndarray, target: np.ndarray) -> float:
    if pred.shape != target.shape:
        raise ConfigError(f"mse_loss shapes differ: {pred.shape} vs {target.shape}")
    d = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.mean(d * d))


def loss_and_grads(params: mdl.ModelParams, frames: np.ndarray, targets: np.ndarray,
                   config: mdl.ModelConfig, mode: str = "reversible",
                   ledger: MemoryLedger | None = None):
    """Loss plus flat gradients (canonical parameter order) for one batch."""
    wrapped = wrap_leaves(params)
    tape = Tape(ledger)
    loss = build_loss(wrapped, params, frames, targets, config, tape, mode)
    backward(loss)
    return float(loss.value), grads_of(wrapped)


def _split_windows(seqs: np.ndarray, config: mdl.ModelConfig):
    t_in, t_out = config.frames_in, config.frames_out
    if seqs.ndim != 5:
        raise ConfigError(f"sequence batch must be (N, T, H, W, C), got {seqs.shape}")
    if seqs.shape[1] < t_in + t_out:
        raise ConfigError(f"sequences have {seqs.shape[1]} frames, "
                          f"need at least {t_in + t_out}")
    return seqs[:, :t_in], seqs[:, t_in:t_in + t_out]


def evaluate(params: mdl.ModelParams, seqs: np.ndarray, config: mdl.ModelConfig):
    """(model MSE, persistence MSE) over held-out sequences.

    The persistence baseline repeats the last observed frame across the
    predicted horizon; beating it is the minimum bar for having learned any
    dynamics at all.
    """
    obs, tgt = _split_windows(seqs, config)
    pred_frames = mdl.rollout(obs, config.frames_out, params, config)
    repeat = np.repeat(obs[:, -1:], config.frames_out, axis=1)
    return mse_loss(pred_frames, tgt), mse_loss(repeat, tgt)


# ---------------------------------------------------------------------------
# training loop


def train(params: mdl.ModelParams, data: SequenceData, model_cfg: mdl.ModelConfig,
          schedule: TrainConfig, log: Callable[[dict], None] | None = None):
    """Run the schedule; returns (trained params, metric rows).

    Metric rows are emitted at eval cadence plus the final step, with the
    model-vs-persistence MSE on the validation split and the step's peak
    stored-activation element count.
    """
    _split_windows(data.train, model_cfg)  # validates shapes up front
    _split_windows(data.val, model_cfg)
    rng = np.random.Generator(np.random.PCG64(schedule.seed))
    ledger = MemoryLedger()
    names = [n for n, _ in tree_flatten(params)]
    values = [v for _, v in tree_flatten(params)]
    opt = adam_init(values)
    rows: list[dict] = []
    n_train = data.train.shape[0]

    for step in range(schedule.steps):
        idx = rng.integers(0, n_train, size=schedule.batch_size)
        frames, targets = _split_windows(data.train[idx], model_cfg)
        ledger.reset()
        loss, grads = loss_and_grads(params, frames, targets, model_cfg,
                                     schedule.backward, ledger)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        grads, norm = clip_gradients(grads, schedule.grad_clip)
        if not np.isfinite(norm):
            bad = names[_first_non_finite(grads)]
            raise TrainingDiverged(f"non-finite gradient at step {step} ({bad})")
        values, opt = adam_step(values, grads, opt, lr=schedule.learning_rate,
                                beta1=schedule.beta1, beta2=schedule.beta2,
                                eps=schedule.epsilon)
        params = tree_unflatten(params, values)

        if step % schedule.eval_every == 0 or step == schedule.steps - 1:
            val_mse, baseline_mse = evaluate(params, data.val, model_cfg)
            row = {
                "step": step,
                "train_mse": loss / model_cfg.frames_out,
                "val_mse": val_mse,
                "baseline_mse": baseline_mse,
                "peak_activation_elems": ledger.peak_total,
            }
            rows.append(row)
            if log is not None:
                log(row)
    return params, rows


def _first_non_finite(grads: list) -> int:
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            return i
    return 0


def write_metrics_csv(rows: list[dict], path: str) -> None:
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRIC_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in METRIC_COLUMNS})
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# gradient audit


@dataclass
class CoordCheck:
    name: str
    index: tuple
    analytic: float
    numeric: float
    error: float
    relative: bool


@dataclass
class AuditReport:
    checked: int
    skipped_kinks: int
    max_rel: float
    max_abs: float
    worst: list[CoordCheck] = field(default_factory=list)


def grad_audit(config: mdl.ModelConfig, seed: int = 0, coords: int = 60,
               step: float = 1e-5, small: float = 1e-6,
               skip_kinks: bool = True, init: str = "seeded") -> AuditReport:
    """Check full-model reverse-mode gradients against central differences.

    Runs in float64 on a seeded model and batch.  Coordinates whose +/- step
    probes land on different sides of a ReLU or gate-clamp kink are excluded
    when skip_kinks is set (central differences approximate a derivative only
    where the loss is locally smooth; a kink inside the stencil invalidates
    the probe, not the gradient) and replacements are drawn until `coords`
    clean coordinates have been checked.  Near-zero pairs are compared
    absolutely, everything else relatively.
    """
    cfg = replace(config, precision="f64")
    params = mdl.init_model(cfg, seed, init)
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    frames = rng.uniform(0.0, 1.0, size=(1, cfg.frames_in) + (cfg.height, cfg.width, cfg.channels))
    targets = rng.uniform(0.0, 1.0, size=(1, cfg.frames_out) + (cfg.height, cfg.width, cfg.channels))

    _, flat_grads = loss_and_grads(params, frames, targets, cfg, "stored")
    names = [n for n, _ in tree_flatten(params)]
    values = [v for _, v in tree_flatten(params)]

    def loss_at(tensor_ix, coord, delta):
        probe = [v.copy() if i == tensor_ix else v for i, v in enumerate(values)]
        probe[tensor_ix][coord] += delta
        return sequence_loss(tree_unflatten(params, probe), frames, targets, cfg)

    checked = skipped = 0
    max_rel = max_abs = 0.0
    worst: list[CoordCheck] = []
    attempts = 0
    while checked < coords and attempts < coords * 10:
        attempts += 1
        tensor_ix = int(rng.integers(0, len(values)))
        coord = tuple(int(rng.integers(0, s)) for s in values[tensor_ix].shape)
        with activation_census() as plus:
            f_plus = loss_at(tensor_ix, coord, +step)
        with activation_census() as minus:
            f_minus = loss_at(tensor_ix, coord, -step)
        if skip_kinks and plus != minus:
            skipped += 1
            continue
        numeric = (f_plus - f_minus) / (2.0 * step)
        analytic = float(flat_grads[tensor_ix][coord])
        scale = max(abs(analytic), abs(numeric))
        if scale < small:
            err, relative = abs(analytic - numeric), False
            max_abs = max(max_abs, err)
        else:
            err, relative = abs(analytic - numeric) / scale, True
            max_rel = max(max_rel, err)
        worst.append(CoordCheck(names[tensor_ix], coord, analytic, numeric, err, relative))
        checked += 1
    worst.sort(key=lambda c: c.error, reverse=True)
    return AuditReport(checked, skipped, max_rel, max_abs, worst[:5])
