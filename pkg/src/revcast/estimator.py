"""Estimator facade following scikit-learn's fit/predict conventions.

SequencePredictor wraps model construction, training and rollout behind the
familiar estimator surface so the package plugs into sklearn tooling
(get_params/set_params, clone, pipelines that pass arrays through).  The
functional API underneath remains the primary interface; this class adds no
behavior of its own.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .config import parse_stages
from .errors import ShapeError
from .model import ModelConfig, init_model, rollout
from .training import SequenceData, TrainConfig, evaluate, train


def check_sequence_array(X, name: str = "X") -> np.ndarray:
    """Validate a batch of frame sequences; returns a float64 (N,T,H,W,C) array.

    A single 4-d sequence is promoted to a batch of one.
    """
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim == 4:
        arr = arr[None]
    if arr.ndim != 5:
        raise ShapeError(f"{name} must have shape (N, T, H, W, C), got {arr.shape}")
    if any(s < 1 for s in arr.shape):
        raise ShapeError(f"{name} has an empty axis: {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ShapeError(f"{name} contains non-finite values")
    return arr


class SequencePredictor(BaseEstimator):
    """Video sequence predictor with a reversible feature stack.

    Frame geometry (H, W, C) is inferred from the training data in fit; the
    constructor only fixes architecture and schedule choices.  `predict`
    continues each input sequence by `frames_out` frames (or an explicit
    horizon), and `score` returns negative prediction MSE so that greater is
    better, as sklearn expects.
    """

    def __init__(self, stages="2x2,2x2", hidden_multiplier=2, kernel_size=3,
                 predictor_units=4, predictor="gated", frames_in=6, frames_out=2,
                 precision="f32", steps=200, batch_size=8, learning_rate=2e-4,
                 grad_clip=5.0, eval_every=100, val_fraction=0.1,
                 backward="reversible", seed=0, verbose=False):
        self.stages = stages
        self.hidden_multiplier = hidden_multiplier
        self.kernel_size = kernel_size
        self.predictor_units = predictor_units
        self.predictor = predictor
        self.frames_in = frames_in
        self.frames_out = frames_out
        self.precision = precision
        self.steps = steps
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.grad_clip = grad_clip
        self.eval_every = eval_every
        self.val_fraction = val_fraction
        self.backward = backward
        self.seed = seed
        self.verbose = verbose

    # -- fitting -----------------------------------------------------------

    def _model_config(self, h: int, w: int, c: int) -> ModelConfig:
        stages = self.stages
        if isinstance(stages, str):
            stages = parse_stages(stages)
        return ModelConfig(height=h, width=w, channels=c, stages=tuple(stages),
                           hidden_multiplier=self.hidden_multiplier,
                           kernel_size=self.kernel_size,
                           predictor_units=self.predictor_units,
                           predictor=self.predictor, frames_in=self.frames_in,
                           frames_out=self.frames_out, precision=self.precision)

    def fit(self, X, y=None):
        """Train on sequences X of shape (N, T, H, W, C); y is ignored."""
        X = check_sequence_array(X)
        n, t, h, w, c = X.shape
        config = self._model_config(h, w, c)
        if t < config.frames_in + config.frames_out:
            raise ShapeError(f"sequences have {t} frames, need at least "
                             f"{config.frames_in + config.frames_out}")
        n_val = int(round(self.val_fraction * n))
        n_val = min(max(n_val, 1), n - 1) if n > 1 else 0
        data = SequenceData(train=X[: n - n_val] if n_val else X,
                            val=X[n - n_val:] if n_val else X)
        schedule = TrainConfig(steps=self.steps,
                               batch_size=min(self.batch_size, len(data.train)),
                               learning_rate=self.learning_rate,
                               grad_clip=self.grad_clip, eval_every=self.eval_every,
                               seed=self.seed, backward=self.backward)
        log = (lambda row: print(self._format_row(row))) if self.verbose else None
        params = init_model(config, self.seed)
        self.config_ = config
        self.params_, self.history_ = train(params, data, config, schedule, log=log)
        return self

    @staticmethod
    def _format_row(row: dict) -> str:
        return (f"step {row['step']:>6d}  train {row['train_mse']:.6f}  "
                f"val {row['val_mse']:.6f}  baseline {row['baseline_mse']:.6f}")

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise NotFittedError("this SequencePredictor has not been fitted yet; "
                                 "call fit before predict or score")

    # -- inference ---------------------------------------------------------

    def predict(self, X, steps: int | None = None) -> np.ndarray:
        """Continue each sequence in X by `steps` frames (default frames_out)."""
        self._require_fitted()
        X = check_sequence_array(X)
        cfg = self.config_
        if X.shape[2:] != (cfg.height, cfg.width, cfg.channels):
            raise ShapeError(f"frame shape {X.shape[2:]} does not match the fitted "
                             f"model's {(cfg.height, cfg.width, cfg.channels)}")
        k = cfg.frames_out if steps is None else int(steps)
        return rollout(X.astype(cfg.dtype), k, self.params_, cfg)

    def score(self, X, y=None) -> float:
        """Negative prediction MSE over the trailing frames_out of each sequence."""
        self._require_fitted()
        X = check_sequence_array(X)
        model_mse, _ = evaluate(self.params_, X.astype(self.config_.dtype), self.config_)
        return -model_mse
