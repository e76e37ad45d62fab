"""End-to-end frame prediction pipeline.

One bijective autoencoder serves as both encoder and decoder.  To predict,
each observed frame is encoded, pushed through the recurrent predictor to
warm its states, and the predictor's final output pair is decoded into the
first future frame.  Longer rollouts chain in feature space: the predictor's
output pair feeds its next step directly, skipping the decode/re-encode trip
that the bijection makes redundant.

Conditional reversibility runs the pipeline backwards: encoding a predicted
frame, inverting the predictor step under the states it consumed, and
decoding recovers the frame the prediction was made from.  Callers get the
pre-step states explicitly from warmup/predict_next, so no hidden bookkeeping
is involved in that audit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autoencoder as ae
from . import predictor as pred
from .coupling import SplitPair
from .errors import ConfigError, ShapeError
from .ops import DTYPES
from .ptree import tree_map
from .tape import value_of


@dataclass(frozen=True)
class ModelConfig:
    height: int = 16
    width: int = 16
    channels: int = 1
    stages: tuple[tuple[int, int], ...] = ((2, 2), (2, 2))
    hidden_multiplier: int = 2
    kernel_size: int = 3
    predictor_units: int = 4
    predictor: str = "gated"
    frames_in: int = 6
    frames_out: int = 2
    precision: str = "f32"

    def __post_init__(self):
        if self.precision not in DTYPES:
            raise ConfigError(f"precision must be one of {sorted(DTYPES)}, got {self.precision!r}")
        if self.predictor not in ("gated", "stacked"):
            raise ConfigError(f"predictor must be 'gated' or 'stacked', got {self.predictor!r}")
        if self.frames_in < 2:
            raise ConfigError(f"frames_in must be >= 2, got {self.frames_in}")
        if self.frames_out < 1:
            raise ConfigError(f"frames_out must be >= 1, got {self.frames_out}")
        self.autoencoder  # runs AutoencoderConfig validation

    @property
    def autoencoder(self) -> ae.AutoencoderConfig:
        return ae.AutoencoderConfig(self.height, self.width, self.channels, self.stages,
                                    self.hidden_multiplier, self.kernel_size)

    @property
    def dtype(self):
        return DTYPES[self.precision]

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        return self.autoencoder.feature_shape

    @property
    def group_shape(self) -> tuple[int, int, int]:
        h, w, c = self.feature_shape
        return h, w, c // 2


@dataclass(frozen=True)
class ModelParams:
    autoencoder: ae.AutoencoderParams
    predictor: object  # GatedPredictor | StackedPredictor


def init_model(config: ModelConfig, seed: int = 0, scheme: str = "seeded") -> ModelParams:
    """Draw all parameters from one PCG64 stream: autoencoder first, then predictor."""
    if scheme not in ("seeded", "zero"):
        raise ConfigError(f"init scheme must be 'seeded' or 'zero', got {scheme!r}")
    rng = np.random.Generator(np.random.PCG64(seed))
    dtype = config.dtype
    auto = ae.init_autoencoder(rng, config.autoencoder, dtype)
    group_c = config.autoencoder.group_channels
    if config.predictor == "gated":
        predictor = pred.init_gated_predictor(rng, group_c, config.predictor_units,
                                              config.kernel_size, dtype)
    else:
        predictor = pred.init_stacked_predictor(rng, group_c * 2, config.predictor_units,
                                                config.kernel_size, dtype)
    params = ModelParams(auto, predictor)
    if scheme == "zero":
        params = tree_map(np.zeros_like, params)
    return params


def cast_params(params: ModelParams, dtype) -> ModelParams:
    return tree_map(lambda a: a.astype(dtype), params)


def encode(x, params: ModelParams, config: ModelConfig) -> SplitPair:
    return ae.encode(x, params.autoencoder, config.autoencoder)


def decode(pair: SplitPair, params: ModelParams, config: ModelConfig):
    return ae.decode(pair, params.autoencoder, config.autoencoder)


def initial_states(params: ModelParams, config: ModelConfig, lead: tuple = ()) -> tuple:
    return pred.zero_states(params.predictor, lead + config.group_shape, config.dtype)


def _check_sequence(frames, config: ModelConfig, minimum: int) -> int:
    shape = np.asarray(value_of(frames)).shape
    want = (config.height, config.width, config.channels)
    if len(shape) < 4 or shape[-3:] != want:
        raise ShapeError(f"sequence shape {shape} does not end in (T,) + {want}")
    t = shape[-4]
    if t < minimum:
        raise ShapeError(f"sequence has {t} frames, needs at least {minimum}")
    return t


def warmup(frames, params: ModelParams, config: ModelConfig, states: tuple | None = None):
    """Push every observed frame through encode + predictor.

    `frames` is (..., T, H, W, C) with T >= 1.  Returns (states', pair) where
    `pair` is the predictor's output for the last observed frame, i.e. the
    feature-space prediction of the first unobserved one.
    """
    t = _check_sequence(frames, config, minimum=1)
    if states is None:
        lead = np.asarray(value_of(frames)).shape[:-4]
        states = initial_states(params, config, lead)
    pair = None
    for i in range(t):
        z = encode(frames[..., i, :, :, :], params, config)
        pair, states = pred.predictor_forward(z, states, params.predictor)
    return states, pair


def predict_next(frame, states: tuple, params: ModelParams, config: ModelConfig):
    """One pipeline step from a frame: returns (next_frame, features, states')."""
    z = encode(frame, params, config)
    pair, states_new = pred.predictor_forward(z, states, params.predictor)
    return decode(pair, params, config), pair, states_new


def rollout(frames, k: int, params: ModelParams, config: ModelConfig):
    """Predict k future frames after warming up on `frames`; stacks along time."""
    if k < 1:
        raise ConfigError(f"rollout length must be >= 1, got {k}")
    states, pair = warmup(frames, params, config)
    outputs = []
    for i in range(k):
        if i > 0:
            pair, states = pred.predictor_forward(pair, states, params.predictor)
        outputs.append(decode(pair, params, config))
    return np.stack([value_of(f) for f in outputs], axis=-4)


def reconstruct_previous(pred_frame, states_before: tuple, params: ModelParams,
                         config: ModelConfig):
    """Invert one pipeline step: encode, undo the predictor step, decode."""
    z = encode(pred_frame, params, config)
    prev = pred.predictor_inverse(z, states_before, params.predictor)
    return decode(prev, params, config)
