"""Two-way frame autoencoder built from pixel shuffles and coupling blocks.

Encoding runs the step list forward (shuffle, split, coupling blocks, with a
merge/shuffle/re-split between stages); decoding runs the very same list
backwards with each step inverted.  There is no second set of weights and no
skip path: the decoder is the encoder's inverse by construction, so
`decode(encode(x))` differs from `x` only by floating-point rounding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coupling import CouplingParams, SplitPair, coupling_forward, coupling_inverse, init_coupling
from .errors import ConfigError, ShapeError
from .tape import concat2, pixel_shuffle_down, pixel_shuffle_up, split2, value_of


@dataclass(frozen=True)
class AutoencoderConfig:
    """Frame geometry plus the per-stage (shuffle factor, block count) plan."""

    height: int
    width: int
    channels: int
    stages: tuple[tuple[int, int], ...] = ((2, 2), (2, 2))
    hidden_multiplier: int = 2
    kernel_size: int = 3

    def __post_init__(self):
        if not self.stages:
            raise ConfigError("autoencoder needs at least one stage")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.hidden_multiplier < 1:
            raise ConfigError(f"hidden_multiplier must be >= 1, got {self.hidden_multiplier}")
        first_n = self.stages[0][0]
        if first_n < 2:
            raise ConfigError("the first stage must shuffle with factor >= 2")
        if (self.channels * first_n * first_n) % 2:
            raise ConfigError(
                f"channels*n^2 = {self.channels * first_n * first_n} after the first "
                "shuffle must be even to split into equal groups")
        h, w = self.height, self.width
        for i, (n, blocks) in enumerate(self.stages):
            if n < 1:
                raise ConfigError(f"stage {i}: shuffle factor must be >= 1, got {n}")
            if blocks < 1:
                raise ConfigError(f"stage {i}: block count must be >= 1, got {blocks}")
            if h % n or w % n:
                raise ConfigError(f"stage {i}: {h}x{w} not divisible by shuffle factor {n}")
            h, w = h // n, w // n

    @property
    def feature_shape(self) -> tuple[int, int, int]:
        h, w, c = self.height, self.width, self.channels
        for n, _ in self.stages:
            h, w, c = h // n, w // n, c * n * n
        return h, w, c

    @property
    def group_channels(self) -> int:
        return self.feature_shape[2] // 2

    @property
    def total_blocks(self) -> int:
        return sum(blocks for _, blocks in self.stages)


@dataclass(frozen=True)
class AutoencoderParams:
    """Coupling blocks in encode order (stage by stage)."""

    blocks: tuple[CouplingParams, ...]


# -- step list ---------------------------------------------------------------
#
# The encoder is compiled to a flat list of primitive steps so that encoding,
# decoding, and the block-at-a-time reconstruction walk used by the reversible
# backward all share one definition of "what happens in what order".


@dataclass(frozen=True)
class ShuffleStep:
    n: int


@dataclass(frozen=True)
class SplitStep:
    pass


@dataclass(frozen=True)
class MergeStep:
    pass


@dataclass(frozen=True)
class BlockStep:
    index: int
    swap: bool


def build_steps(config: AutoencoderConfig) -> tuple:
    steps: list = []
    block_index = 0
    for stage, (n, blocks) in enumerate(config.stages):
        if stage > 0:
            steps.append(MergeStep())
        steps.append(ShuffleStep(n))
        steps.append(SplitStep())
        for _ in range(blocks):
            # global 0-based index: even blocks update g2 first, odd blocks swap roles
            steps.append(BlockStep(block_index, swap=bool(block_index % 2)))
            block_index += 1
    return tuple(steps)


def _swapped(xs, swap):
    return (xs[1], xs[0]) if swap else xs


def apply_step(step, xs: tuple, params: AutoencoderParams) -> tuple:
    """One step in encode direction; xs is a 1- or 2-tuple of arrays/Vars."""
    if isinstance(step, ShuffleStep):
        return (pixel_shuffle_down(xs[0], step.n),)
    if isinstance(step, SplitStep):
        return split2(xs[0])
    if isinstance(step, MergeStep):
        return (concat2(xs[0], xs[1]),)
    a, b = _swapped(xs, step.swap)
    out = coupling_forward(SplitPair(a, b), params.blocks[step.index])
    return _swapped((out.g1, out.g2), step.swap)


def invert_step(step, xs: tuple, params: AutoencoderParams) -> tuple:
    """The same step in decode direction."""
    if isinstance(step, ShuffleStep):
        return (pixel_shuffle_up(xs[0], step.n),)
    if isinstance(step, SplitStep):
        return (concat2(xs[0], xs[1]),)
    if isinstance(step, MergeStep):
        return split2(xs[0])
    a, b = _swapped(xs, step.swap)
    out = coupling_inverse(SplitPair(a, b), params.blocks[step.index])
    return _swapped((out.g1, out.g2), step.swap)


def _check_frame(x, config: AutoencoderConfig) -> None:
    shape = np.asarray(value_of(x)).shape
    want = (config.height, config.width, config.channels)
    if len(shape) < 3 or shape[-3:] != want:
        raise ShapeError(f"frame shape {shape} does not end in {want}")


def encode(x, params: AutoencoderParams, config: AutoencoderConfig) -> SplitPair:
    """Frame -> split feature pair (the bijection's forward direction)."""
    _check_frame(x, config)
    xs = (x,)
    for step in build_steps(config):
        xs = apply_step(step, xs, params)
    return SplitPair(*xs)


def decode(pair: SplitPair, params: AutoencoderParams, config: AutoencoderConfig):
    """Split feature pair -> frame, inverting every encode step in reverse."""
    xs = (pair.g1, pair.g2)
    for step in reversed(build_steps(config)):
        xs = invert_step(step, xs, params)
    return xs[0]


def init_autoencoder(rng: np.random.Generator, config: AutoencoderConfig,
                     dtype=np.float32) -> AutoencoderParams:
    """Draw coupling blocks stage by stage in encode order."""
    blocks = []
    c = config.channels
    for n, count in config.stages:
        c = c * n * n
        for _ in range(count):
            blocks.append(init_coupling(rng, c // 2, config.hidden_multiplier,
                                        config.kernel_size, dtype))
    return AutoencoderParams(tuple(blocks))


