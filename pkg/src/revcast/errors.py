"""Exception types shared across the package."""

from __future__ import annotations


class ShapeError(ValueError):
    """An array argument has the wrong rank, extent, or channel count."""


class ConfigError(ValueError):
    """A configuration file or option set is malformed or inconsistent."""


class TensorFileError(ValueError):
    """A tensor or checkpoint file is truncated, corrupt, or mislabeled."""


class TrainingDiverged(RuntimeError):
    """The training loss or a gradient became non-finite."""
