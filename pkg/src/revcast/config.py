"""Plain-text run configuration: one `key = value` per line, `#` comments.

Every key has a documented default, so an empty file is a valid config.
Unknown keys, duplicate keys, and malformed values are rejected with the
offending line number.  The same renderer produces the canonical text that
checkpoints embed (model keys only) and hash for compatibility checks.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import ConfigError
from .model import ModelConfig
from .training import TrainConfig

_INT_KEYS = {
    "height", "width", "channels", "hidden_multiplier", "kernel_size",
    "predictor_units", "frames_in", "frames_out", "seed", "steps",
    "batch_size", "eval_every",
}
_FLOAT_KEYS = {"learning_rate", "beta1", "beta2", "epsilon", "grad_clip"}
_ENUM_KEYS = {
    "predictor": ("gated", "stacked"),
    "precision": ("f32", "f64"),
    "init": ("seeded", "zero"),
    "backward": ("reversible", "stored"),
}
_PATH_KEYS = {"data_dir", "out_dir"}

DEFAULTS: dict[str, object] = {
    "height": 16,
    "width": 16,
    "channels": 1,
    "stages": "2x2,2x2",
    "hidden_multiplier": 2,
    "kernel_size": 3,
    "predictor_units": 4,
    "predictor": "gated",
    "frames_in": 6,
    "frames_out": 2,
    "precision": "f32",
    "init": "seeded",
    "seed": 0,
    "steps": 2000,
    "batch_size": 8,
    "learning_rate": 2e-4,
    "beta1": 0.9,
    "beta2": 0.999,
    "epsilon": 1e-8,
    "grad_clip": 5.0,
    "eval_every": 100,
    "backward": "reversible",
    "data_dir": "",
    "out_dir": "",
}

MODEL_KEYS = ("height", "width", "channels", "stages", "hidden_multiplier",
              "kernel_size", "predictor_units", "predictor", "frames_in",
              "frames_out", "precision")


@dataclass(frozen=True)
class RunConfig:
    model: ModelConfig
    schedule: TrainConfig
    init: str = "seeded"
    seed: int = 0
    data_dir: str = ""
    out_dir: str = ""


def parse_stages(text: str) -> tuple[tuple[int, int], ...]:
    """Parse "2x2,2x3" into ((factor, blocks), ...)."""
    stages = []
    for part in text.split(","):
        part = part.strip()
        pieces = part.split("x")
        if len(pieces) != 2:
            raise ConfigError(f"stage {part!r} is not FACTORxBLOCKS")
        try:
            n, blocks = int(pieces[0]), int(pieces[1])
        except ValueError:
            raise ConfigError(f"stage {part!r} is not FACTORxBLOCKS") from None
        stages.append((n, blocks))
    return tuple(stages)


def render_stages(stages: tuple[tuple[int, int], ...]) -> str:
    return ",".join(f"{n}x{b}" for n, b in stages)


def _parse_value(key: str, value: str):
    if key in _INT_KEYS:
        try:
            return int(value)
        except ValueError:
            raise ConfigError(f"key {key!r} needs an integer, got {value!r}") from None
    if key in _FLOAT_KEYS:
        try:
            return float(value)
        except ValueError:
            raise ConfigError(f"key {key!r} needs a number, got {value!r}") from None
    if key in _ENUM_KEYS:
        if value not in _ENUM_KEYS[key]:
            raise ConfigError(f"key {key!r} must be one of {_ENUM_KEYS[key]}, got {value!r}")
        return value
    if key == "stages":
        parse_stages(value)  # syntax check here, semantic checks in ModelConfig
        return value
    return value  # path keys


def parse_config_text(text: str) -> RunConfig:
    """Parse config text; every error names the line it came from."""
    values = dict(DEFAULTS)
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in values:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in seen:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        seen.add(key)
        try:
            values[key] = _parse_value(key, value)
        except ConfigError as err:
            raise ConfigError(f"line {lineno}: {err}") from None
    return build_run_config(values)


def build_run_config(values: dict) -> RunConfig:
    model = ModelConfig(
        height=values["height"], width=values["width"], channels=values["channels"],
        stages=parse_stages(values["stages"]),
        hidden_multiplier=values["hidden_multiplier"], kernel_size=values["kernel_size"],
        predictor_units=values["predictor_units"], predictor=values["predictor"],
        frames_in=values["frames_in"], frames_out=values["frames_out"],
        precision=values["precision"],
    )
    schedule = TrainConfig(
        steps=values["steps"], batch_size=values["batch_size"],
        learning_rate=values["learning_rate"], beta1=values["beta1"],
        beta2=values["beta2"], epsilon=values["epsilon"],
        grad_clip=values["grad_clip"], eval_every=values["eval_every"],
        seed=values["seed"], backward=values["backward"],
    )
    return RunConfig(model=model, schedule=schedule, init=values["init"],
                     seed=values["seed"], data_dir=values["data_dir"],
                     out_dir=values["out_dir"])


def load_config(path: str) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config_text(fh.read())
    except OSError as err:
        raise ConfigError(f"cannot read config {path}: {err}") from None


def _format_value(value) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def render_model_config(model: ModelConfig) -> str:
    """Canonical model-key text, embedded and hashed in checkpoints."""
    values = {
        "height": model.height, "width": model.width, "channels": model.channels,
        "stages": render_stages(model.stages),
        "hidden_multiplier": model.hidden_multiplier, "kernel_size": model.kernel_size,
        "predictor_units": model.predictor_units, "predictor": model.predictor,
        "frames_in": model.frames_in, "frames_out": model.frames_out,
        "precision": model.precision,
    }
    return "".join(f"{k} = {_format_value(values[k])}\n" for k in MODEL_KEYS)


def parse_model_config(text: str) -> ModelConfig:
    return parse_config_text(text).model


def config_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def default_config_text() -> str:
    """All keys at their defaults, suitable as a starting config file."""
    return "".join(f"{k} = {_format_value(v)}\n" for k, v in DEFAULTS.items())
