"""Reversible video prediction: bijective frame autoencoding, conditionally
invertible recurrent prediction, and memory-lean training that reconstructs
activations instead of storing them."""

from .autoencoder import AutoencoderConfig
from .coupling import SplitPair
from .errors import ConfigError, ShapeError, TensorFileError, TrainingDiverged
from .estimator import SequencePredictor, check_sequence_array
from .model import (ModelConfig, ModelParams, cast_params, decode, encode,
                    init_model, initial_states, predict_next,
                    reconstruct_previous, rollout, warmup)
from .tape import MemoryLedger
from .training import (AuditReport, SequenceData, TrainConfig, evaluate,
                       grad_audit, loss_and_grads, train)
from .verify import TOLERANCES, run_verification

__version__ = "0.1.0"

__all__ = [
    "AuditReport",
    "AutoencoderConfig",
    "ConfigError",
    "MemoryLedger",
    "ModelConfig",
    "ModelParams",
    "SequenceData",
    "SequencePredictor",
    "ShapeError",
    "SplitPair",
    "TensorFileError",
    "TOLERANCES",
    "TrainConfig",
    "TrainingDiverged",
    "cast_params",
    "check_sequence_array",
    "decode",
    "encode",
    "evaluate",
    "grad_audit",
    "init_model",
    "initial_states",
    "loss_and_grads",
    "predict_next",
    "reconstruct_previous",
    "rollout",
    "run_verification",
    "train",
    "warmup",
    "__version__",
]
