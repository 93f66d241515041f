"""Paired image-to-image translation with cyclic-synthesized and cyclic-discriminative losses."""

from .core import (
    ABLATION_PRESETS,
    METHOD_PRESETS,
    ImageTensor,
    LossPreset,
    LossTerm,
    LossWeights,
    PairedSample,
    ValueRange,
    denormalize,
    normalize,
    preset,
)
from .trainer import TrainConfig, infer, init_state, load_state, train

__version__ = "0.1.0"

__all__ = [
    "ABLATION_PRESETS",
    "METHOD_PRESETS",
    "ImageTensor",
    "LossPreset",
    "LossTerm",
    "LossWeights",
    "PairedSample",
    "TrainConfig",
    "ValueRange",
    "denormalize",
    "infer",
    "init_state",
    "load_state",
    "normalize",
    "preset",
    "train",
]
