"""End-to-end neural speaker diarization with embedding demultiplexing."""

from ._core import (
    AssignmentError,
    CheckpointError,
    ConfigError,
    Corpus,
    DerError,
    DimensionError,
    MixtureSample,
    Model,
    ModelConfig,
    RttmError,
    TrainConfig,
    assign,
    der,
    generate_corpus,
    gradcheck,
    gradcheck_components,
    model_preset,
    train,
    train_preset,
)

__all__ = [
    "AssignmentError",
    "CheckpointError",
    "ConfigError",
    "Corpus",
    "DerError",
    "DimensionError",
    "MixtureSample",
    "Model",
    "ModelConfig",
    "RttmError",
    "TrainConfig",
    "assign",
    "der",
    "generate_corpus",
    "gradcheck",
    "gradcheck_components",
    "model_preset",
    "train",
    "train_preset",
]
