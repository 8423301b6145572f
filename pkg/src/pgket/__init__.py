"""Photonic Gaussian-kernel attention: Fock and coherent-state simulators,
the photonic kernel, a small transformer encoder and its training harness."""
from .errors import (
    CapacityError,
    ConfigError,
    DataError,
    DivergenceError,
    FormatError,
    PgketError,
    ShapeError,
    TruncationError,
    UnsupportedModeError,
    ValidationError,
)
from .kernel import KernelConfig, MeshParams, ScoreMatrix, pgksas_exact, pgksas_shots, score_matrix
from .nn import EncoderClassifier, ModelConfig
from .numerics import SeededRng

__version__ = "0.1.0"
