"""Dense per-cycle RUL prediction for turbofan degradation data."""

__version__ = "0.1.0"

from .dataset import (
    DatasetBundle,
    EngineTrajectory,
    SynthConfig,
    generate_synthetic,
    load_subset,
)
from .errors import (
    ConfigMismatchError,
    CorruptionError,
    DivergenceError,
    IntegrityError,
    MalformedRowError,
    NotFoundError,
    NumericsError,
    ParseError,
    RulforgeError,
    ShapeError,
    ValidationError,
)
from .evaluate import MetricsReport, evaluate_test, nasa_score, predict_curve, rmse
from .model import TcnConfig, TcnModel, build_model, compute_receptive_field, preset_config
from .preprocess import (
    LabeledSequence,
    NormStats,
    apply_normalizer,
    fit_normalizer,
    label_rul,
    make_labeled_sequence,
    trim_random_end,
)
from .train import TrainConfig, TrainReport, load_checkpoint, save_checkpoint, train

__all__ = [
    "__version__",
    "DatasetBundle",
    "EngineTrajectory",
    "SynthConfig",
    "generate_synthetic",
    "load_subset",
    "RulforgeError",
    "ValidationError",
    "ParseError",
    "MalformedRowError",
    "IntegrityError",
    "NotFoundError",
    "ShapeError",
    "NumericsError",
    "DivergenceError",
    "CorruptionError",
    "ConfigMismatchError",
    "MetricsReport",
    "evaluate_test",
    "nasa_score",
    "predict_curve",
    "rmse",
    "TcnConfig",
    "TcnModel",
    "build_model",
    "compute_receptive_field",
    "preset_config",
    "LabeledSequence",
    "NormStats",
    "apply_normalizer",
    "fit_normalizer",
    "label_rul",
    "make_labeled_sequence",
    "trim_random_end",
    "TrainConfig",
    "TrainReport",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
