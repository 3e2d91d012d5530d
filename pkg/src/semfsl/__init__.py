"""Semantics-driven attentive few-shot classification over precomputed features."""

from .databank import FeatureBank, SynthSpec, load_bank, save_bank, split_view, synth_generate
from .episodes import Episode, NoiseConfig, inject_noise, sample_episode
from .errors import (
    ConfigurationError,
    CorruptionError,
    DimensionError,
    FormatError,
    MissingEmbeddingError,
    ParseError,
    SemFSLError,
    UsageError,
    ValidationError,
)
from .estimators import PrototypeClassifier, SemanticMetaLearner
from .evaluation import EvalResult, attention_report, confidence_interval, evaluate
from .model import VARIANTS, HeadConfig, HeadParams, load_checkpoint, save_checkpoint
from .semstore import EmbeddingTable, build_table, load_word_vectors
from .trainer import TrainConfig, TrainLog, select_alpha, train

__version__ = "0.1.0"

__all__ = [
    "VARIANTS",
    "ConfigurationError",
    "CorruptionError",
    "DimensionError",
    "EmbeddingTable",
    "Episode",
    "EvalResult",
    "FeatureBank",
    "FormatError",
    "HeadConfig",
    "HeadParams",
    "MissingEmbeddingError",
    "NoiseConfig",
    "ParseError",
    "PrototypeClassifier",
    "SemFSLError",
    "SemanticMetaLearner",
    "SynthSpec",
    "TrainConfig",
    "TrainLog",
    "UsageError",
    "ValidationError",
    "attention_report",
    "build_table",
    "confidence_interval",
    "evaluate",
    "inject_noise",
    "load_bank",
    "load_checkpoint",
    "load_word_vectors",
    "sample_episode",
    "save_bank",
    "save_checkpoint",
    "select_alpha",
    "split_view",
    "synth_generate",
    "train",
]
