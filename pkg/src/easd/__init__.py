"""EEG-based attended speaker detection from pre-enrolled speaker embeddings."""

from .config import RunConfig, load_config
from .data import SplitSpec, SynthSpec, enroll_speaker, make_pairs, split_dataset, synth_generate, window_trial
from .dsp import PreprocConfig, PreprocTrial, RawTrial, preprocess_pipeline
from .errors import ConfigError, DataError, DivergenceError, EasdError, FormatError, ShapeError
from .metrics import accuracy, auc, eer, embedding_similarity_matrix
from .model import EasdModel, HyperParams, TrainHistory, detect_attention, detect_match, train

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "load_config",
    "SplitSpec",
    "SynthSpec",
    "enroll_speaker",
    "make_pairs",
    "split_dataset",
    "synth_generate",
    "window_trial",
    "PreprocConfig",
    "PreprocTrial",
    "RawTrial",
    "preprocess_pipeline",
    "ConfigError",
    "DataError",
    "DivergenceError",
    "EasdError",
    "FormatError",
    "ShapeError",
    "accuracy",
    "auc",
    "eer",
    "embedding_similarity_matrix",
    "EasdModel",
    "HyperParams",
    "TrainHistory",
    "detect_attention",
    "detect_match",
    "train",
]
