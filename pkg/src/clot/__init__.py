"""Unsupervised temporal action segmentation with fused Gromov-Wasserstein transport.

Frame and segment embeddings are trained against pseudo-labels from three
transport problems per video (frame, segment and refined-frame level).
"""
from .core import ClotError, DimensionError, FormatError, InputError, ParameterError, StateError
from .config import TrainConfig, load_config, parse_config
from .ot import Coupling, Marginals, OtConfig, solve_entropic_kot, solve_fused
from .pipeline import SegmentationResult, infer, train
from .evaluation import evaluate

__all__ = [
    "ClotError", "DimensionError", "FormatError", "InputError", "ParameterError", "StateError",
    "TrainConfig", "load_config", "parse_config",
    "Coupling", "Marginals", "OtConfig", "solve_entropic_kot", "solve_fused",
    "SegmentationResult", "infer", "train", "evaluate",
]
__version__ = "0.1.0"
