"""Weakly supervised temporal grounding with Gaussian mixture proposals."""
from .config import GroundingConfig, load_config, save_config
from .data import GroundingSample, make_synthetic_corpus, read_corpus, write_corpus
from .inference import PredictionRecord, predict, vote_select
from .metrics import evaluate, format_report
from .model import PPSModel
from .training import train

__all__ = [
    "GroundingConfig", "GroundingSample", "PPSModel", "PredictionRecord", "evaluate", "format_report",
    "load_config", "make_synthetic_corpus", "predict", "read_corpus", "save_config", "train",
    "vote_select", "write_corpus",
]
__version__ = "0.1.0"
