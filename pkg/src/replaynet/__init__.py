"""Next-POI prediction with flashback recurrence and smoothed timestamp embeddings."""

__version__ = "0.1.0"

from .recurrent import BACKEND
from .model import ModelConfig, ReplayModel, FlashbackNet, Trainer, build_model, VARIANTS
from .evaluation import evaluate, rank_of_truth, bandwidth_report

__all__ = ["BACKEND", "ModelConfig", "ReplayModel", "FlashbackNet", "Trainer", "build_model", "VARIANTS",
           "evaluate", "rank_of_truth", "bandwidth_report", "__version__"]
