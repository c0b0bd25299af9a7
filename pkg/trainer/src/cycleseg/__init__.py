"""Cycle-consistent domain adaptation with a segmentation branch."""

from .losses import seg_loss
from .models import ModelBundle, build_models
from .train import EarlyStopper, TrainConfig, lr_schedule, make_trainer, train_step

__version__ = "0.1.0"

__all__ = [
    "EarlyStopper",
    "ModelBundle",
    "TrainConfig",
    "build_models",
    "lr_schedule",
    "make_trainer",
    "seg_loss",
    "train_step",
    "__version__",
]
