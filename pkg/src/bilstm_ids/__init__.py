"""BiLSTM-CNN hybrid intrusion detection for smart-home IoT traffic, in numpy."""

from .model import (Model, ModelConfig, build_model, count_params, init_params,
                    load_checkpoint, save_checkpoint)
from .training import TrainConfig, TrainHistory, evaluate, train

__version__ = "0.1.0"

__all__ = ["Model", "ModelConfig", "TrainConfig", "TrainHistory", "build_model", "count_params",
           "evaluate", "init_params", "load_checkpoint", "save_checkpoint", "train"]
