"""
Training loop, configuration and checkpoints.
"""

from .checkpoint import save_checkpoint, load_checkpoint
from .trainer import TrainConfig, TrainResult, Trainer, train
