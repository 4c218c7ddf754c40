"""
Training, pre-training runs, evaluation and exports.

Only the step-level training API is re-exported here; import the run-level
modules (``pretraining``, ``evaluation``, ``exports``) directly.
"""

from .training import OptimConfig, TrainMode, TrainState, meta_train_step, plain_train_step

__all__ = ["OptimConfig", "TrainMode", "TrainState", "meta_train_step", "plain_train_step"]
