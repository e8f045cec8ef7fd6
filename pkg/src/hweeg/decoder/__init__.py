"""Compact convolutional letter decoder."""

from .network import EEGNetConfig, ModelWeights, backward, cross_entropy, forward, init_weights
from .training import (TrainConfig, TrainHistory, predict, predict_averaged, predict_proba,
                       random_shift, train)

__all__ = [
    "EEGNetConfig", "ModelWeights", "TrainConfig", "TrainHistory", "backward", "cross_entropy",
    "forward", "init_weights", "predict", "predict_averaged", "predict_proba", "random_shift", "train",
]
