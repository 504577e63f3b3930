"""From-scratch 1-D CNN engine for the time-distributed sleep stager."""

import numpy as np

from .io import load_weights, save_weights
from .layers import conv1d, dense, global_maxpool, maxpool1d, softmax, softmax_xent, spatial_dropout
from .model import ModelConfig, SleepNet
from .train import Adam, ReduceLROnPlateau, TrainConfig, TrainResult, adam_step, fit, reduce_lr_on_plateau

__all__ = [
    "Adam",
    "ModelConfig",
    "ReduceLROnPlateau",
    "SleepNet",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "conv1d",
    "dense",
    "fit",
    "global_maxpool",
    "load_weights",
    "make_sequences",
    "maxpool1d",
    "reduce_lr_on_plateau",
    "save_weights",
    "softmax",
    "softmax_xent",
    "spatial_dropout",
]


def make_sequences(epochs, seq_len: int = 1):
    """Group epochs into [n, seq_len, samples] windows of consecutive epochs of one night.

    Windows never cross nights; a night's trailing remainder shorter than
    ``seq_len`` is dropped.
    """
    xs, ys = [], []
    for _, night in epochs.by_night():
        n = (len(night) // seq_len) * seq_len
        if n == 0:
            continue
        xs.append(night.samples[:n].reshape(-1, seq_len, night.samples.shape[1]))
        ys.append(night.labels[:n].reshape(-1, seq_len).astype(np.int64))
    if not xs:
        return np.zeros((0, seq_len, epochs.samples.shape[1]), np.float32), np.zeros((0, seq_len), np.int64)
    return np.concatenate(xs).astype(np.float32), np.concatenate(ys)
