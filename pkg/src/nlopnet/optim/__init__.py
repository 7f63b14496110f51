"""Gradient-based training: optimizer steps and the epoch loop."""

from .steps import (ALGORITHMS, AdamState, IPALMState, NonFiniteError, TrainConfig, adam_step, clip_gradients,
                    ipalm_step, sgd_step, soft_threshold)
from .train import TrainResult, attach_loss, batch_order, train
