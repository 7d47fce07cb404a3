"""Small float64 neural-network kernels, optimizers and checkpoints."""

from .checkpoint import CheckpointError, load_checkpoint, restore_params, save_checkpoint
from .layers import (Conv2d, ConvTranspose2d, Dense, Flatten, MeanPool, Module, NonFiniteError,
                     Param, ReLU, Reshape, Sequential, ShapeError, Sigmoid, Softmax, Tanh,
                     forward_backward, mlp)
from .optim import (Adam, NonFiniteGradientError, TrainSchedule, clip_global_norm, global_norm,
                    lr_at, train_step)

__all__ = [
    "Adam", "CheckpointError", "Conv2d", "ConvTranspose2d", "Dense", "Flatten", "MeanPool",
    "Module", "NonFiniteError", "NonFiniteGradientError", "Param", "ReLU", "Reshape",
    "Sequential", "ShapeError", "Sigmoid", "Softmax", "Tanh", "TrainSchedule",
    "clip_global_norm", "forward_backward", "global_norm", "load_checkpoint", "lr_at", "mlp",
    "restore_params", "save_checkpoint", "train_step",
]
