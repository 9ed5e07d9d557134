"""Minimal dense NumPy network engine."""

from .layers import (
    Conv2d,
    Dense,
    Flatten,
    GlobalAvgPool,
    Layer,
    MaxPool2d,
    ReLU,
    ResidualAdd,
    ShapeError,
)
from .losses import cross_entropy_loss, log_softmax, softmax
from .network import Network, count_flops, count_params, serialized_size
from .optim import OptimizerState, adam_step, cosine_anneal_lr, sgd_momentum_step
from .zoo import MODEL_IDS, build_model, cnn_small, mlp_small, resnet8, vgg16

__all__ = [
    "Conv2d",
    "Dense",
    "Flatten",
    "GlobalAvgPool",
    "Layer",
    "MaxPool2d",
    "MODEL_IDS",
    "Network",
    "OptimizerState",
    "ReLU",
    "ResidualAdd",
    "ShapeError",
    "adam_step",
    "build_model",
    "cnn_small",
    "cosine_anneal_lr",
    "count_flops",
    "count_params",
    "cross_entropy_loss",
    "log_softmax",
    "mlp_small",
    "resnet8",
    "serialized_size",
    "sgd_momentum_step",
    "softmax",
    "vgg16",
]
