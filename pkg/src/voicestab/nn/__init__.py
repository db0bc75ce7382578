"""Minimal dense/convolutional network engine with exact backprop.

Everything is plain numpy.  Layers cache what their backward pass needs;
a ModelGraph wires layers into a DAG and runs forward/backward in
serialized order.  Training is reproducible from (seed, config, data).
"""

from .graph import Ctx, ModelGraph, Param, graph_from_descriptor
from .layers import (
    BatchNorm,
    Concat,
    Conv2D,
    Dense,
    Dropout,
    Flatten,
    GlobalAvgPool,
    MaxPool2D,
    ReLU,
    Softmax,
)
from .losses import cross_entropy, cross_entropy_grad, one_hot, softmax
from .optim import AdamState, adam_step
from .training import TrainConfig, TrainController, TrainResult, train_loop

__all__ = [
    "AdamState",
    "BatchNorm",
    "Concat",
    "Conv2D",
    "Ctx",
    "Dense",
    "Dropout",
    "Flatten",
    "GlobalAvgPool",
    "MaxPool2D",
    "ModelGraph",
    "Param",
    "ReLU",
    "Softmax",
    "TrainConfig",
    "TrainController",
    "TrainResult",
    "adam_step",
    "cross_entropy",
    "cross_entropy_grad",
    "graph_from_descriptor",
    "one_hot",
    "softmax",
    "train_loop",
]
