"""A small convolutional network written directly against numpy."""

from .model import (
    Conv2d,
    Dense,
    Dropout,
    Flatten,
    Layer,
    MaxPool,
    Model,
    Relu,
    Softmax,
    build_model,
    default_architecture,
    parse_architecture,
)
from .ops import (
    conv2d_backward,
    conv2d_forward,
    dense_backward,
    dense_forward,
    dropout_forward,
    maxpool_backward,
    maxpool_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_cross_entropy,
)
from .optim import AdamState, adam_step
from .serialize import load_model, model_from_bytes, model_to_bytes, save_model

__all__ = [
    "Conv2d", "Dense", "Dropout", "Flatten", "Layer", "MaxPool", "Model", "Relu", "Softmax",
    "build_model", "default_architecture", "parse_architecture",
    "conv2d_backward", "conv2d_forward", "dense_backward", "dense_forward", "dropout_forward",
    "maxpool_backward", "maxpool_forward", "relu_backward", "relu_forward", "softmax",
    "softmax_cross_entropy",
    "AdamState", "adam_step",
    "load_model", "model_from_bytes", "model_to_bytes", "save_model",
]
