"""Small synthetic datasets and models shared across tests."""

import numpy as np

from mibci.cnn import Conv2d, Dense, Flatten, MaxPool, Relu, Softmax, build_model
from mibci.dataset import DatasetSplit, LabeledSample

DIMS = (4, 8)


def separable_samples(n=16, dims=DIMS, tag="train"):
    """Half constant-0 images (class 0), half constant-1 images (class 1)."""
    out = []
    for i in range(n):
        c = i % 2
        out.append(LabeledSample(np.full(dims, float(c)), c, ("T0", "T1")[c], (tag, "R", float(i))))
    return out


def separable_split(n_train=16, n_test=4):
    return DatasetSplit(separable_samples(n_train), separable_samples(n_test, tag="test"), ("T0", "T1"))


def tiny_layers(dims=DIMS, n_classes=2, channels=4):
    h, w = dims
    return [
        Conv2d(1, channels, 3, pad=1), Relu(), MaxPool(2, 2), Flatten(),
        Dense(channels * (h // 2) * (w // 2), n_classes), Softmax(),
    ]


def tiny_model(seed=0, dims=DIMS, n_classes=2, class_names=("T0", "T1"), norm_stats=None):
    return build_model(tiny_layers(dims, n_classes), (1, *dims), seed,
                       class_names=class_names, norm_stats=norm_stats)
