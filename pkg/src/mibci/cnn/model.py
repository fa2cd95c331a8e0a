"""Layer stack, parameter initialisation and batched forward/backward."""

from __future__ import annotations

import copy
from typing import Sequence

import numpy as np

from ..errors import InvalidSpec, ShapeMismatch
from ..rng import Rng
from . import ops


class Layer:
    kind = "Layer"
    param_names: tuple[str, ...] = ()

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def config(self) -> dict:
        return {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def fan_in(self) -> int:
        return 0

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items())
        return f"{self.kind}({args})"


class Conv2d(Layer):
    kind = "Conv2d"
    param_names = ("weight", "bias")

    def __init__(self, in_ch, out_ch, k, stride=1, pad=0):
        super().__init__()
        self.in_ch, self.out_ch, self.k, self.stride, self.pad = in_ch, out_ch, k, stride, pad

    def config(self):
        return dict(in_ch=self.in_ch, out_ch=self.out_ch, k=self.k, stride=self.stride, pad=self.pad)

    def param_shapes(self):
        return {"weight": (self.out_ch, self.in_ch, self.k, self.k), "bias": (self.out_ch,)}

    def fan_in(self):
        return self.in_ch * self.k * self.k

    def out_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.in_ch:
            raise ShapeMismatch(f"{self!r} cannot take input {in_shape}")
        h = ops.conv_out_size(in_shape[1], self.k, self.stride, self.pad)
        w = ops.conv_out_size(in_shape[2], self.k, self.stride, self.pad)
        if h < 1 or w < 1:
            raise ShapeMismatch(f"{self!r} gives empty output for input {in_shape}")
        return (self.out_ch, h, w)

    def forward(self, x, train, rng):
        self._cache = x
        return ops.conv2d_forward(x, self.params["weight"], self.params["bias"], self.stride, self.pad)

    def backward(self, g):
        gx, gw, gb = ops.conv2d_backward(self._cache, self.params["weight"], g, self.stride, self.pad)
        self.grads = {"weight": gw, "bias": gb}
        return gx


class MaxPool(Layer):
    kind = "MaxPool"

    def __init__(self, k=2, stride=2):
        super().__init__()
        self.k, self.stride = k, stride

    def config(self):
        return dict(k=self.k, stride=self.stride)

    def out_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeMismatch(f"{self!r} needs (C, H, W), got {in_shape}")
        h = ops.conv_out_size(in_shape[1], self.k, self.stride, 0)
        w = ops.conv_out_size(in_shape[2], self.k, self.stride, 0)
        if h < 1 or w < 1:
            raise ShapeMismatch(f"{self!r} gives empty output for input {in_shape}")
        return (in_shape[0], h, w)

    def forward(self, x, train, rng):
        out, arg = ops.maxpool_forward(x, self.k, self.stride)
        self._cache = (arg, x.shape)
        return out

    def backward(self, g):
        arg, shape = self._cache
        return ops.maxpool_backward(g, arg, shape)


class Relu(Layer):
    kind = "Relu"

    def forward(self, x, train, rng):
        self._cache = x
        return ops.relu_forward(x)

    def backward(self, g):
        return ops.relu_backward(self._cache, g)


class Dropout(Layer):
    kind = "Dropout"

    def __init__(self, rate=0.5):
        super().__init__()
        if not 0 <= rate < 1:
            raise InvalidSpec(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def config(self):
        return dict(rate=self.rate)

    def forward(self, x, train, rng):
        out, self._cache = ops.dropout_forward(x, self.rate, train, rng)
        return out

    def backward(self, g):
        return ops.dropout_backward(self._cache, g)


class Flatten(Layer):
    kind = "Flatten"

    def out_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train, rng):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, g):
        return g.reshape(self._cache)


class Dense(Layer):
    kind = "Dense"
    param_names = ("weight", "bias")

    def __init__(self, n_in, n_out):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out

    def config(self):
        return {"in": self.n_in, "out": self.n_out}

    def param_shapes(self):
        return {"weight": (self.n_out, self.n_in), "bias": (self.n_out,)}

    def fan_in(self):
        return self.n_in

    def out_shape(self, in_shape):
        if in_shape != (self.n_in,):
            raise ShapeMismatch(f"{self!r} cannot take input {in_shape}")
        return (self.n_out,)

    def forward(self, x, train, rng):
        self._cache = x
        return ops.dense_forward(x, self.params["weight"], self.params["bias"])

    def backward(self, g):
        gx, gw, gb = ops.dense_backward(self._cache, self.params["weight"], g)
        self.grads = {"weight": gw, "bias": gb}
        return gx


class Softmax(Layer):
    kind = "Softmax"

    def out_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeMismatch(f"Softmax needs a feature vector, got {in_shape}")
        return in_shape

    def forward(self, x, train, rng):
        self._cache = x
        return ops.softmax(x)


LAYER_TYPES = {cls.kind: cls for cls in (Conv2d, MaxPool, Relu, Dropout, Flatten, Dense, Softmax)}


def layer_from_config(kind: str, cfg: dict) -> Layer:
    if kind not in LAYER_TYPES:
        raise InvalidSpec(f"unknown layer type {kind!r}")
    cls = LAYER_TYPES[kind]
    if cls is Dense:
        return Dense(cfg["in"], cfg["out"])
    return cls(**cfg)


def default_architecture(input_shape=(1, 23, 64), n_classes=3) -> list[Layer]:
    """Six 3x3 convolutions in three pairs, with 2x2 max pooling after the
    first two pairs, then flatten, a 128-unit hidden layer with dropout and
    the softmax classifier."""
    c, h, w = input_shape
    h2, w2 = (h // 2) // 2, (w // 2) // 2
    return [
        Conv2d(c, 16, 3, 1, 1), Relu(),
        Conv2d(16, 16, 3, 1, 1), Relu(),
        MaxPool(2, 2),
        Conv2d(16, 32, 3, 1, 1), Relu(),
        Conv2d(32, 32, 3, 1, 1), Relu(),
        MaxPool(2, 2),
        Conv2d(32, 64, 3, 1, 1), Relu(),
        Conv2d(64, 64, 3, 1, 1), Relu(),
        Flatten(),
        Dense(64 * h2 * w2, 128), Relu(),
        Dropout(0.5),
        Dense(128, n_classes),
        Softmax(),
    ]


class Model:
    """An ordered layer stack ending in a single Softmax.

    ``forward`` accepts one image ``(H, W)`` / ``(C, H, W)`` or a batch
    ``(N, C, H, W)``; ``backward`` must follow a ``forward`` on the same batch.
    """

    def __init__(self, layers: Sequence[Layer], input_shape, class_names=None, norm_stats=None,
                 seed: int | None = None, dtype=np.float64):
        self.layers = list(layers)
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = seed
        self.norm_stats = norm_stats
        self.dtype = np.dtype(dtype)
        softmaxes = [i for i, l in enumerate(self.layers) if isinstance(l, Softmax)]
        if softmaxes != [len(self.layers) - 1]:
            raise InvalidSpec("model needs exactly one Softmax, as the last layer")
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.out_shape(shape)
        self.n_classes = shape[0]
        self.class_names = tuple(class_names) if class_names else tuple(
            f"class{i}" for i in range(self.n_classes))
        if len(self.class_names) != self.n_classes:
            raise InvalidSpec(f"{len(self.class_names)} class names for {self.n_classes} outputs")

    # -- parameters ---------------------------------------------------------

    def param_refs(self) -> list[tuple[Layer, str]]:
        return [(l, name) for l in self.layers for name in l.param_names]

    def parameters(self) -> list[np.ndarray]:
        return [l.params[name] for l, name in self.param_refs()]

    def gradients(self) -> list[np.ndarray]:
        return [l.grads[name] for l, name in self.param_refs()]

    def n_params(self) -> int:
        return sum(p.size for p in self.parameters())

    def init_params(self, seed: int) -> "Model":
        """He-normal weights, zero biases. Draws come from one
        :class:`~mibci.rng.Rng` stream in layer order."""
        rng = Rng(seed)
        self.seed = seed
        for layer in self.layers:
            if not layer.param_names:
                continue
            shapes = layer.param_shapes()
            std = np.sqrt(2.0 / layer.fan_in())
            wshape = shapes["weight"]
            w = rng.standard_normal(int(np.prod(wshape))).reshape(wshape) * std
            layer.params = {"weight": w.astype(self.dtype), "bias": np.zeros(shapes["bias"], self.dtype)}
        return self

    def snapshot(self) -> list[np.ndarray]:
        return [p.copy() for p in self.parameters()]

    def restore(self, values: Sequence[np.ndarray]):
        for (layer, name), v in zip(self.param_refs(), values):
            layer.params[name] = np.array(v, dtype=self.dtype, copy=True)

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    # -- passes -------------------------------------------------------------

    def _as_batch(self, x):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim < 4
        if x.ndim == 2:
            x = x[None, None]
        elif x.ndim == 3:
            x = x[None]
        if x.shape[1:] != self.input_shape:
            raise ShapeMismatch(f"input {x.shape[1:]} vs model input {self.input_shape}")
        return x, single

    def forward(self, x, train: bool = False, rng: Rng | None = None) -> np.ndarray:
        """Class probabilities; in eval mode the result is deterministic."""
        if train and rng is None:
            rng = Rng(0 if self.seed is None else self.seed)
        x, single = self._as_batch(x)
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x[0] if single else x

    def logits(self) -> np.ndarray:
        """Pre-softmax activations of the last forward pass."""
        return self.layers[-1]._cache

    def backward(self, labels) -> list[np.ndarray]:
        """Gradients of the mean cross-entropy of the last forward batch."""
        loss, g = ops.softmax_cross_entropy(self.logits(), np.atleast_1d(labels))
        self.last_loss = loss
        for layer in reversed(self.layers[:-1]):
            g = layer.backward(g)
        return self.gradients()

    def predict(self, x) -> np.ndarray:
        """Argmax class per sample (ties to the lowest index)."""
        p = self.forward(x, train=False)
        return np.argmax(p, axis=-1)


def build_model(layers, input_shape, seed, class_names=None, norm_stats=None, dtype=np.float64) -> Model:
    return Model(layers, input_shape, class_names, norm_stats, seed, dtype).init_params(seed)


def parse_architecture(spec: str, input_shape, n_classes: int) -> list[Layer]:
    """Build layers from a compact text spec, or the default stack for ``"default"``.

    Layers are separated by ``;`` or newlines; ``#`` starts a comment::

        conv OUT K [stride=S] [pad=P]
        maxpool K [stride=S]
        dropout RATE
        dense OUT            # OUT may be ``classes``
        relu | flatten | softmax

    Input channel counts and dense input sizes are inferred from the shapes.
    """
    if spec.strip() == "default":
        return default_architecture(tuple(input_shape), n_classes)
    layers: list[Layer] = []
    shape = tuple(int(d) for d in input_shape)
    for raw in spec.replace(";", "\n").splitlines():
        words = raw.split("#", 1)[0].split()
        if not words:
            continue
        kind, args = words[0].lower(), words[1:]
        pos = [a for a in args if "=" not in a]
        kw = dict(a.split("=", 1) for a in args if "=" in a)
        try:
            if kind == "conv":
                layer = Conv2d(shape[0], int(pos[0]), int(pos[1]), int(kw.get("stride", 1)),
                               int(kw.get("pad", 0)))
            elif kind == "maxpool":
                k = int(pos[0]) if pos else 2
                layer = MaxPool(k, int(kw.get("stride", k)))
            elif kind == "dropout":
                layer = Dropout(float(pos[0]))
            elif kind == "dense":
                out = n_classes if pos[0] == "classes" else int(pos[0])
                layer = Dense(int(np.prod(shape)), out)
            elif kind in ("relu", "flatten", "softmax"):
                layer = {"relu": Relu, "flatten": Flatten, "softmax": Softmax}[kind]()
            else:
                raise InvalidSpec(f"unknown layer {kind!r}")
            shape = layer.out_shape(shape)
        except (IndexError, ValueError) as exc:
            if isinstance(exc, InvalidSpec):
                raise
            raise InvalidSpec(f"bad layer spec {raw.strip()!r}: {exc}") from None
        layers.append(layer)
    if not layers:
        raise InvalidSpec("empty architecture")
    return layers
