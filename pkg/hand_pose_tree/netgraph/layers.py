# hand_pose_tree/netgraph/layers.py

"""
Capas diferenciables en numpy (NCHW, float64).

Cada capa guarda en ``forward`` lo que su ``backward`` necesita; ``backward``
devuelve el gradiente de cada entrada y deja el de sus parámetros en ``grads``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hand_pose_tree.errors import InvalidParameterError, ShapeMismatchError

CONV3 = "conv3x3"
CONV6 = "conv6x6"
MAXPOOL = "maxpool2x2"
RELU = "relu"
DENSE = "dense"
DROPOUT = "dropout"
CONCAT = "concat"
SPLIT = "split"
LAYER_KINDS = (CONV3, CONV6, MAXPOOL, RELU, DENSE, DROPOUT, CONCAT, SPLIT)


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    width: int = 0
    kernel: int = 0
    rate: float = 0.0
    init: str = "fan_in"

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise InvalidParameterError(f"tipo de capa desconocido '{self.kind}'")
        if self.kind in (CONV3, CONV6, DENSE) and self.width <= 0:
            raise InvalidParameterError(f"{self.kind}: anchura debe ser > 0 ({self.width})")
        if self.kind == DROPOUT and not 0.0 <= self.rate < 1.0:
            raise InvalidParameterError(f"tasa de dropout fuera de [0, 1): {self.rate}")
        if self.init not in ("fan_in", "zeros"):
            raise InvalidParameterError(f"inicialización desconocida '{self.init}'")

    def as_dict(self) -> dict:
        return {"kind": self.kind, "width": self.width, "kernel": self.kernel, "rate": self.rate, "init": self.init}


def conv3x3(width: int) -> LayerSpec:
    return LayerSpec(CONV3, width=width, kernel=3)


def conv6x6(width: int, kernel: int = 6) -> LayerSpec:
    """Bloque 6: convolución 'valid' que reduce el mapa a 1x1; ``kernel`` se ajusta al mapa (6 o 3)."""
    return LayerSpec(CONV6, width=width, kernel=kernel)


def dense(width: int, init: str = "fan_in") -> LayerSpec:
    return LayerSpec(DENSE, width=width, init=init)


def dropout(rate: float) -> LayerSpec:
    return LayerSpec(DROPOUT, rate=rate)


MAXPOOL_SPEC = LayerSpec(MAXPOOL)
RELU_SPEC = LayerSpec(RELU)
CONCAT_SPEC = LayerSpec(CONCAT)
SPLIT_SPEC = LayerSpec(SPLIT)


@dataclass
class Layer:
    spec: LayerSpec
    name: str
    params: dict = field(default_factory=dict)
    grads: dict = field(default_factory=dict)
    cache: Optional[tuple] = None

    def output_shape(self, shapes: list) -> tuple:
        return shapes[0]

    def init_params(self, shapes: list, rng: np.random.Generator) -> None:
        pass

    def forward(self, inputs: list, train: bool, rng: Optional[np.random.Generator]) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> list:
        raise NotImplementedError


def _fan_in_uniform(rng, shape, fan_in):
    limit = math.sqrt(6.0 / fan_in)
    # valores representables en float32 para que el checkpoint sea exacto
    return rng.uniform(-limit, limit, size=shape).astype(np.float32).astype(np.float64)


class Conv2D(Layer):
    """Convolución de paso 1: 3x3 con relleno 'same', 6x6 'valid'."""

    @property
    def padding(self) -> int:
        return 1 if self.spec.kind == CONV3 else 0

    def output_shape(self, shapes):
        c, h, w = shapes[0]
        k, p = self.spec.kernel, self.padding
        if h + 2 * p < k or w + 2 * p < k:
            raise ShapeMismatchError(f"{self.name}: mapa {h}x{w} menor que el núcleo {k}")
        return (self.spec.width, h + 2 * p - k + 1, w + 2 * p - k + 1)

    def init_params(self, shapes, rng):
        c = shapes[0][0]
        k = self.spec.kernel
        shape = (self.spec.width, c, k, k)
        if self.spec.init == "zeros":
            self.params["W"] = np.zeros(shape)
        else:
            self.params["W"] = _fan_in_uniform(rng, shape, c * k * k)
        self.params["b"] = np.zeros(self.spec.width)

    def forward(self, inputs, train, rng):
        x = inputs[0]
        p, k = self.padding, self.spec.kernel
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))
        out = np.tensordot(windows, self.params["W"], axes=([1, 4, 5], [1, 2, 3]))
        self.cache = (x.shape, windows)
        return out.transpose(0, 3, 1, 2) + self.params["b"][None, :, None, None]

    def backward(self, grad):
        x_shape, windows = self.cache
        k, p = self.spec.kernel, self.padding
        w = self.params["W"]
        self.grads["W"] = np.tensordot(grad, windows, axes=([0, 2, 3], [0, 2, 3]))
        self.grads["b"] = grad.sum(axis=(0, 2, 3))
        gp = np.pad(grad, ((0, 0), (0, 0), (k - 1, k - 1), (k - 1, k - 1)))
        g_windows = sliding_window_view(gp, (k, k), axis=(2, 3))
        flipped = w[:, :, ::-1, ::-1]
        dxp = np.tensordot(g_windows, flipped, axes=([1, 4, 5], [0, 2, 3])).transpose(0, 3, 1, 2)
        h, wd = x_shape[2], x_shape[3]
        return [dxp[:, :, p:p + h, p:p + wd]]


class MaxPool2x2(Layer):
    def output_shape(self, shapes):
        c, h, w = shapes[0]
        if h % 2 or w % 2:
            raise ShapeMismatchError(f"{self.name}: mapa {h}x{w} no divisible por 2")
        return (c, h // 2, w // 2)

    def forward(self, inputs, train, rng):
        x = inputs[0]
        n, c, h, w = x.shape
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        arg = blocks.argmax(axis=-1)
        self.cache = (x.shape, arg)
        return np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        shape, arg = self.cache
        n, c, h, w = shape
        blocks = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=-1)
        dx = blocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)
        return [dx]


class ReLU(Layer):
    def forward(self, inputs, train, rng):
        x = inputs[0]
        self.cache = (x > 0.0,)
        return np.where(self.cache[0], x, 0.0)

    def backward(self, grad):
        return [np.where(self.cache[0], grad, 0.0)]


class Dense(Layer):
    def output_shape(self, shapes):
        return (self.spec.width,)

    def init_params(self, shapes, rng):
        fan_in = int(np.prod(shapes[0]))
        shape = (fan_in, self.spec.width)
        if self.spec.init == "zeros":
            self.params["W"] = np.zeros(shape)
        else:
            self.params["W"] = _fan_in_uniform(rng, shape, fan_in)
        self.params["b"] = np.zeros(self.spec.width)

    def forward(self, inputs, train, rng):
        x = inputs[0]
        flat = x.reshape(x.shape[0], -1)
        self.cache = (x.shape, flat)
        return flat @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        shape, flat = self.cache
        self.grads["W"] = flat.T @ grad
        self.grads["b"] = grad.sum(axis=0)
        return [(grad @ self.params["W"].T).reshape(shape)]


class Dropout(Layer):
    """Dropout invertido: escala 1/(1-p) en entrenamiento, identidad en evaluación."""

    def forward(self, inputs, train, rng):
        x = inputs[0]
        rate = self.spec.rate
        if not train or rate == 0.0:
            self.cache = (None,)
            return x
        if rng is None:
            raise InvalidParameterError(f"{self.name}: dropout en entrenamiento requiere un generador")
        mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
        self.cache = (mask,)
        return x * mask

    def backward(self, grad):
        mask = self.cache[0]
        return [grad if mask is None else grad * mask]


class Concat(Layer):
    def output_shape(self, shapes):
        if any(len(s) != 1 for s in shapes):
            raise ShapeMismatchError(f"{self.name}: concat solo admite vectores, recibido {shapes}")
        return (sum(s[0] for s in shapes),)

    def forward(self, inputs, train, rng):
        flats = [x.reshape(x.shape[0], -1) for x in inputs]
        self.cache = (np.cumsum([f.shape[1] for f in flats])[:-1],)
        return np.concatenate(flats, axis=1)

    def backward(self, grad):
        return list(np.split(grad, self.cache[0], axis=1))


class Split(Layer):
    """Bifurcación: identidad cuyos consumidores acumulan gradiente."""

    def forward(self, inputs, train, rng):
        return inputs[0]

    def backward(self, grad):
        return [grad]


LAYER_CLASSES = {
    CONV3: Conv2D,
    CONV6: Conv2D,
    MAXPOOL: MaxPool2x2,
    RELU: ReLU,
    DENSE: Dense,
    DROPOUT: Dropout,
    CONCAT: Concat,
    SPLIT: Split,
}


def make_layer(spec: LayerSpec, name: str) -> Layer:
    return LAYER_CLASSES[spec.kind](spec, name)
