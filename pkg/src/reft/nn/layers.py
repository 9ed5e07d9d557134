"""Layer set of the dense engine.

Activations are NCHW for spatial tensors and NxD after ``flatten`` /
``global_avg_pool`` / ``dense``.  Conv kernels are (Cout, Cin, Kh, Kw) and
dense weights are (out, in).
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class Layer:
    kind: str = ""
    trainable = False

    def __init__(self) -> None:
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None
        # index of the layer feeding this one; None means the previous layer
        self.input_from: int | None = None

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        return in_shape

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def spec(self) -> dict:
        return {"kind": self.kind}

    def flops(self, in_shape: tuple[int, ...]) -> int:
        # one op per output element for parameter-free layers
        return int(np.prod(self.output_shape(in_shape)))

    def clear_cache(self) -> None:
        self._cache = None

    def __repr__(self) -> str:
        args = ", ".join(f"{k}={v}" for k, v in self.spec().items() if k != "kind")
        return f"{type(self).__name__}({args})"


class Conv2d(Layer):
    kind = "conv2d"
    trainable = True

    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel_size: int,
        stride: int = 1,
        padding: int = 0,
        bias: bool = True,
    ) -> None:
        super().__init__()
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ValueError("conv2d hyperparameters must be positive")
        if padding >= kernel_size:
            raise ValueError("conv2d padding must be smaller than the kernel size")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size
        self.stride = stride
        self.padding = padding
        self.bias = bias
        k = kernel_size
        self.params["weight"] = np.zeros((out_channels, in_channels, k, k), np.float32)
        if bias:
            self.params["bias"] = np.zeros(out_channels, np.float32)

    def spec(self) -> dict:
        return {
            "kind": self.kind,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": self.kernel_size,
            "stride": self.stride,
            "padding": self.padding,
            "bias": self.bias,
        }

    @property
    def fan_in(self) -> int:
        return self.in_channels * self.kernel_size**2

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"conv2d expects a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(f"conv2d expects {self.in_channels} input channels, got {c}")
        ho = (h + 2 * self.padding - self.kernel_size) // self.stride + 1
        wo = (w + 2 * self.padding - self.kernel_size) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv2d input {in_shape} is smaller than its kernel")
        return (self.out_channels, ho, wo)

    def flops(self, in_shape):
        cout, ho, wo = self.output_shape(in_shape)
        return cout * ho * wo * self.fan_in

    def _cols(self, x: np.ndarray) -> tuple[np.ndarray, tuple[int, ...]]:
        p, k, s = self.padding, self.kernel_size, self.stride
        if p:
            x = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        n, c, ho, wo = win.shape[:4]
        cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * k * k)
        return cols, (n, c, ho, wo, x.shape[2], x.shape[3])

    def forward(self, x):
        w = self.params["weight"]
        cols, dims = self._cols(x)
        n, _, ho, wo = dims[:4]
        out = cols @ w.reshape(self.out_channels, -1).T
        if self.bias:
            out += self.params["bias"]
        self._cache = (cols, dims)
        return out.reshape(n, ho, wo, self.out_channels).transpose(0, 3, 1, 2)

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("conv2d.backward called before forward")
        cols, (n, c, ho, wo, hp, wp) = self._cache
        k, s, p = self.kernel_size, self.stride, self.padding
        w = self.params["weight"]
        dy2 = dy.transpose(0, 2, 3, 1).reshape(-1, self.out_channels)
        self.grads["weight"] = (dy2.T @ cols).reshape(w.shape)
        if self.bias:
            self.grads["bias"] = dy2.sum(axis=0)
        dcols = (dy2 @ w.reshape(self.out_channels, -1)).reshape(n, ho, wo, c, k, k)
        dx = np.zeros((n, c, hp, wp), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dcols[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        if p:
            dx = dx[:, :, p:-p, p:-p]
        return dx


class Dense(Layer):
    kind = "dense"
    trainable = True

    def __init__(self, in_features: int, units: int, bias: bool = True) -> None:
        super().__init__()
        if in_features < 1 or units < 1:
            raise ValueError("dense hyperparameters must be positive")
        self.in_features = in_features
        self.units = units
        self.bias = bias
        self.params["weight"] = np.zeros((units, in_features), np.float32)
        if bias:
            self.params["bias"] = np.zeros(units, np.float32)

    def spec(self) -> dict:
        return {
            "kind": self.kind,
            "in_features": self.in_features,
            "units": self.units,
            "bias": self.bias,
        }

    @property
    def fan_in(self) -> int:
        return self.in_features

    def output_shape(self, in_shape):
        if len(in_shape) != 1 or in_shape[0] != self.in_features:
            raise ShapeError(f"dense expects ({self.in_features},) input, got {in_shape}")
        return (self.units,)

    def flops(self, in_shape):
        self.output_shape(in_shape)
        return self.units * self.in_features

    def forward(self, x):
        self._cache = x
        out = x @ self.params["weight"].T
        if self.bias:
            out += self.params["bias"]
        return out

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("dense.backward called before forward")
        x = self._cache
        self.grads["weight"] = dy.T @ x
        if self.bias:
            self.grads["bias"] = dy.sum(axis=0)
        return dy @ self.params["weight"]


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("relu.backward called before forward")
        return dy * self._cache


class MaxPool2d(Layer):
    kind = "maxpool2d"

    def __init__(self, kernel_size: int = 2, stride: int | None = None) -> None:
        super().__init__()
        self.kernel_size = kernel_size
        self.stride = stride or kernel_size
        if self.kernel_size < 1 or self.stride < 1:
            raise ValueError("maxpool2d hyperparameters must be positive")

    def spec(self) -> dict:
        return {"kind": self.kind, "kernel_size": self.kernel_size, "stride": self.stride}

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"maxpool2d expects a (C, H, W) input, got {in_shape}")
        c, h, w = in_shape
        ho = (h - self.kernel_size) // self.stride + 1
        wo = (w - self.kernel_size) // self.stride + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"maxpool2d input {in_shape} is smaller than its window")
        return (c, ho, wo)

    def forward(self, x):
        k, s = self.kernel_size, self.stride
        win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
        flat = win.reshape(*win.shape[:4], k * k)
        arg = flat.argmax(axis=-1)
        self._cache = (arg, x.shape)
        return np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("maxpool2d.backward called before forward")
        arg, shape = self._cache
        k, s = self.kernel_size, self.stride
        ho, wo = arg.shape[2:]
        dx = np.zeros(shape, dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                hit = arg == i * k + j
                dx[:, :, i : i + s * ho : s, j : j + s * wo : s] += dy * hit
        return dx


class GlobalAvgPool(Layer):
    kind = "global_avg_pool"

    def output_shape(self, in_shape):
        if len(in_shape) != 3:
            raise ShapeError(f"global_avg_pool expects a (C, H, W) input, got {in_shape}")
        return (in_shape[0],)

    def flops(self, in_shape):
        return int(np.prod(in_shape))

    def forward(self, x):
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("global_avg_pool.backward called before forward")
        n, c, h, w = self._cache
        return np.broadcast_to(dy[:, :, None, None] / (h * w), (n, c, h, w)).copy()


class Flatten(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def flops(self, in_shape):
        return 0

    def forward(self, x):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        if self._cache is None:
            raise RuntimeError("flatten.backward called before forward")
        return dy.reshape(self._cache)


class ResidualAdd(Layer):
    """Adds the output of layer ``source`` (-1: network input) to its input."""

    kind = "residual_add"

    def __init__(self, source: int) -> None:
        super().__init__()
        if source < -1:
            raise ValueError("residual_add source must be a layer index or -1")
        self.source = source

    def spec(self) -> dict:
        return {"kind": self.kind, "source": self.source}

    def forward(self, x, skip=None):
        return x + skip

    def backward(self, dy):
        return dy


LAYER_TYPES = {
    cls.kind: cls
    for cls in (Conv2d, Dense, ReLU, MaxPool2d, GlobalAvgPool, Flatten, ResidualAdd)
}


def layer_spec(layer: Layer) -> dict:
    spec = layer.spec()
    if layer.input_from is not None:
        spec["input_from"] = layer.input_from
    return spec


def layer_from_spec(spec: dict) -> Layer:
    spec = dict(spec)
    kind = spec.pop("kind")
    input_from = spec.pop("input_from", None)
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown layer kind {kind!r}") from None
    layer = cls(**spec)
    layer.input_from = input_from
    return layer


def fed_by(layer: Layer, index: int) -> int:
    """Index of the tensor consumed by ``layer`` sitting at ``index`` (-1: network input)."""
    return index - 1 if layer.input_from is None else layer.input_from


def kaiming_uniform(layer: Layer, rng: np.random.Generator) -> None:
    """He-uniform weights (gain sqrt(2)), zero bias."""
    bound = math.sqrt(6.0 / layer.fan_in)
    w = layer.params["weight"]
    layer.params["weight"] = rng.uniform(-bound, bound, size=w.shape).astype(w.dtype)
    if "bias" in layer.params:
        layer.params["bias"] = np.zeros_like(layer.params["bias"])
