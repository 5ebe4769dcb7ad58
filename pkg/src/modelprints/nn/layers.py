"""Differentiable layers for small convolutional networks.

Batches are NHWC float arrays; vector activations are (N, D). Every layer
implements ``forward`` (caching what backward needs) and ``backward``
(returning the input gradient and accumulating parameter gradients in
``grads``). Layer instances are therefore single-threaded; trained weights
can be shared by copying.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ToolkitError

__all__ = [
    "LayerSpec",
    "Layer",
    "Conv2d",
    "ReLU",
    "Sigmoid",
    "MaxPool",
    "GlobalAvgPool",
    "Linear",
    "ChannelNorm",
    "Upsample",
    "make_layer",
    "conv2d",
    "relu",
    "sigmoid",
    "maxpool",
    "global_avg_pool",
    "linear",
    "batchless_norm",
    "upsample",
    "softmax_xent_spec",
]


@dataclass
class LayerSpec:
    """Declarative layer description used to build and checkpoint networks."""

    kind: str
    params: dict = field(default_factory=dict)


def conv2d(out_channels: int, kernel: int = 3) -> LayerSpec:
    return LayerSpec("conv2d", {"out_channels": out_channels, "kernel": kernel})


def relu() -> LayerSpec:
    return LayerSpec("relu")


def sigmoid() -> LayerSpec:
    return LayerSpec("sigmoid")


def maxpool(size: int = 2) -> LayerSpec:
    return LayerSpec("maxpool", {"size": size})


def global_avg_pool() -> LayerSpec:
    return LayerSpec("global-avg-pool")


def linear(out_features: int) -> LayerSpec:
    return LayerSpec("linear", {"out_features": out_features})


def batchless_norm() -> LayerSpec:
    return LayerSpec("batchless-norm")


def upsample(factor: int) -> LayerSpec:
    return LayerSpec("upsample", {"factor": factor})


def softmax_xent_spec() -> LayerSpec:
    """Marker spec: attach a softmax cross-entropy head to the network."""
    return LayerSpec("softmax-xent")


class Layer:
    kind = "?"

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self):
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def spec(self) -> LayerSpec:
        return LayerSpec(self.kind, {})

    def _shape_error(self, got, want: str):
        raise ToolkitError("shape-error", f"layer {self.name} ({self.kind}): expected {want}, got {got}")


def _he_uniform(rng: np.random.Generator, shape, fan_in: int, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Layer):
    """3x3-style convolution, stride 1, zero padding kernel//2 (same size)."""

    kind = "conv2d"

    def __init__(self, name, in_channels, out_channels, kernel, rng, dtype=np.float64):
        super().__init__(name)
        if kernel % 2 != 1:
            raise ToolkitError("shape-error", f"layer {name}: kernel must be odd, got {kernel}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        fan_in = in_channels * kernel * kernel
        self.params["w"] = _he_uniform(rng, (kernel, kernel, in_channels, out_channels), fan_in, dtype)
        self.params["b"] = np.zeros(out_channels, dtype=dtype)
        self.zero_grads()

    def spec(self):
        return conv2d(self.out_channels, self.kernel)

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.in_channels:
            self._shape_error(x.shape, f"(N,H,W,{self.in_channels})")
        k, p = self.kernel, self.kernel // 2
        n, h, w, _ = x.shape
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        out = np.zeros((n, h, w, self.out_channels), dtype=x.dtype)
        wgt = self.params["w"]
        for i in range(k):
            for j in range(k):
                out += xp[:, i:i + h, j:j + w, :] @ wgt[i, j]
        out += self.params["b"]
        self._x_padded = xp
        return out

    def backward(self, dy):
        k, p = self.kernel, self.kernel // 2
        xp = self._x_padded
        n, hp, wp, _ = xp.shape
        h, w = hp - 2 * p, wp - 2 * p
        wgt = self.params["w"]
        dxp = np.zeros_like(xp)
        dw = self.grads["w"]
        for i in range(k):
            for j in range(k):
                patch = xp[:, i:i + h, j:j + w, :]
                dw[i, j] += np.tensordot(patch, dy, axes=([0, 1, 2], [0, 1, 2]))
                dxp[:, i:i + h, j:j + w, :] += dy @ wgt[i, j].T
        self.grads["b"] += dy.sum(axis=(0, 1, 2))
        return dxp[:, p:p + h, p:p + w, :] if p else dxp


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        self._mask = x > 0
        return x * self._mask

    def backward(self, dy):
        return dy * self._mask


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        self._out = out
        return out

    def backward(self, dy):
        return dy * self._out * (1.0 - self._out)


class MaxPool(Layer):
    """Non-overlapping max pool; spatial dims must be divisible by size."""

    kind = "maxpool"

    def __init__(self, name, size=2):
        super().__init__(name)
        self.size = size

    def spec(self):
        return maxpool(self.size)

    def forward(self, x):
        s = self.size
        if x.ndim != 4 or x.shape[1] % s or x.shape[2] % s:
            self._shape_error(x.shape, f"(N,H,W,C) with H,W divisible by {s}")
        n, h, w, c = x.shape
        ho, wo = h // s, w // s
        windows = x.reshape(n, ho, s, wo, s, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, ho, wo, c, s * s)
        self._argmax = windows.argmax(axis=4)
        self._in_shape = x.shape
        return np.take_along_axis(windows, self._argmax[..., None], axis=4)[..., 0]

    def backward(self, dy):
        s = self.size
        n, h, w, c = self._in_shape
        ho, wo = h // s, w // s
        dwin = np.zeros((n, ho, wo, c, s * s), dtype=dy.dtype)
        np.put_along_axis(dwin, self._argmax[..., None], dy[..., None], axis=4)
        return dwin.reshape(n, ho, wo, c, s, s).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


class GlobalAvgPool(Layer):
    kind = "global-avg-pool"

    def forward(self, x):
        if x.ndim != 4:
            self._shape_error(x.shape, "(N,H,W,C)")
        self._in_shape = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, dy):
        n, h, w, c = self._in_shape
        return np.broadcast_to(dy[:, None, None, :], (n, h, w, c)) / (h * w)


class Linear(Layer):
    kind = "linear"

    def __init__(self, name, in_features, out_features, rng, dtype=np.float64):
        super().__init__(name)
        self.in_features = in_features
        self.out_features = out_features
        self.params["w"] = _he_uniform(rng, (in_features, out_features), in_features, dtype)
        self.params["b"] = np.zeros(out_features, dtype=dtype)
        self.zero_grads()

    def spec(self):
        return linear(self.out_features)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            self._shape_error(x.shape, f"(N,{self.in_features})")
        self._x = x
        return x @ self.params["w"] + self.params["b"]

    def backward(self, dy):
        self.grads["w"] += self._x.T @ dy
        self.grads["b"] += dy.sum(axis=0)
        return dy @ self.params["w"].T


class ChannelNorm(Layer):
    """Per-sample, per-channel normalization over spatial dims.

    Batch-independent, so inference on one image matches inference in a
    batch exactly. Learnable per-channel gain and bias.
    """

    kind = "batchless-norm"
    eps = 1e-5

    def __init__(self, name, channels, dtype=np.float64):
        super().__init__(name)
        self.channels = channels
        self.params["gain"] = np.ones(channels, dtype=dtype)
        self.params["bias"] = np.zeros(channels, dtype=dtype)
        self.zero_grads()

    def forward(self, x):
        if x.ndim != 4 or x.shape[3] != self.channels:
            self._shape_error(x.shape, f"(N,H,W,{self.channels})")
        mu = x.mean(axis=(1, 2), keepdims=True)
        var = x.var(axis=(1, 2), keepdims=True)
        self._inv_std = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._inv_std
        return self._xhat * self.params["gain"] + self.params["bias"]

    def backward(self, dy):
        xhat, inv_std = self._xhat, self._inv_std
        self.grads["gain"] += (dy * xhat).sum(axis=(0, 1, 2))
        self.grads["bias"] += dy.sum(axis=(0, 1, 2))
        dxhat = dy * self.params["gain"]
        m1 = dxhat.mean(axis=(1, 2), keepdims=True)
        m2 = (dxhat * xhat).mean(axis=(1, 2), keepdims=True)
        return inv_std * (dxhat - m1 - xhat * m2)


class Upsample(Layer):
    """Pixel-replication upsampling by an integer factor."""

    kind = "upsample"

    def __init__(self, name, factor):
        super().__init__(name)
        self.factor = factor

    def spec(self):
        return upsample(self.factor)

    def forward(self, x):
        if x.ndim != 4:
            self._shape_error(x.shape, "(N,H,W,C)")
        self._in_shape = x.shape
        return x.repeat(self.factor, axis=1).repeat(self.factor, axis=2)

    def backward(self, dy):
        f = self.factor
        n, h, w, c = self._in_shape
        return dy.reshape(n, h, f, w, f, c).sum(axis=(2, 4))


def make_layer(spec: LayerSpec, name: str, in_shape, rng, dtype=np.float64):
    """Instantiate a layer and return (layer, out_shape).

    ``in_shape`` is (H, W, C) for image activations or (D,) for vectors.
    """
    kind, p = spec.kind, spec.params
    if kind == "conv2d":
        if len(in_shape) != 3:
            raise ToolkitError("shape-error", f"layer {name} (conv2d): needs image input, got {in_shape}")
        h, w, c = in_shape
        layer = Conv2d(name, c, p["out_channels"], p.get("kernel", 3), rng, dtype)
        return layer, (h, w, p["out_channels"])
    if kind == "relu":
        return ReLU(name), in_shape
    if kind == "sigmoid":
        return Sigmoid(name), in_shape
    if kind == "maxpool":
        if len(in_shape) != 3:
            raise ToolkitError("shape-error", f"layer {name} (maxpool): needs image input, got {in_shape}")
        h, w, c = in_shape
        s = p.get("size", 2)
        if h % s or w % s:
            raise ToolkitError("shape-error", f"layer {name} (maxpool): {h}x{w} not divisible by {s}")
        return MaxPool(name, s), (h // s, w // s, c)
    if kind == "global-avg-pool":
        if len(in_shape) != 3:
            raise ToolkitError("shape-error", f"layer {name} (global-avg-pool): needs image input, got {in_shape}")
        return GlobalAvgPool(name), (in_shape[2],)
    if kind == "linear":
        if len(in_shape) != 1:
            raise ToolkitError("shape-error", f"layer {name} (linear): needs vector input, got {in_shape}")
        layer = Linear(name, in_shape[0], p["out_features"], rng, dtype)
        return layer, (p["out_features"],)
    if kind == "batchless-norm":
        if len(in_shape) != 3:
            raise ToolkitError("shape-error", f"layer {name} (batchless-norm): needs image input, got {in_shape}")
        return ChannelNorm(name, in_shape[2], dtype), in_shape
    if kind == "upsample":
        if len(in_shape) != 3:
            raise ToolkitError("shape-error", f"layer {name} (upsample): needs image input, got {in_shape}")
        h, w, c = in_shape
        f = p["factor"]
        return Upsample(name, f), (h * f, w * f, c)
    raise ToolkitError("shape-error", f"unknown layer kind {kind!r}")
