"""Layer catalog for the convolutional auto-encoder backbone.

Supported kinds: conv3x3 (padding 1), maxpool2x2 (stride 2), bilinear_up2,
batchnorm, relu, sigmoid, linear. Each layer applies through the active
kernel backend and records its backward closure on the tape. Batchnorm holds
running statistics as buffers; in eval mode these are frozen, which makes
every attack-time forward a pure function of its input.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .autodiff import Parameter, Tape, Tensor
from .backend import get_kernels
from .exceptions import NumericError, ShapeError


class Layer:
    kind = "base"

    def params(self) -> list[Parameter]:
        return []

    def buffers(self) -> dict[str, np.ndarray]:
        return {}

    def out_shape(self, in_shape: tuple) -> tuple:
        return in_shape

    def __call__(self, tape: Tape, x: Tensor, mode: str = "eval", update_stats: bool = True) -> Tensor:
        raise NotImplementedError


class Conv3x3(Layer):
    kind = "conv3x3"

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "conv"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        fan_in = in_channels * 9
        std = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(out_channels, in_channels, 3, 3))
        self.w = Parameter(w.astype(dtype), f"{name}.w")
        self.b = Parameter(np.zeros(out_channels, dtype=dtype), f"{name}.b")

    def params(self):
        return [self.w, self.b]

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        if c != self.in_channels:
            raise ShapeError(
                f"{self.w.name}: expected {self.in_channels} input channels, got {c}"
            )
        return (n, self.out_channels, h, w)

    def __call__(self, tape, x, mode="eval", update_stats=True):
        self.out_shape(x.data.shape)
        kern = get_kernels()
        xd, wd, bd = x.data, self.w.data, self.b.data
        out = Tensor(kern.conv3x3_forward(xd, wd, bd))

        def bwd(g):
            dx = kern.conv3x3_input_grad(g, wd)
            dw, db = kern.conv3x3_param_grad(g, xd)
            return dx, dw, db

        tape.record(out, (x, self.w, self.b), bwd,
                    replay_fn=lambda: kern.conv3x3_forward(xd, wd, bd), label=self.kind)
        return out


class MaxPool2x2(Layer):
    kind = "maxpool2x2"

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        if h % 2 or w % 2:
            raise ShapeError(f"maxpool2x2 requires even extents, got {h}x{w}")
        return (n, c, h // 2, w // 2)

    def __call__(self, tape, x, mode="eval", update_stats=True):
        self.out_shape(x.data.shape)
        kern = get_kernels()
        xd = x.data
        y, idx = kern.maxpool2x2_forward(xd)
        out = Tensor(y)
        tape.record(out, (x,), lambda g: (kern.maxpool2x2_backward(g, idx),),
                    replay_fn=lambda: kern.maxpool2x2_forward(xd)[0], label=self.kind)
        return out


class BilinearUp2(Layer):
    kind = "bilinear_up2"

    def out_shape(self, in_shape):
        n, c, h, w = in_shape
        return (n, c, 2 * h, 2 * w)

    def __call__(self, tape, x, mode="eval", update_stats=True):
        if x.data.ndim != 4:
            raise ShapeError(f"bilinear_up2 expects NCHW input, got {x.data.shape}")
        kern = get_kernels()
        xd = x.data
        out = Tensor(kern.bilinear_up2_forward(xd))
        tape.record(out, (x,), lambda g: (kern.bilinear_up2_backward(g),),
                    replay_fn=lambda: kern.bilinear_up2_forward(xd), label=self.kind)
        return out


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, channels: int, dtype=np.float32, name: str = "bn",
                 momentum: float = 0.1, eps: float = 1e-5):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = Parameter(np.ones(channels, dtype=dtype), f"{name}.gamma")
        self.beta = Parameter(np.zeros(channels, dtype=dtype), f"{name}.beta")
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def params(self):
        return [self.gamma, self.beta]

    def buffers(self):
        return {f"{self.gamma.name[:-6]}.running_mean": self.running_mean,
                f"{self.gamma.name[:-6]}.running_var": self.running_var}

    def out_shape(self, in_shape):
        if in_shape[1] != self.channels:
            raise ShapeError(
                f"{self.gamma.name}: expected {self.channels} channels, got {in_shape[1]}"
            )
        return in_shape

    def __call__(self, tape, x, mode="eval", update_stats=True):
        self.out_shape(x.data.shape)
        xd = x.data
        axes = (0, 2, 3)
        bshape = (1, self.channels, 1, 1)
        gd, bd = self.gamma.data, self.beta.data
        if mode == "train":
            mean = xd.mean(axis=axes)
            var = xd.var(axis=axes)
            if update_stats:
                m = self.momentum
                self.running_mean += m * (mean - self.running_mean)
                self.running_var += m * (var - self.running_var)
        else:
            mean = self.running_mean.copy()
            var = self.running_var.copy()
        std = np.sqrt(var + self.eps)
        xhat = (xd - mean.reshape(bshape)) / std.reshape(bshape)
        out = Tensor(gd.reshape(bshape) * xhat + bd.reshape(bshape))

        if mode == "train":

            def bwd(g):
                gham = (g * xhat).mean(axis=axes)
                gmean = g.mean(axis=axes)
                dx = (gd / std).reshape(bshape) * (
                    g - gmean.reshape(bshape) - xhat * gham.reshape(bshape)
                )
                dgamma = (g * xhat).sum(axis=axes)
                dbeta = g.sum(axis=axes)
                return dx, dgamma, dbeta

        else:

            def bwd(g):
                dx = (gd / std).reshape(bshape) * g
                dgamma = (g * xhat).sum(axis=axes)
                dbeta = g.sum(axis=axes)
                return dx, dgamma, dbeta

        def replay():
            return gd.reshape(bshape) * ((xd - mean.reshape(bshape)) / std.reshape(bshape)) \
                + bd.reshape(bshape)

        tape.record(out, (x, self.gamma, self.beta), bwd, replay_fn=replay, label=self.kind)
        return out


class ReLU(Layer):
    kind = "relu"

    def __call__(self, tape, x, mode="eval", update_stats=True):
        return ops.relu(tape, x)


class Sigmoid(Layer):
    kind = "sigmoid"

    def __call__(self, tape, x, mode="eval", update_stats=True):
        return ops.sigmoid(tape, x)


class Linear(Layer):
    kind = "linear"

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, name: str = "linear"):
        self.in_features = in_features
        self.out_features = out_features
        std = np.sqrt(2.0 / in_features)
        w = rng.normal(0.0, std, size=(in_features, out_features))
        self.w = Parameter(w.astype(dtype), f"{name}.w")
        self.b = Parameter(np.zeros(out_features, dtype=dtype), f"{name}.b")

    def params(self):
        return [self.w, self.b]

    def out_shape(self, in_shape):
        if len(in_shape) != 2 or in_shape[1] != self.in_features:
            raise ShapeError(
                f"{self.w.name}: expected (n, {self.in_features}) input, got {in_shape}"
            )
        return (in_shape[0], self.out_features)

    def __call__(self, tape, x, mode="eval", update_stats=True):
        self.out_shape(x.data.shape)
        return ops.linear_affine(tape, x, self.w, self.b)


def apply_layer(layer: Layer, x: Tensor, tape: Tape, mode: str = "eval") -> Tensor:
    """Validate and apply a single layer, recording it on the tape."""
    if not np.isfinite(x.data).all():
        raise NumericError(f"non-finite values entering {layer.kind}")
    layer.out_shape(x.data.shape)
    return layer(tape, x, mode=mode)
