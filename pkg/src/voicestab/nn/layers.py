"""Layer vocabulary: forward passes with exact analytic backward passes.

Conventions:
  - activations are [B, C, H, W] for spatial layers, [B, F] after pooling;
  - each layer owns named Params (value + grad) and optional buffers
    (batch-norm running stats);
  - forward caches whatever backward needs; backward returns one input
    gradient per wired input and accumulates parameter gradients only for
    trainable layers (activation gradients always flow).
"""

from __future__ import annotations

import numpy as np

from .. import rng as rngmod
from ..errors import BatchTooSmall, InvalidParam, ShapeError


class Param:
    """A parameter tensor and its gradient buffer."""

    __slots__ = ("value", "grad")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = None

    @property
    def shape(self):
        return self.value.shape


class Layer:
    kind = "layer"

    def __init__(self, name: str, inputs: list[str], trainable: bool = True):
        self.name = name
        self.inputs = list(inputs)
        self.trainable = trainable
        self.params: dict[str, Param] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def init_params(self, init_rng, dtype) -> None:
        """Allocate parameters; default layers have none."""

    def config(self) -> dict:
        return {}

    def forward(self, xs: list[np.ndarray], ctx) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> list[np.ndarray]:
        raise NotImplementedError

    def _accumulate(self, name: str, grad: np.ndarray) -> None:
        if not self.trainable:
            return
        p = self.params[name]
        if p.grad is None:
            p.grad = grad
        else:
            p.grad = p.grad + grad

    def param_count(self) -> int:
        return sum(p.value.size for p in self.params.values())

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


def _only(xs: list[np.ndarray], layer: Layer) -> np.ndarray:
    if len(xs) != 1:
        raise ShapeError(f"{layer.name}: expected exactly one input, got {len(xs)}")
    return xs[0]


def he_uniform(shape, fan_in: int, init_rng, dtype) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return init_rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv2D(Layer):
    """Cross-correlation with bias over [B, C, H, W] inputs.

    Output height is floor((H + 2*padding - kh) / stride) + 1, same for
    width.  The kernel loop keeps every inner contraction a single BLAS
    call, so no im2col buffer is materialized.
    """

    kind = "conv2d"

    def __init__(
        self,
        name,
        inputs,
        in_channels: int,
        out_channels: int,
        kernel_size: int | tuple[int, int],
        stride: int = 1,
        padding: int = 0,
        l2: float = 0.0,
        trainable: bool = True,
    ):
        super().__init__(name, inputs, trainable)
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        self.in_channels = int(in_channels)
        self.out_channels = int(out_channels)
        self.kernel_size = (int(kh), int(kw))
        self.stride = int(stride)
        self.padding = int(padding)
        self.l2 = float(l2)
        if self.stride < 1 or self.padding < 0:
            raise InvalidParam(f"{name}: bad stride/padding")

    def init_params(self, init_rng, dtype):
        kh, kw = self.kernel_size
        fan_in = self.in_channels * kh * kw
        self.params["weight"] = Param(
            he_uniform((self.out_channels, self.in_channels, kh, kw), fan_in, init_rng, dtype)
        )
        self.params["bias"] = Param(np.zeros(self.out_channels, dtype=dtype))

    def config(self):
        return {
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "kernel_size": list(self.kernel_size),
            "stride": self.stride,
            "padding": self.padding,
            "l2": self.l2,
        }

    def _out_hw(self, h: int, w: int) -> tuple[int, int]:
        kh, kw = self.kernel_size
        oh = (h + 2 * self.padding - kh) // self.stride + 1
        ow = (w + 2 * self.padding - kw) // self.stride + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self.name}: input {h}x{w} too small for kernel {kh}x{kw}")
        return oh, ow

    def forward(self, xs, ctx):
        x = _only(xs, self)
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeError(
                f"{self.name}: expected [B,{self.in_channels},H,W], got {x.shape}"
            )
        b, _, h, w = x.shape
        oh, ow = self._out_hw(h, w)
        kh, kw = self.kernel_size
        s = self.stride
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        weight = self.params["weight"].value
        out = np.zeros((b, oh, ow, self.out_channels), dtype=x.dtype)
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, :, u : u + s * oh : s, v : v + s * ow : s]
                out += np.tensordot(patch, weight[:, :, u, v], axes=([1], [1]))
        out = np.ascontiguousarray(out.transpose(0, 3, 1, 2))
        out += self.params["bias"].value[None, :, None, None]
        self._cache = (xp, x.shape, (oh, ow))
        return out

    def backward(self, dy):
        xp, x_shape, (oh, ow) = self._cache
        kh, kw = self.kernel_size
        s = self.stride
        p = self.padding
        weight = self.params["weight"].value

        if self.trainable:
            d_bias = dy.sum(axis=(0, 2, 3))
            d_weight = np.zeros_like(weight)
            for u in range(kh):
                for v in range(kw):
                    patch = xp[:, :, u : u + s * oh : s, v : v + s * ow : s]
                    d_weight[:, :, u, v] = np.tensordot(dy, patch, axes=([0, 2, 3], [0, 2, 3]))
            if self.l2 > 0.0:
                d_weight = d_weight + 2.0 * self.l2 * weight
            self._accumulate("weight", d_weight)
            self._accumulate("bias", d_bias)

        dxp = np.zeros_like(xp)
        for u in range(kh):
            for v in range(kw):
                contrib = np.tensordot(dy, weight[:, :, u, v], axes=([1], [0]))
                dxp[:, :, u : u + s * oh : s, v : v + s * ow : s] += contrib.transpose(0, 3, 1, 2)
        dx = dxp[:, :, p : p + x_shape[2], p : p + x_shape[3]] if p else dxp
        return [dx]


class MaxPool2D(Layer):
    """Max pooling; padding cells are -inf so they can never win."""

    kind = "maxpool2d"

    def __init__(self, name, inputs, kernel_size=2, stride=None, padding: int = 0, trainable=False):
        super().__init__(name, inputs, trainable=False)
        kh, kw = (kernel_size, kernel_size) if isinstance(kernel_size, int) else kernel_size
        self.kernel_size = (int(kh), int(kw))
        stride = stride if stride is not None else kernel_size
        sh, sw = (stride, stride) if isinstance(stride, int) else stride
        self.stride = (int(sh), int(sw))
        self.padding = int(padding)

    def config(self):
        return {
            "kernel_size": list(self.kernel_size),
            "stride": list(self.stride),
            "padding": self.padding,
        }

    def forward(self, xs, ctx):
        x = _only(xs, self)
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected 4-D input, got {x.shape}")
        b, c, h, w = x.shape
        kh, kw = self.kernel_size
        sh, sw = self.stride
        p = self.padding
        oh = (h + 2 * p - kh) // sh + 1
        ow = (w + 2 * p - kw) // sw + 1
        if oh < 1 or ow < 1:
            raise ShapeError(f"{self.name}: input {h}x{w} too small for pool {kh}x{kw}")
        if p:
            xp = np.full((b, c, h + 2 * p, w + 2 * p), -np.inf, dtype=x.dtype)
            xp[:, :, p : p + h, p : p + w] = x
        else:
            xp = x
        out = np.full((b, c, oh, ow), -np.inf, dtype=x.dtype)
        for u in range(kh):
            for v in range(kw):
                np.maximum(out, xp[:, :, u : u + sh * oh : sh, v : v + sw * ow : sw], out=out)
        self._cache = (xp, out, x.shape, (oh, ow))
        return out

    def backward(self, dy):
        xp, out, x_shape, (oh, ow) = self._cache
        kh, kw = self.kernel_size
        sh, sw = self.stride
        p = self.padding
        dxp = np.zeros_like(xp)
        # ties route the gradient to the first offset reaching the max
        remaining = np.ones_like(out, dtype=bool)
        for u in range(kh):
            for v in range(kw):
                patch = xp[:, :, u : u + sh * oh : sh, v : v + sw * ow : sw]
                hit = (patch == out) & remaining
                dxp[:, :, u : u + sh * oh : sh, v : v + sw * ow : sw] += dy * hit
                remaining &= ~hit
        dx = dxp[:, :, p : p + x_shape[2], p : p + x_shape[3]] if p else dxp
        return [dx]


class GlobalAvgPool(Layer):
    """[B, C, H, W] -> [B, C] spatial mean."""

    kind = "global_avg_pool"

    def __init__(self, name, inputs, trainable=False):
        super().__init__(name, inputs, trainable=False)

    def forward(self, xs, ctx):
        x = _only(xs, self)
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: expected 4-D input, got {x.shape}")
        self._cache = x.shape
        return x.mean(axis=(2, 3))

    def backward(self, dy):
        b, c, h, w = self._cache
        dx = np.broadcast_to(dy[:, :, None, None] / (h * w), (b, c, h, w)).astype(dy.dtype)
        return [dx.copy()]


class BatchNorm(Layer):
    """Per-channel standardization with learned affine and running stats.

    Works on [B, C, H, W] (channel axis 1) and on [B, F] (per feature).
    Frozen instances always run in inference mode so their buffers never
    move, matching the freezing contract used for transfer.
    """

    kind = "batchnorm"

    def __init__(self, name, inputs, num_features: int, momentum: float = 0.9, eps: float = 1e-5, trainable=True):
        super().__init__(name, inputs, trainable)
        self.num_features = int(num_features)
        self.momentum = float(momentum)
        self.eps = float(eps)

    def init_params(self, init_rng, dtype):
        self.params["gamma"] = Param(np.ones(self.num_features, dtype=dtype))
        self.params["beta"] = Param(np.zeros(self.num_features, dtype=dtype))
        self.buffers["running_mean"] = np.zeros(self.num_features, dtype=dtype)
        self.buffers["running_var"] = np.ones(self.num_features, dtype=dtype)

    def config(self):
        return {"num_features": self.num_features, "momentum": self.momentum, "eps": self.eps}

    def _axes_and_shape(self, x):
        if x.ndim == 4:
            if x.shape[1] != self.num_features:
                raise ShapeError(f"{self.name}: expected {self.num_features} channels, got {x.shape}")
            return (0, 2, 3), (1, -1, 1, 1)
        if x.ndim == 2:
            if x.shape[1] != self.num_features:
                raise ShapeError(f"{self.name}: expected {self.num_features} features, got {x.shape}")
            return (0,), (1, -1)
        raise ShapeError(f"{self.name}: expected 2-D or 4-D input, got {x.shape}")

    def forward(self, xs, ctx):
        x = _only(xs, self)
        axes, bshape = self._axes_and_shape(x)
        gamma = self.params["gamma"].value.reshape(bshape)
        beta = self.params["beta"].value.reshape(bshape)
        training = ctx.training and self.trainable
        if training:
            n = int(np.prod([x.shape[a] for a in axes]))
            if x.shape[0] < 2:
                raise BatchTooSmall(f"{self.name}: batch of {x.shape[0]} in training mode")
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            m = self.momentum
            self.buffers["running_mean"] = (m * self.buffers["running_mean"] + (1 - m) * mean).astype(x.dtype)
            self.buffers["running_var"] = (m * self.buffers["running_var"] + (1 - m) * var).astype(x.dtype)
            inv_std = 1.0 / np.sqrt(var.reshape(bshape) + self.eps)
            x_hat = (x - mean.reshape(bshape)) * inv_std
            self._cache = ("train", x_hat, inv_std, axes, bshape, n)
        else:
            mean = self.buffers["running_mean"].reshape(bshape)
            inv_std = 1.0 / np.sqrt(self.buffers["running_var"].reshape(bshape) + self.eps)
            x_hat = (x - mean) * inv_std
            self._cache = ("eval", x_hat, inv_std, axes, bshape, 0)
        return gamma * x_hat + beta

    def backward(self, dy):
        mode, x_hat, inv_std, axes, bshape, n = self._cache
        gamma = self.params["gamma"].value.reshape(bshape)
        if self.trainable:
            self._accumulate("gamma", (dy * x_hat).sum(axis=axes))
            self._accumulate("beta", dy.sum(axis=axes))
        if mode == "train":
            mean_dy = dy.mean(axis=axes).reshape(bshape)
            mean_dy_xhat = (dy * x_hat).mean(axis=axes).reshape(bshape)
            dx = gamma * inv_std * (dy - mean_dy - x_hat * mean_dy_xhat)
        else:
            dx = gamma * inv_std * dy
        return [dx]


class Dropout(Layer):
    """Inverted dropout: zero with probability P, scale survivors 1/(1-P)."""

    kind = "dropout"

    def __init__(self, name, inputs, p: float, trainable=False):
        super().__init__(name, inputs, trainable=False)
        if not 0.0 <= p < 1.0:
            raise InvalidParam(f"{name}: dropout fraction must be in [0, 1), got {p}")
        self.p = float(p)

    def config(self):
        return {"p": self.p}

    def forward(self, xs, ctx):
        x = _only(xs, self)
        if not ctx.training or self.p == 0.0:
            self._cache = None
            return x
        gen = rngmod.stream(ctx.seed, "dropout", self.name, ctx.step)
        mask = (gen.uniform(size=x.shape) >= self.p).astype(x.dtype)
        scale = 1.0 / (1.0 - self.p)
        self._cache = mask * scale
        return x * self._cache

    def backward(self, dy):
        if self._cache is None:
            return [dy]
        return [dy * self._cache]


class Dense(Layer):
    """Affine map: y = x @ W + b, with W shaped [in, out]."""

    kind = "dense"

    def __init__(self, name, inputs, in_features: int, out_features: int, l2: float = 0.0, trainable=True):
        super().__init__(name, inputs, trainable)
        self.in_features = int(in_features)
        self.out_features = int(out_features)
        self.l2 = float(l2)

    def init_params(self, init_rng, dtype):
        self.params["weight"] = Param(
            he_uniform((self.in_features, self.out_features), self.in_features, init_rng, dtype)
        )
        self.params["bias"] = Param(np.zeros(self.out_features, dtype=dtype))

    def config(self):
        return {"in_features": self.in_features, "out_features": self.out_features, "l2": self.l2}

    def forward(self, xs, ctx):
        x = _only(xs, self)
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"{self.name}: expected [B,{self.in_features}], got {x.shape}")
        self._cache = x
        return x @ self.params["weight"].value + self.params["bias"].value

    def backward(self, dy):
        x = self._cache
        weight = self.params["weight"].value
        if self.trainable:
            d_weight = x.T @ dy
            if self.l2 > 0.0:
                d_weight = d_weight + 2.0 * self.l2 * weight
            self._accumulate("weight", d_weight)
            self._accumulate("bias", dy.sum(axis=0))
        return [dy @ weight.T]


class ReLU(Layer):
    kind = "relu"

    def __init__(self, name, inputs, trainable=False):
        super().__init__(name, inputs, trainable=False)

    def forward(self, xs, ctx):
        x = _only(xs, self)
        self._cache = x > 0
        return np.where(self._cache, x, 0)

    def backward(self, dy):
        return [dy * self._cache]


class Softmax(Layer):
    """Row-wise softmax with max subtraction, total on any finite input."""

    kind = "softmax"

    def __init__(self, name, inputs, trainable=False):
        super().__init__(name, inputs, trainable=False)

    def forward(self, xs, ctx):
        z = _only(xs, self)
        if z.ndim != 2:
            raise ShapeError(f"{self.name}: expected [B, C] logits, got {z.shape}")
        shifted = z - z.max(axis=1, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=1, keepdims=True)
        self._cache = y
        return y

    def backward(self, dy):
        y = self._cache
        inner = (dy * y).sum(axis=1, keepdims=True)
        return [y * (dy - inner)]


class Concat(Layer):
    """Channel-axis concatenation of multiple inputs (fixed wiring order)."""

    kind = "concat"

    def __init__(self, name, inputs, trainable=False):
        super().__init__(name, inputs, trainable=False)

    def forward(self, xs, ctx):
        if len(xs) < 2:
            raise ShapeError(f"{self.name}: concat needs >= 2 inputs")
        self._cache = [x.shape[1] for x in xs]
        return np.concatenate(xs, axis=1)

    def backward(self, dy):
        splits = np.cumsum(self._cache)[:-1]
        return [np.ascontiguousarray(part) for part in np.split(dy, splits, axis=1)]


class Flatten(Layer):
    kind = "flatten"

    def __init__(self, name, inputs, trainable=False):
        super().__init__(name, inputs, trainable=False)

    def forward(self, xs, ctx):
        x = _only(xs, self)
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return [dy.reshape(self._cache)]


LAYER_KINDS = {
    cls.kind: cls
    for cls in (
        Conv2D,
        MaxPool2D,
        GlobalAvgPool,
        BatchNorm,
        Dropout,
        Dense,
        ReLU,
        Softmax,
        Concat,
        Flatten,
    )
}
