"""Layers with explicit forward/backward passes on NHWC numpy arrays.

Each layer caches what its backward pass needs only when forward runs in
train mode, so eval-mode inference on a frozen model is pure and
thread-safe.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, DataError


class Layer:
    kind = "layer"

    def forward(self, x, train=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def params(self) -> dict:
        return {}

    def grads(self) -> dict:
        return {}

    def output_shape(self, shape):
        return shape


def _im2col(x, kh, kw):
    """(n, h, w, c) -> (n*h*w, kh*kw*c) patches with zero 'same' padding."""
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    s = xp.strides
    windows = np.lib.stride_tricks.as_strided(
        xp,
        shape=(n, h, w, kh, kw, c),
        strides=(s[0], s[1], s[2], s[1], s[2], s[3]),
        writeable=False,
    )
    return windows.reshape(n * h * w, kh * kw * c)


class Conv2d(Layer):
    """3x3-style 'same' convolution, stride 1, via im2col + GEMM."""

    kind = "conv2d"

    def __init__(self, kernel, in_channels, out_channels, stride=1, rng=None, dtype=np.float32):
        if stride != 1:
            raise ConfigError("only stride 1 convolutions are supported")
        if kernel % 2 != 1:
            raise ConfigError("kernel size must be odd for 'same' padding")
        self.kernel = kernel
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.stride = stride
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / (kernel * kernel * in_channels))
        self.weight = (rng.standard_normal((kernel * kernel * in_channels, out_channels)) * scale).astype(dtype)
        self.bias = np.zeros(out_channels, dtype=dtype)
        self._cache = None

    def forward(self, x, train=False):
        if x.shape[-1] != self.in_channels:
            raise DataError(f"conv2d expected {self.in_channels} channels, got {x.shape[-1]}")
        n, h, w, _ = x.shape
        col = _im2col(x, self.kernel, self.kernel).astype(self.weight.dtype, copy=False)
        out = col @ self.weight + self.bias
        if train:
            self._cache = (col, x.shape)
        return out.reshape(n, h, w, self.out_channels)

    def backward(self, grad):
        col, x_shape = self._cache
        n, h, w, c = x_shape
        gflat = grad.reshape(-1, self.out_channels)
        self._dw = col.T @ gflat
        self._db = gflat.sum(axis=0)
        dcol = gflat @ self.weight.T
        # fold patches back (col2im): one shifted add per kernel tap
        kh = kw = self.kernel
        ph = kh // 2
        dxp = np.zeros((n, h + 2 * ph, w + 2 * ph, c), dtype=grad.dtype)
        dcol = dcol.reshape(n, h, w, kh, kw, c)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i : i + h, j : j + w, :] += dcol[:, :, :, i, j, :]
        return dxp[:, ph : ph + h, ph : ph + w, :]

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self._dw, "bias": self._db}

    def output_shape(self, shape):
        h, w, _ = shape
        return (h, w, self.out_channels)

    def spec_args(self):
        return {
            "kernel": self.kernel,
            "in_channels": self.in_channels,
            "out_channels": self.out_channels,
            "stride": self.stride,
        }


class BatchNorm(Layer):
    """Batch normalization over (batch, height, width) per channel.

    Keeps two inference statistics sets: exponentially weighted running
    averages updated during training, and population statistics filled
    in by a finalization pass. ``eval_stats`` selects which set eval-mode
    forward uses.
    """

    kind = "batchnorm"

    def __init__(self, channels, momentum=0.1, eps=1e-5, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.eps = eps
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.moving_mean = np.zeros(channels, dtype=dtype)
        self.moving_var = np.ones(channels, dtype=dtype)
        self.population_mean = None
        self.population_var = None
        self.eval_stats = "moving"
        self.collecting = False
        self._acc = None
        self._cache = None

    def forward(self, x, train=False):
        if x.shape[-1] != self.channels:
            raise DataError(f"batchnorm expected {self.channels} channels, got {x.shape[-1]}")
        axes = tuple(range(x.ndim - 1))
        if self.collecting:
            flat = x.reshape(-1, self.channels).astype(np.float64)
            if self._acc is None:
                self._acc = [0, np.zeros(self.channels), np.zeros(self.channels)]
            self._acc[0] += flat.shape[0]
            self._acc[1] += flat.sum(axis=0)
            self._acc[2] += (flat**2).sum(axis=0)
        if train:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            self.moving_mean = ((1 - self.momentum) * self.moving_mean + self.momentum * mean).astype(self.gamma.dtype)
            self.moving_var = ((1 - self.momentum) * self.moving_var + self.momentum * var).astype(self.gamma.dtype)
        elif self.eval_stats == "population":
            if self.population_mean is None:
                raise DataError("population statistics requested before finalization")
            mean, var = self.population_mean, self.population_var
        else:
            mean, var = self.moving_mean, self.moving_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean) * inv
        if train:
            self._cache = (xhat, inv)
        return self.gamma * xhat + self.beta

    def forward_batch_stats(self, x):
        """Normalize by this batch's own statistics without updating anything.

        Mirrors toolbox behavior where validation during training is
        evaluated with mini-batch statistics.
        """
        axes = tuple(range(x.ndim - 1))
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        xhat = (x - mean) / np.sqrt(var + self.eps)
        return self.gamma * xhat + self.beta

    def finish_collection(self):
        count, total, total_sq = self._acc
        mean = total / count
        var = total_sq / count - mean**2
        self.population_mean = mean.astype(self.gamma.dtype)
        self.population_var = np.maximum(var, 0.0).astype(self.gamma.dtype)
        self._acc = None

    def backward(self, grad):
        xhat, inv = self._cache
        axes = tuple(range(grad.ndim - 1))
        m = grad.size // self.channels
        self._dgamma = (grad * xhat).sum(axis=axes)
        self._dbeta = grad.sum(axis=axes)
        dxhat = grad * self.gamma
        return inv * (dxhat - dxhat.mean(axis=axes) - xhat * (dxhat * xhat).sum(axis=axes) / m)

    def params(self):
        return {"gamma": self.gamma, "beta": self.beta}

    def grads(self):
        return {"gamma": self._dgamma, "beta": self._dbeta}

    def spec_args(self):
        return {"channels": self.channels}


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False):
        if train:
            self._mask = x > 0
        return np.maximum(x, 0)

    def backward(self, grad):
        return grad * self._mask

    def spec_args(self):
        return {}


class MaxPool(Layer):
    kind = "maxpool"

    def __init__(self, window=2, stride=2):
        if window != stride:
            raise ConfigError("maxpool requires window == stride")
        self.window = window
        self.stride = stride

    def forward(self, x, train=False):
        n, h, w, c = x.shape
        k = self.window
        if h % k or w % k:
            raise DataError(f"maxpool window {k} does not tile input {h}x{w}")
        tiles = x.reshape(n, h // k, k, w // k, k, c).transpose(0, 1, 3, 5, 2, 4)
        tiles = tiles.reshape(n, h // k, w // k, c, k * k)
        idx = tiles.argmax(axis=-1)
        out = np.take_along_axis(tiles, idx[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (idx, x.shape)
        return out

    def backward(self, grad):
        idx, (n, h, w, c) = self._cache
        k = self.window
        dtiles = np.zeros((n, h // k, w // k, c, k * k), dtype=grad.dtype)
        np.put_along_axis(dtiles, idx[..., None], grad[..., None], axis=-1)
        dtiles = dtiles.reshape(n, h // k, w // k, c, k, k).transpose(0, 1, 4, 2, 5, 3)
        return dtiles.reshape(n, h, w, c)

    def output_shape(self, shape):
        h, w, c = shape
        return (h // self.window, w // self.window, c)

    def spec_args(self):
        return {"window": self.window, "stride": self.stride}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, train=False):
        if train:
            self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    def output_shape(self, shape):
        return (int(np.prod(shape)),)

    def spec_args(self):
        return {}


class Dense(Layer):
    kind = "dense"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        self.in_features = in_features
        self.out_features = out_features
        rng = rng or np.random.default_rng(0)
        scale = np.sqrt(2.0 / in_features)
        self.weight = (rng.standard_normal((in_features, out_features)) * scale).astype(dtype)
        self.bias = np.zeros(out_features, dtype=dtype)

    def forward(self, x, train=False):
        if x.shape[-1] != self.in_features:
            raise DataError(f"dense expected {self.in_features} features, got {x.shape[-1]}")
        if train:
            self._x = x
        return x @ self.weight + self.bias

    def backward(self, grad):
        self._dw = self._x.T @ grad
        self._db = grad.sum(axis=0)
        return grad @ self.weight.T

    def params(self):
        return {"weight": self.weight, "bias": self.bias}

    def grads(self):
        return {"weight": self._dw, "bias": self._db}

    def output_shape(self, shape):
        return (self.out_features,)

    def spec_args(self):
        return {"in_features": self.in_features, "out_features": self.out_features}


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        probs = e / e.sum(axis=-1, keepdims=True)
        if train:
            self._probs = probs
        return probs

    def backward(self, grad):
        p = self._probs
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True))

    def spec_args(self):
        return {}
