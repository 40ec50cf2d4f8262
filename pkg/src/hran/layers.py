"""Parameterized building blocks.

Layers are stateless descriptions: each knows its parameter names and shapes,
how to initialize them, and how to run forward given a ``name -> Tensor``
mapping. Parameter storage lives in the model, so the same layer objects
serve training (tracked tensors) and inference (plain tensors).
"""

from __future__ import annotations

import math
from typing import Mapping, Optional

import numpy as np

from .autodiff import (
    DimensionError,
    Tensor,
    add,
    channel_conv1d,
    channel_linear,
    concat_channels,
    conv2d,
    global_avg_pool,
    mul,
    mul_channelwise,
    pixel_shuffle,
    relu,
    sigmoid,
    weight_norm,
)

Params = Mapping[str, Tensor]


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype=np.float32) -> np.ndarray:
    # gain sqrt(2 / (1 + 5)) -> bound 1 / sqrt(fan_in)
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Layer:
    kind = "layer"

    def __init__(self, name: str):
        self.name = name

    def param_shapes(self) -> dict:
        raise NotImplementedError

    def init_params(self, rng: np.random.Generator) -> dict:
        raise NotImplementedError

    def _check_channels(self, x, c):
        if x.ndim != 4 or x.shape[1] != c:
            raise DimensionError(f"{self.name}: expected {c} input channels, got shape {x.shape}")


class Conv(Layer):
    """k x k convolution, weight-normalized unless ``weight_norm=False``.

    With weight normalization the parameters are ``{name}.v``, ``{name}.g`` and
    ``{name}.bias``; otherwise ``{name}.weight`` and ``{name}.bias``.
    """

    kind = "conv"

    def __init__(self, name, c_in, c_out, k=3, weight_norm=True, bias=True):
        super().__init__(name)
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.weight_norm = weight_norm
        self.bias = bias

    def param_shapes(self):
        kshape = (self.c_out, self.c_in, self.k, self.k)
        shapes = {f"{self.name}.v": kshape, f"{self.name}.g": (self.c_out,)} if self.weight_norm \
            else {f"{self.name}.weight": kshape}
        if self.bias:
            shapes[f"{self.name}.bias"] = (self.c_out,)
        return shapes

    def init_params(self, rng):
        kshape = (self.c_out, self.c_in, self.k, self.k)
        w = kaiming_uniform(rng, kshape, self.c_in * self.k * self.k)
        if self.weight_norm:
            # g starts at ||v|| so the effective kernel equals the raw draw
            out = {f"{self.name}.v": w,
                   f"{self.name}.g": np.sqrt((w.astype(np.float64) ** 2).sum(axis=(1, 2, 3))).astype(np.float32)}
        else:
            out = {f"{self.name}.weight": w}
        if self.bias:
            out[f"{self.name}.bias"] = np.zeros(self.c_out, dtype=np.float32)
        return out

    def kernel(self, p: Params) -> Tensor:
        if self.weight_norm:
            return weight_norm(p[f"{self.name}.v"], p[f"{self.name}.g"])
        return p[f"{self.name}.weight"]

    def __call__(self, p: Params, x):
        self._check_channels(x, self.c_in)
        return conv2d(x, self.kernel(p), p[f"{self.name}.bias"] if self.bias else None)


# -- attention ---------------------------------------------------------------

class LCA(Layer):
    """Lightweight channel attention: pooled descriptor -> one C x C map -> sigmoid gate."""

    kind = "lca"

    def __init__(self, name, channels):
        super().__init__(name)
        self.channels = channels

    def param_shapes(self):
        return {f"{self.name}.w": (self.channels, self.channels)}

    def init_params(self, rng):
        # zero weights start every gate at sigmoid(0) = 0.5
        return {f"{self.name}.w": np.zeros((self.channels, self.channels), dtype=np.float32)}

    def gate(self, p: Params, u):
        w = p[f"{self.name}.w"]
        if w.shape != (self.channels, self.channels):
            raise DimensionError(f"{self.name}: weight shape {w.shape} is not {self.channels}x{self.channels}")
        return sigmoid(channel_linear(global_avg_pool(u), w))

    def __call__(self, p: Params, u):
        self._check_channels(u, self.channels)
        return mul_channelwise(u, self.gate(p, u))


class CA(Layer):
    """Squeeze-and-excitation style attention with a C/r bottleneck and no biases."""

    kind = "ca"

    def __init__(self, name, channels, reduction=16):
        super().__init__(name)
        if reduction < 1 or channels % reduction:
            raise DimensionError(f"{name}: {channels} channels not divisible by reduction {reduction}")
        self.channels, self.hidden = channels, channels // reduction

    def param_shapes(self):
        return {f"{self.name}.w1": (self.hidden, self.channels), f"{self.name}.w2": (self.channels, self.hidden)}

    def init_params(self, rng):
        return {f"{self.name}.w1": kaiming_uniform(rng, (self.hidden, self.channels), self.channels),
                f"{self.name}.w2": np.zeros((self.channels, self.hidden), dtype=np.float32)}

    def __call__(self, p: Params, u):
        self._check_channels(u, self.channels)
        z = global_avg_pool(u)
        h = relu(channel_linear(z, p[f"{self.name}.w1"]))
        return mul_channelwise(u, sigmoid(channel_linear(h, p[f"{self.name}.w2"])))


class ECA(Layer):
    """Efficient channel attention: zero-padded 1-d convolution over the pooled channels."""

    kind = "eca"

    def __init__(self, name, channels, kernel=3):
        super().__init__(name)
        self.channels, self.k = channels, kernel

    def param_shapes(self):
        return {f"{self.name}.w": (self.k,)}

    def init_params(self, rng):
        return {f"{self.name}.w": np.zeros(self.k, dtype=np.float32)}

    def __call__(self, p: Params, u):
        self._check_channels(u, self.channels)
        alpha = sigmoid(channel_conv1d(global_avg_pool(u), p[f"{self.name}.w"]))
        return mul_channelwise(u, alpha)


class PA(Layer):
    """Pixel attention: a full (C, H, W) sigmoid mask from a 1x1 convolution."""

    kind = "pa"

    def __init__(self, name, channels):
        super().__init__(name)
        self.channels = channels

    def param_shapes(self):
        return {f"{self.name}.w": (self.channels, self.channels, 1, 1), f"{self.name}.bias": (self.channels,)}

    def init_params(self, rng):
        return {f"{self.name}.w": np.zeros((self.channels, self.channels, 1, 1), dtype=np.float32),
                f"{self.name}.bias": np.zeros(self.channels, dtype=np.float32)}

    def __call__(self, p: Params, u):
        self._check_channels(u, self.channels)
        mask = sigmoid(conv2d(u, p[f"{self.name}.w"], p[f"{self.name}.bias"]))
        return mul(mask, u)


ATTENTION_LAYERS = {"lca": LCA, "ca": CA, "eca": ECA, "pa": PA}


def make_attention(kind: str, prefix: str, channels: int, index="", ca_reduction=16,
                   eca_kernel=3) -> Optional[Layer]:
    """Attention layer named ``{prefix}{kind}{index}``, e.g. ``rafg0.lca1``; None for kind "none"."""
    kind = kind.lower()
    if kind == "none":
        return None
    if kind not in ATTENTION_LAYERS:
        raise ValueError(f"unknown attention kind {kind!r}")
    name = f"{prefix}{kind}{index}"
    if kind == "ca":
        return CA(name, channels, ca_reduction)
    if kind == "eca":
        return ECA(name, channels, eca_kernel)
    return ATTENTION_LAYERS[kind](name, channels)


# -- blocks ------------------------------------------------------------------

class Composite(Layer):
    def sublayers(self) -> list:
        raise NotImplementedError

    def param_shapes(self):
        out = {}
        for layer in self.sublayers():
            out.update(layer.param_shapes())
        return out

    def init_params(self, rng):
        out = {}
        for layer in self.sublayers():
            out.update(layer.init_params(rng))
        return out


class ResidualBlock(Composite):
    """``x + conv(relu(conv(x)))``; with ``attention`` the branch is gated before the skip."""

    kind = "residual_block"

    def __init__(self, name, channels, weight_norm=True, attention: Optional[Layer] = None):
        super().__init__(name)
        self.channels = channels
        self.conv1 = Conv(f"{name}.conv1", channels, channels, 3, weight_norm)
        self.conv2 = Conv(f"{name}.conv2", channels, channels, 3, weight_norm)
        self.attention = attention

    def sublayers(self):
        return [self.conv1, self.conv2] + ([self.attention] if self.attention else [])

    def __call__(self, p: Params, x):
        self._check_channels(x, self.channels)
        branch = self.conv2(p, relu(self.conv1(p, x)))
        if self.attention is not None:
            branch = self.attention(p, branch)
        return add(x, branch)


class Bank(Composite):
    """Channel concatenation followed by a 1x1 bottleneck back to C channels.

    An attention bank additionally passes the bottleneck output through an
    attention layer.
    """

    kind = "bank"

    def __init__(self, name, n_inputs, channels, weight_norm=True, attention: Optional[Layer] = None):
        super().__init__(name)
        self.n_inputs, self.channels = n_inputs, channels
        self.conv = Conv(f"{name}.conv", n_inputs * channels, channels, 1, weight_norm)
        self.attention = attention

    def sublayers(self):
        return [self.conv] + ([self.attention] if self.attention else [])

    def __call__(self, p: Params, xs):
        if len(xs) != self.n_inputs:
            raise DimensionError(f"{self.name}: expected {self.n_inputs} inputs, got {len(xs)}")
        out = self.conv(p, concat_channels(xs))
        if self.attention is not None:
            out = self.attention(p, out)
        return out


class Upsampler(Composite):
    """3x3 expansion to C*s^2 channels, one pixel shuffle, 3x3 projection to RGB."""

    kind = "upsampler"

    def __init__(self, name, channels, scale, weight_norm=True, out_channels=3):
        super().__init__(name)
        if scale not in (2, 3, 4):
            raise ValueError(f"{name}: unsupported scale {scale}; expected 2, 3 or 4")
        self.channels, self.scale = channels, scale
        self.expand = Conv(f"{name}.convexpand", channels, channels * scale * scale, 3, weight_norm)
        self.out = Conv(f"{name}.convout", channels, out_channels, 3, weight_norm)

    def sublayers(self):
        return [self.expand, self.out]

    def __call__(self, p: Params, x):
        self._check_channels(x, self.channels)
        return self.out(p, pixel_shuffle(self.expand(p, x), self.scale))
