"""Parameterised building blocks on top of the autodiff engine (NHWC layout)."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..bitops import LayerSpec, binarize_weight, ta_activate, tb_binarize


PARAM = "param"  # Tensor.name tag marking trainable leaves, frozen or not


class Module:
    """Collects Tensor parameters and sub-modules assigned as attributes."""

    def parameters(self, prefix: str = "") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.name == PARAM:
                out[key] = value
            elif isinstance(value, Module):
                out.update(value.parameters(key + "."))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        out.update(item.parameters(f"{key}.{i}."))
        return out

    def set_trainable(self, flag: bool) -> None:
        """Freeze (False) or unfreeze (True) every parameter."""
        for p in self.parameters().values():
            p.requires_grad = flag

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def cost_layers(self, h: int, w: int) -> list[LayerSpec]:
        return []


def _param(data: np.ndarray, dtype) -> Tensor:
    return Tensor(np.asarray(data, dtype=dtype), requires_grad=True, name=PARAM)


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32, bias: bool = True):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = _param(rng.uniform(-bound, bound, (n_in, n_out)), dtype)
        self.bias = _param(np.zeros(n_out), dtype) if bias else None
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x: Tensor) -> Tensor:
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y

    def spec(self, name: str, rows: int) -> LayerSpec:
        return LayerSpec(name, rows, self.n_in, self.n_out)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator, k: int = 3, dtype=np.float32):
        std = math.sqrt(2.0 / (k * k * c_in))
        self.weight = _param(rng.normal(0.0, std, (k, k, c_in, c_out)), dtype)
        self.bias = _param(np.zeros(c_out), dtype)
        self.c_in, self.c_out, self.k = c_in, c_out, k

    def __call__(self, x: Tensor) -> Tensor:
        return ad.conv2d(x, self.weight, self.bias)

    def spec(self, name: str, h: int, w: int) -> LayerSpec:
        return LayerSpec(name, h * w, self.k * self.k * self.c_in, self.c_out)


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32):
        self.weight = _param(np.ones(d), dtype)
        self.bias = _param(np.zeros(d), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.weight, self.bias)


def timestep_embedding(t, dim: int, dtype=np.float32) -> np.ndarray:
    """Sinusoidal embedding of integer steps, shape (B, dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    return np.concatenate([np.sin(args), np.cos(args)], axis=1).astype(dtype)


class TimeConditioner(Module):
    """Maps a time embedding to per-channel TB/TA parameters."""

    def __init__(self, t_dim: int, channels: int, rng: np.random.Generator, dtype=np.float32,
                 kind: str = "both"):
        if kind not in ("tb", "ta", "both"):
            raise ValueError(f"unknown conditioner kind {kind!r}")
        self.to_alpha = self.to_shift = self.beta = None
        # small init keeps thresholds near zero at the start of training
        if kind in ("tb", "both"):
            self.to_alpha = Linear(t_dim, channels, rng, dtype)
            self.to_alpha.weight.data *= 0.1
        if kind in ("ta", "both"):
            self.to_shift = Linear(t_dim, 2 * channels, rng, dtype)
            self.to_shift.weight.data *= 0.1
            self.beta = _param(np.full(channels, 0.25), dtype)
        self.channels = channels

    def __call__(self, temb: Tensor, ndim: int):
        """Return (alpha, gamma, zeta, beta) broadcastable against a rank-``ndim`` input.

        Entries the conditioner was not built for come back as None.
        """
        shape = (temb.shape[0],) + (1,) * (ndim - 2) + (self.channels,)
        alpha = gamma = zeta = None
        if self.to_alpha is not None:
            alpha = self.to_alpha(temb).reshape(shape)
        if self.to_shift is not None:
            shift = self.to_shift(temb)
            gamma = shift[:, : self.channels].reshape(shape)
            zeta = shift[:, self.channels :].reshape(shape)
        return alpha, gamma, zeta, self.beta


class BinaryConv2d(Module):
    """TB -> ±1 convolution with scaled sign weights -> TA.

    In training the ±1 product runs through the float conv (values are exact
    small integers); ``use_xnor`` switches the forward to the packed
    XNOR/popcount kernel, which gives identical numbers.
    """

    def __init__(self, c_in: int, c_out: int, t_dim: int, rng: np.random.Generator, dtype=np.float32):
        std = math.sqrt(2.0 / (9 * c_in))
        self.weight = _param(rng.normal(0.0, std, (3, 3, c_in, c_out)), dtype)
        self.cond = TimeConditioner(t_dim, c_in, rng, dtype, kind="tb")
        self.post = TimeConditioner(t_dim, c_out, rng, dtype, kind="ta")
        self.c_in, self.c_out = c_in, c_out
        self.use_xnor = False

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        alpha, _, _, _ = self.cond(temb, x.ndim)
        xb = tb_binarize(x, alpha)
        wb = binarize_weight(self.weight)
        if self.use_xnor and ad.no_tape_active():
            from ..bitops import xnor_conv2d

            signs = np.where(self.weight.data > 0, 1, -1).astype(np.int8)
            scale = wb.data[0, 0, 0] / signs[0, 0, 0]
            y = Tensor(xnor_conv2d(xb.data.astype(np.int8), signs).astype(x.dtype) * scale)
        else:
            y = ad.conv2d(xb, wb, pad_value=-1.0)
        _, gamma, zeta, beta = self.post(temb, y.ndim)
        return ta_activate(y, gamma, zeta, beta)

    def spec(self, name: str, h: int, w: int) -> LayerSpec:
        return LayerSpec(name, h * w, 9 * self.c_in, self.c_out, binarized=True)


class BinaryLinear(Module):
    """TB on the input, scaled sign weights, no activation."""

    def __init__(self, n_in: int, n_out: int, t_dim: int, rng: np.random.Generator, dtype=np.float32):
        bound = 1.0 / math.sqrt(n_in)
        self.weight = _param(rng.uniform(-bound, bound, (n_in, n_out)), dtype)
        self.bias = _param(np.zeros(n_out), dtype)
        self.cond = TimeConditioner(t_dim, n_in, rng, dtype, kind="tb")
        self.n_in, self.n_out = n_in, n_out

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        alpha, _, _, _ = self.cond(temb, x.ndim)
        return ad.matmul(tb_binarize(x, alpha), binarize_weight(self.weight)) + self.bias

    def spec(self, name: str, rows: int) -> LayerSpec:
        return LayerSpec(name, rows, self.n_in, self.n_out, binarized=True)


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Half-pixel-centred linear interpolation weights, shape (n_out, n_in)."""
    m = np.zeros((n_out, n_in))
    if n_in == 1:
        m[:, 0] = 1.0
        return m
    scale = n_in / n_out
    for i in range(n_out):
        src = min(max((i + 0.5) * scale - 0.5, 0.0), n_in - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n_in - 1)
        frac = src - lo
        m[i, lo] += 1.0 - frac
        m[i, hi] += frac
    return m


def resize_bilinear(x: Tensor, h: int, w: int) -> Tensor:
    n, h0, w0, c = x.shape
    if (h0, w0) == (h, w):
        return x
    ry = bilinear_matrix(h, h0).astype(x.dtype)
    rx = bilinear_matrix(w, w0).astype(x.dtype)
    y = ad.matmul(ry, x.reshape(n, h0, w0 * c))
    return ad.matmul(rx, y.reshape(n * h, w0, c)).reshape(n, h, w, c)
