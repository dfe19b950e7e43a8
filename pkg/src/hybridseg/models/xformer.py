"""Bidirectional cross-attention bridge between segmentor and refiner features."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..bitops import LayerSpec
from .layers import BinaryLinear, LayerNorm, Linear, Module, resize_bilinear


class _Proj(Module):
    """Linear or binarized linear; the binarized one needs the time embedding."""

    def __init__(self, n_in, n_out, rng, dtype, binarized: bool, t_dim: int):
        self.binarized = binarized
        self.layer = BinaryLinear(n_in, n_out, t_dim, rng, dtype) if binarized else Linear(n_in, n_out, rng, dtype)

    def __call__(self, x: Tensor, temb: Tensor | None) -> Tensor:
        return self.layer(x, temb) if self.binarized else self.layer(x)

    def spec(self, name: str, rows: int) -> LayerSpec:
        return self.layer.spec(name, rows)


class CrossTransformerBlock(Module):
    """Pre-norm cross multi-head attention followed by a feed-forward layer.

    Queries come from ``x``, keys and values from ``context``; both sublayers
    are residual.  The attention weights of the last call are kept in
    ``last_attention`` with shape (B, heads, Nq, Nk).
    """

    def __init__(self, d: int, heads: int, rng: np.random.Generator, dtype=np.float32,
                 binarized: bool = False, t_dim: int = 64, ff_mult: int = 2):
        if d % heads:
            raise ValueError(f"width {d} not divisible by {heads} heads")
        self.d, self.heads = d, heads
        self.norm_q = LayerNorm(d, dtype)
        self.norm_kv = LayerNorm(d, dtype)
        self.q = _Proj(d, d, rng, dtype, binarized, t_dim)
        self.k = _Proj(d, d, rng, dtype, binarized, t_dim)
        self.v = _Proj(d, d, rng, dtype, binarized, t_dim)
        self.o = _Proj(d, d, rng, dtype, binarized, t_dim)
        self.norm_ff = LayerNorm(d, dtype)
        self.ff1 = _Proj(d, ff_mult * d, rng, dtype, binarized, t_dim)
        self.ff2 = _Proj(ff_mult * d, d, rng, dtype, binarized, t_dim)
        self.last_attention: np.ndarray | None = None

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.d // self.heads).transpose(0, 2, 1, 3)

    def attend(self, x: Tensor, context: Tensor, temb: Tensor | None = None) -> Tensor:
        """Residual cross-attention sublayer only."""
        b, n, _ = x.shape
        qn, kvn = self.norm_q(x), self.norm_kv(context)
        q = self._split(self.q(qn, temb))
        k = self._split(self.k(kvn, temb))
        v = self._split(self.v(kvn, temb))
        scores = ad.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(self.d // self.heads))
        attn = ad.softmax(scores, axis=-1)
        self.last_attention = attn.data
        mixed = ad.matmul(attn, v).transpose(0, 2, 1, 3).reshape(b, n, self.d)
        return x + self.o(mixed, temb)

    def __call__(self, x: Tensor, context: Tensor, temb: Tensor | None = None) -> Tensor:
        x = self.attend(x, context, temb)
        return x + self.ff2(ad.silu(self.ff1(self.norm_ff(x), temb)), temb)

    def cost_layers(self, nq: int, nk: int, prefix: str) -> list[LayerSpec]:
        d, h = self.d, self.heads
        return [
            self.q.spec(f"{prefix}.q", nq),
            self.k.spec(f"{prefix}.k", nk),
            self.v.spec(f"{prefix}.v", nk),
            LayerSpec(f"{prefix}.scores", h * nq, d // h, nk),
            LayerSpec(f"{prefix}.mix", h * nq, nk, d // h),
            self.o.spec(f"{prefix}.o", nq),
            self.ff1.spec(f"{prefix}.ff1", nq),
            self.ff2.spec(f"{prefix}.ff2", nq),
        ]


class XFormer(Module):
    """Two cross blocks: (f_d, f_p) -> f_p', then (f_p', f_d) -> f_d'.

    Feature maps are NHWC.  The segmentor feature is bilinearly resized to the
    refiner's bottleneck grid when the two differ, and both are projected to
    a shared width ``d`` and back.
    """

    def __init__(self, c_seg: int, c_ref: int, rng: np.random.Generator, d: int = 64, heads: int = 4,
                 dtype=np.float32, binarized: bool = False, t_dim: int = 64):
        self.in_d = Linear(c_seg, d, rng, dtype)
        self.in_p = Linear(c_ref, d, rng, dtype)
        self.block_p = CrossTransformerBlock(d, heads, rng, dtype, binarized, t_dim)
        self.block_d = CrossTransformerBlock(d, heads, rng, dtype, binarized, t_dim)
        self.out_d = Linear(d, c_seg, rng, dtype, bias=False)
        self.out_p = Linear(d, c_ref, rng, dtype, bias=False)
        self.d = d
        self.c_seg, self.c_ref = c_seg, c_ref

    def exchange(self, f_d: Tensor, f_p: Tensor, temb: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """Run both blocks; f_d' is returned on the refiner's grid, ready for injection."""
        b, h, w, _ = f_p.shape
        if f_d.shape[-1] != self.c_seg or f_p.shape[-1] != self.c_ref:
            raise ValueError(f"feature widths {f_d.shape[-1]}, {f_p.shape[-1]} != {self.c_seg}, {self.c_ref}")
        f_d = resize_bilinear(f_d, h, w)
        td = self.in_d(f_d.reshape(b, h * w, self.c_seg))
        tp = self.in_p(f_p.reshape(b, h * w, self.c_ref))
        tp2 = self.block_p(tp, td, temb)
        td2 = self.block_d(td, tp2, temb)
        f_p_prime = f_p + self.out_p(tp2 - tp).reshape(b, h, w, self.c_ref)
        f_d_prime = f_d + self.out_d(td2 - td).reshape(b, h, w, self.c_seg)
        return f_d_prime, f_p_prime

    def __call__(self, f_d: Tensor, f_p: Tensor, temb: Tensor | None = None) -> tuple[Tensor, Tensor]:
        """Shape-preserving form: outputs match the shapes of (f_d, f_p)."""
        hd, wd = f_d.shape[1:3]
        f_d_prime, f_p_prime = self.exchange(f_d, f_p, temb)
        return resize_bilinear(f_d_prime, hd, wd), f_p_prime

    def cost_layers(self, h: int, w: int) -> list[LayerSpec]:
        n = h * w
        return [
            self.in_d.spec("xformer.in_d", n),
            self.in_p.spec("xformer.in_p", n),
            *self.block_p.cost_layers(n, n, "xformer.block_p"),
            *self.block_d.cost_layers(n, n, "xformer.block_d"),
            self.out_d.spec("xformer.out_d", n),
            self.out_p.spec("xformer.out_p", n),
        ]
