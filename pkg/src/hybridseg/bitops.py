"""Binarized compute path.

±1 matrices are packed row-wise into 64-bit words (bit set means +1).  The
signed dot product of two packed rows of length n is 2·popcount(XNOR) - n.
Padding bits in each row's last word hold the +1 encoding in every operand,
so they cancel in the XOR and never reach a count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

WORD = 64


@dataclass(frozen=True)
class PackedMatrix:
    rows: int
    cols: int
    words: np.ndarray  # (rows, n_words) uint64

    @property
    def n_words(self) -> int:
        return self.words.shape[1]

    def valid_mask(self) -> np.ndarray:
        """Per-word masks selecting the real (non-padding) bits of a row."""
        mask = np.full(self.n_words, np.uint64(0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
        tail = self.cols % WORD
        if tail:
            mask[-1] = np.uint64((1 << tail) - 1)
        return mask


def pack(m) -> PackedMatrix:
    """Pack a 2-D ±1 matrix."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ValueError(f"pack expects a 2-D matrix, got shape {m.shape}")
    if not np.all((m == 1) | (m == -1)):
        raise ValueError("pack expects entries in {-1, +1}")
    rows, cols = m.shape
    n_words = max(1, -(-cols // WORD))
    bits = np.ones((rows, n_words * WORD), dtype=np.uint8)
    bits[:, :cols] = m > 0
    # little bit order: element j of a word lands on bit j
    packed = np.packbits(bits.reshape(rows, n_words, WORD), axis=-1, bitorder="little")
    words = packed.view("<u8").reshape(rows, n_words)
    return PackedMatrix(rows, cols, np.ascontiguousarray(words, dtype=np.uint64))


def unpack(p: PackedMatrix) -> np.ndarray:
    as_bytes = p.words.astype("<u8").view(np.uint8).reshape(p.rows, p.n_words, 8)
    bits = np.unpackbits(as_bytes, axis=-1, bitorder="little").reshape(p.rows, -1)[:, : p.cols]
    return np.where(bits == 1, 1, -1).astype(np.int8)


def xnor_gemm(a: PackedMatrix, b: PackedMatrix) -> np.ndarray:
    """Signed ±1 product ``A @ B`` where ``b`` holds the *columns* of B as rows.

    popcount(XNOR) over the valid bits equals n - popcount(XOR); padding bits
    are +1 in both operands so they never appear in the XOR.  Returns an
    (a.rows, b.rows) int64 matrix, exact.
    """
    if a.cols != b.cols:
        raise ValueError(f"inner extents differ: {a.cols} vs {b.cols}")
    mismatches = np.zeros((a.rows, b.rows), dtype=np.int32)
    for w in range(a.n_words):
        mismatches += np.bitwise_count(np.bitwise_xor(a.words[:, w, None], b.words[None, :, w]))
    matches = a.cols - mismatches.astype(np.int64)
    return 2 * matches - a.cols


def binary_matmul(a, b) -> np.ndarray:
    """Dense ±1 convenience wrapper: ``a`` (m, k) times ``b`` (k, n) through the packed path."""
    return xnor_gemm(pack(a), pack(np.asarray(b).T))


def naive_float_gemm(a, b) -> np.ndarray:
    """Unblocked float GEMM, one output row at a time (no BLAS)."""
    a = np.asarray(a, dtype=np.float32)
    b = np.asarray(b, dtype=np.float32)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner extents differ: {a.shape} x {b.shape}")
    out = np.empty((a.shape[0], b.shape[1]), dtype=np.float32)
    for i in range(a.shape[0]):
        out[i] = (a[i, :, None] * b).sum(axis=0)
    return out


# -- time-dependent binarization and activation ------------------------------


@dataclass
class TimeCond:
    """Per-channel, time-conditioned parameters of the binarized modules."""

    alpha: Tensor  # TB threshold
    gamma: Tensor  # TA shift before the hinge
    zeta: Tensor  # TA shift after the hinge
    beta: Tensor  # TA slope below the hinge


def tb_binarize(u: Tensor, threshold) -> Tensor:
    """+1 where u > threshold else -1, with a straight-through gradient for |u - threshold| <= 1."""
    return ad.sign_ste(u, threshold, window=1.0)


def ta_activate(u: Tensor, gamma, zeta, beta) -> Tensor:
    """Piecewise-linear activation hinged at ``gamma``.

    Slope 1 above the hinge, ``beta`` at or below it; both branches give
    ``zeta`` at the hinge.  The hinge itself takes the upper-branch slope.
    """
    gamma = ad.as_tensor(gamma, u)
    above = (u.data >= np.broadcast_to(gamma.data, u.shape)).astype(u.dtype)
    shifted = u - gamma
    slope = above + (1.0 - above) * ad.as_tensor(beta, u)
    return shifted * slope + zeta


def binarize_weight(w: Tensor, out_axis: int = -1) -> Tensor:
    """sign(w) scaled by the mean |w| of each output channel (XNOR-Net style)."""
    axes = tuple(i for i in range(w.ndim) if i != out_axis % w.ndim)
    scale = ad.mean(ad.absolute(w), axis=axes, keepdims=True)
    return ad.sign_ste(w, 0.0, window=1.0) * scale


def im2col_pm1(x: np.ndarray, k: int = 3, pad_value: float = -1.0) -> np.ndarray:
    """(N, H, W, C) -> (N*H*W, k*k*C) patches in (dy, dx, c) order."""
    n, h, w, c = x.shape
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)), constant_values=pad_value)
    cols = [xp[:, dy : dy + h, dx : dx + w, :] for dy in range(k) for dx in range(k)]
    return np.concatenate(cols, axis=-1).reshape(n * h * w, k * k * c)


def xnor_conv2d(x_pm1: np.ndarray, w_pm1: np.ndarray) -> np.ndarray:
    """Integer 'same' convolution of ±1 input (NHWC, padded with -1) and ±1 kernel (k, k, Cin, Cout)."""
    k, _, cin, cout = w_pm1.shape
    n, h, w, _ = x_pm1.shape
    patches = pack(im2col_pm1(x_pm1, k).astype(np.int8))
    kernel = pack(w_pm1.reshape(k * k * cin, cout).T.astype(np.int8))
    return xnor_gemm(patches, kernel).reshape(n, h, w, cout)


# -- operation accounting ----------------------------------------------------

BOPS_PER_FLOP = 64


@dataclass(frozen=True)
class OpCost:
    flops: int = 0
    bops: int = 0

    def __post_init__(self):
        if self.flops < 0 or self.bops < 0:
            raise ValueError("operation counts must be non-negative")

    @property
    def effective_flops(self) -> float:
        return self.flops + self.bops / BOPS_PER_FLOP

    def __add__(self, other: "OpCost") -> "OpCost":
        return OpCost(self.flops + other.flops, self.bops + other.bops)

    def __mul__(self, k: int) -> "OpCost":
        return OpCost(self.flops * k, self.bops * k)

    __rmul__ = __mul__


@dataclass(frozen=True)
class LayerSpec:
    """A product-shaped layer: m output rows, inner extent k, n output columns."""

    name: str
    m: int | None
    k: int | None
    n: int | None
    binarized: bool = False

    def cost(self) -> OpCost:
        if None in (self.m, self.k, self.n):
            raise ValueError(f"layer {self.name!r} is missing shape annotations")
        ops = 2 * self.m * self.k * self.n
        return OpCost(bops=ops) if self.binarized else OpCost(flops=ops)


@dataclass
class CostReport:
    rows: list[tuple[str, OpCost]] = field(default_factory=list)

    @property
    def total(self) -> OpCost:
        out = OpCost()
        for _, c in self.rows:
            out = out + c
        return out

    def to_text(self) -> str:
        lines = [f"{'layer':<32} {'flops':>14} {'bops':>14} {'effective_flops':>16}"]
        for name, c in self.rows + [("TOTAL", self.total)]:
            lines.append(f"{name:<32} {c.flops:>14d} {c.bops:>14d} {c.effective_flops:>16.1f}")
        return "\n".join(lines) + "\n"


def cost_report(layers: list[LayerSpec]) -> CostReport:
    return CostReport([(layer.name, layer.cost()) for layer in layers])


def inference_cost(segmentor: list[LayerSpec], refiner: list[LayerSpec], steps: int) -> CostReport:
    """Segmentor once plus the refiner once per sampling step."""
    seg = cost_report(segmentor).total
    ref = cost_report(refiner).total
    return CostReport([("segmentor", seg), (f"refiner x {steps}", ref * steps)])
