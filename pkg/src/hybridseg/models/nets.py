"""Reference segmentor and refiner networks (toy-scale U-shaped CNNs)."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import autodiff as ad
from ..autodiff import Tensor
from ..bitops import LayerSpec
from .layers import BinaryConv2d, Conv2d, Linear, Module, timestep_embedding
from .xformer import XFormer


@dataclass
class ModelConfig:
    size: int = 32
    in_channels: int = 1
    classes: int = 2  # foreground classes; the segmentor adds a background class
    seg_channels: tuple[int, ...] = (8, 16, 32, 64)
    ref_channels: tuple[int, ...] = (16, 32, 64)
    t_dim: int = 64
    xformer: bool = True
    xformer_d: int = 64
    heads: int = 4
    binarized: bool = False
    binarize_io: bool = False  # also binarize the refiner's input/output convs
    refiner_sees_image: bool = True
    sigmoid: bool = False  # single-class sigmoid head instead of softmax
    seed: int = 0

    def validate(self) -> None:
        if self.size < 8 or self.size % (2 ** (len(self.seg_channels) - 1)):
            raise ValueError(f"size {self.size} must be divisible by the segmentor's downsampling")
        if self.size % (2 ** (len(self.ref_channels) - 1)):
            raise ValueError(f"size {self.size} must be divisible by the refiner's downsampling")
        if self.classes < 1 or self.in_channels < 1:
            raise ValueError("classes and in_channels must be >= 1")
        if self.sigmoid and self.classes != 1:
            raise ValueError("sigmoid mode requires classes == 1")
        if self.xformer_d % self.heads:
            raise ValueError("xformer_d must be divisible by heads")

    def to_dict(self) -> dict:
        return asdict(self)


def _to_tensor(x, dtype=np.float32) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=dtype))


class ConvBlock(Module):
    """conv-relu-conv-relu, with an optional per-channel time shift after the first conv."""

    def __init__(self, c_in: int, c_out: int, rng, t_dim: int | None = None):
        self.conv1 = Conv2d(c_in, c_out, rng)
        self.conv2 = Conv2d(c_out, c_out, rng)
        self.time = Linear(t_dim, c_out, rng) if t_dim else None

    def __call__(self, x: Tensor, temb: Tensor | None = None) -> Tensor:
        h = self.conv1(x)
        if self.time is not None:
            h = h + self.time(temb).reshape(temb.shape[0], 1, 1, -1)
        return ad.relu(self.conv2(ad.relu(h)))

    def specs(self, name: str, h: int, w: int) -> list[LayerSpec]:
        return [self.conv1.spec(f"{name}.conv1", h, w), self.conv2.spec(f"{name}.conv2", h, w)]


class BinaryBlock(Module):
    """Two TB -> xnor conv -> TA layers with identity shortcuts where widths allow."""

    def __init__(self, c_in: int, c_out: int, rng, t_dim: int):
        self.conv1 = BinaryConv2d(c_in, c_out, t_dim, rng)
        self.conv2 = BinaryConv2d(c_out, c_out, t_dim, rng)

    def __call__(self, x: Tensor, temb: Tensor) -> Tensor:
        h = self.conv1(x, temb)
        if x.shape[-1] == h.shape[-1]:
            h = h + x
        return self.conv2(h, temb) + h

    def specs(self, name: str, h: int, w: int) -> list[LayerSpec]:
        return [self.conv1.spec(f"{name}.conv1", h, w), self.conv2.spec(f"{name}.conv2", h, w)]


class Segmentor(Module):
    """U-shaped encoder-decoder producing per-pixel class probabilities.

    ``forward`` returns (probs, f_d): probs has K = classes + 1 channels
    (background first) in softmax mode, or a single foreground channel in
    sigmoid mode; f_d is the bottleneck feature map.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        ch = cfg.seg_channels
        self.cfg = cfg
        self.enc = [ConvBlock(cfg.in_channels if i == 0 else ch[i - 1], ch[i], rng) for i in range(len(ch))]
        self.dec = [ConvBlock(ch[i + 1] + ch[i], ch[i], rng) for i in reversed(range(len(ch) - 1))]
        self.n_out = 1 if cfg.sigmoid else cfg.classes + 1
        self.head = Conv2d(ch[0], self.n_out, rng, k=1)

    @property
    def mid_channels(self) -> int:
        return self.cfg.seg_channels[-1]

    def forward(self, x) -> tuple[Tensor, Tensor]:
        x = _to_tensor(x)
        if x.ndim != 4 or x.shape[1:] != (self.cfg.size, self.cfg.size, self.cfg.in_channels):
            raise ValueError(f"expected input (B, {self.cfg.size}, {self.cfg.size}, {self.cfg.in_channels}), got {x.shape}")
        skips = []
        h = x
        for i, block in enumerate(self.enc):
            if i:
                h = ad.avg_pool2(h)
            h = block(h)
            skips.append(h)
        f_d = h
        for block, skip in zip(self.dec, reversed(skips[:-1])):
            h = block(ad.concat([ad.upsample2(h), skip], axis=-1))
        logits = self.head(h)
        probs = ad.sigmoid(logits) if self.cfg.sigmoid else ad.softmax(logits, axis=-1)
        return probs, f_d

    __call__ = forward

    def prior(self, probs):
        """Foreground channels of the class probabilities, shape (B, H, W, classes)."""
        return probs if self.cfg.sigmoid else probs[..., 1:]

    def cost_layers(self, h: int, w: int) -> list[LayerSpec]:
        specs = []
        for i, block in enumerate(self.enc):
            specs += block.specs(f"seg.enc{i}", h >> i, w >> i)
        n = len(self.enc) - 1
        for j, block in enumerate(self.dec):
            lvl = n - 1 - j
            specs += block.specs(f"seg.dec{lvl}", h >> lvl, w >> lvl)
        specs.append(self.head.spec("seg.head", h, w))
        return specs


class Refiner(Module):
    """U-shaped noise estimator eps_hat(y_t, t, prior).

    The input is the concatenation of y_t, the prior mask and (optionally)
    the image.  The time embedding shifts every block.  At the bottleneck the
    X-Former exchanges features with the segmentor's f_d when one is given.
    """

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, seg_mid_channels: int):
        ch = cfg.ref_channels
        self.cfg = cfg
        c_in = 2 * cfg.classes + (cfg.in_channels if cfg.refiner_sees_image else 0)
        self.t1 = Linear(cfg.t_dim, cfg.t_dim, rng)
        self.t2 = Linear(cfg.t_dim, cfg.t_dim, rng)
        bio = cfg.binarized and cfg.binarize_io
        self.conv_in = BinaryConv2d(c_in, ch[0], cfg.t_dim, rng) if bio else Conv2d(c_in, ch[0], rng)
        Block = (lambda a, b: BinaryBlock(a, b, rng, cfg.t_dim)) if cfg.binarized else (lambda a, b: ConvBlock(a, b, rng, cfg.t_dim))
        self.enc = [Block(ch[0] if i == 0 else ch[i - 1], ch[i]) for i in range(len(ch))]
        self.dec = [Block(ch[i + 1] + ch[i], ch[i]) for i in reversed(range(len(ch) - 1))]
        self.xformer = None
        if cfg.xformer:
            self.xformer = XFormer(seg_mid_channels, ch[-1], rng, d=cfg.xformer_d, heads=cfg.heads,
                                   binarized=cfg.binarized, t_dim=cfg.t_dim)
            self.inject = Linear(seg_mid_channels, ch[-1], rng, bias=False)
        self.head = BinaryConv2d(ch[0], cfg.classes, cfg.t_dim, rng) if bio else Conv2d(ch[0], cfg.classes, rng, k=1)
        if not bio:
            # the flip noise is sparse; start eps_hat well below 0.5
            self.head.bias.data[:] = -2.0
        self.last_f_d_prime: Tensor | None = None

    def _layer(self, layer, x, temb):
        return layer(x, temb) if isinstance(layer, BinaryConv2d) else layer(x)

    def time_embedding(self, t, batch: int) -> Tensor:
        t = np.broadcast_to(np.asarray(t), (batch,))
        if np.any(t < 1):
            raise ValueError("refiner steps start at 1")
        e = Tensor(timestep_embedding(t, self.cfg.t_dim))
        return self.t2(ad.silu(self.t1(e)))

    def forward(self, y_t, t, prior, image=None, f_d: Tensor | None = None) -> tuple[Tensor, Tensor]:
        y_t, prior = _to_tensor(y_t), _to_tensor(prior)
        if y_t.shape != prior.shape or y_t.shape[-1] != self.cfg.classes:
            raise ValueError(f"y_t {y_t.shape} and prior {prior.shape} must match with {self.cfg.classes} channels")
        parts = [y_t, prior]
        if self.cfg.refiner_sees_image:
            if image is None:
                raise ValueError("this refiner is conditioned on the image")
            image = _to_tensor(image)
            if image.shape[:3] != y_t.shape[:3]:
                raise ValueError(f"image {image.shape} does not match mask {y_t.shape}")
            parts.append(image)
        temb = self.time_embedding(t, y_t.shape[0])
        h = ad.relu(self._layer(self.conv_in, ad.concat(parts, axis=-1), temb))
        skips = []
        for i, block in enumerate(self.enc):
            if i:
                h = ad.avg_pool2(h)
            h = block(h, temb)
            skips.append(h)
        f_p = h
        if self.xformer is not None and f_d is not None:
            f_d_prime, f_p_prime = self.xformer.exchange(f_d, f_p, temb)
            self.last_f_d_prime = f_d_prime
            h = f_p_prime + self.inject(f_d_prime)
        for block, skip in zip(self.dec, reversed(skips[:-1])):
            h = block(ad.concat([ad.upsample2(h), skip], axis=-1), temb)
        return ad.sigmoid(self._layer(self.head, h, temb)), f_p

    __call__ = forward

    def set_xnor(self, enabled: bool) -> None:
        """Route binarized convolutions through the packed XNOR kernel (inference only)."""
        for layer in _walk(self):
            if isinstance(layer, BinaryConv2d):
                layer.use_xnor = enabled

    def cost_layers(self, h: int, w: int) -> list[LayerSpec]:
        specs = [self.conv_in.spec("ref.conv_in", h, w)]
        for i, block in enumerate(self.enc):
            specs += block.specs(f"ref.enc{i}", h >> i, w >> i)
        n = len(self.enc) - 1
        if self.xformer is not None:
            specs += self.xformer.cost_layers(h >> n, w >> n)
            specs.append(self.inject.spec("ref.inject", (h >> n) * (w >> n)))
        for j, block in enumerate(self.dec):
            lvl = n - 1 - j
            specs += block.specs(f"ref.dec{lvl}", h >> lvl, w >> lvl)
        specs.append(self.head.spec("ref.head", h, w))
        return specs


def _walk(module: Module):
    yield module
    for value in vars(module).values():
        if isinstance(value, Module):
            yield from _walk(value)
        elif isinstance(value, (list, tuple)):
            for item in value:
                if isinstance(item, Module):
                    yield from _walk(item)


def build_reference_models(cfg: ModelConfig | None = None) -> tuple[Segmentor, Refiner]:
    cfg = cfg or ModelConfig()
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    seg = Segmentor(cfg, rng)
    ref = Refiner(cfg, rng, seg.mid_channels)
    return seg, ref
