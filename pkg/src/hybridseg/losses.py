"""Training objectives.

Every loss accepts numpy arrays or :class:`Tensor` operands and returns a
scalar Tensor, so the same code serves evaluation and backpropagation.
Probabilities are clamped to [PROB_EPS, 1 - PROB_EPS] before any log.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

PROB_EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_dice: float = 1.0
    lambda_focal: float = 1.0
    lambda_diff: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        for name in ("lambda_dice", "lambda_focal", "lambda_diff", "gamma"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


def _t(x, like=None) -> Tensor:
    return ad.as_tensor(x, like)


def _match(a, b) -> tuple[Tensor, Tensor]:
    if np.shape(a.data if isinstance(a, Tensor) else a) != np.shape(b.data if isinstance(b, Tensor) else b):
        raise ValueError("shape mismatch between target and prediction")
    if isinstance(a, Tensor):
        return a, _t(b, a)
    b = _t(b)
    return _t(a, b), b


def _clamp(p: Tensor) -> Tensor:
    return ad.clip(p, PROB_EPS, 1.0 - PROB_EPS)


def bernoulli_kl(p_true, p_model) -> Tensor:
    """Mean over elements of KL(B(p_true) || B(p_model)) in nats."""
    p, q = _match(p_true, p_model)
    p, q = _clamp(p), _clamp(q)
    one = 1.0 - p
    kl = p * (ad.log(p) - ad.log(q)) + one * (ad.log(one) - ad.log(1.0 - q))
    return ad.mean(kl)


def focal_loss(eps_true, eps_hat, gamma: float = 2.0) -> Tensor:
    """Binary focal loss averaged over elements; gamma = 0 gives BCE."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    e, p = _match(eps_true, eps_hat)
    p = _clamp(p)
    q = 1.0 - p
    pos = e * (q**gamma) * ad.log(p)
    neg = (1.0 - e) * (p**gamma) * ad.log(q)
    return -ad.mean(pos + neg)


def bce_loss(target, pred) -> Tensor:
    e, p = _match(target, pred)
    p = _clamp(p)
    return -ad.mean(e * ad.log(p) + (1.0 - e) * ad.log(1.0 - p))


def ce_loss(y_onehot, probs) -> Tensor:
    """Pixel-wise multi-class cross-entropy; class axis last, mean over pixels."""
    y, p = _match(y_onehot, probs)
    return -ad.mean(ad.tsum(y * ad.log(_clamp(p)), axis=-1))


def dice_loss(y, probs, smooth: float = 1.0) -> Tensor:
    """1 - mean over channels (last axis) of the soft Dice over all other axes."""
    y, p = _match(y, probs)
    axes = tuple(range(y.ndim - 1))
    inter = ad.tsum(y * p, axis=axes)
    denom = ad.tsum(y, axis=axes) + ad.tsum(p, axis=axes)
    return 1.0 - ad.mean((2.0 * inter + smooth) / (denom + smooth))


def disc_loss(y_onehot, probs, w: LossWeights = LossWeights(), fg_slice=slice(None)) -> Tensor:
    """Cross-entropy plus weighted Dice; Dice runs over the ``fg_slice`` channels."""
    y, p = _match(y_onehot, probs)
    return ce_loss(y, p) + w.lambda_dice * dice_loss(y[..., fg_slice], p[..., fg_slice])


def diffusion_loss(kl, focal, w: LossWeights = LossWeights()):
    return kl + w.lambda_focal * focal


def hybrid_loss(disc, diff, w: LossWeights = LossWeights()):
    return disc + w.lambda_diff * diff
