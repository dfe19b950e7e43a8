import math

import numpy as np
import pytest
from helpers import gradcheck
from hypothesis import given
from hypothesis import strategies as st

from hybridseg import autodiff as ad
from hybridseg.losses import (
    PROB_EPS,
    LossWeights,
    bce_loss,
    bernoulli_kl,
    ce_loss,
    dice_loss,
    diffusion_loss,
    disc_loss,
    focal_loss,
    hybrid_loss,
)


def independent_bce(e, p):
    p = np.clip(p, PROB_EPS, 1 - PROB_EPS)
    return float(np.mean(-(e * np.log(p) + (1 - e) * np.log(1 - p))))


def test_kl_examples():
    assert float(bernoulli_kl(np.array([0.8]), np.array([0.5])).data) == pytest.approx(0.19274475702175749, abs=1e-12)
    assert float(bernoulli_kl(np.array([1.0]), np.array([1.0])).data) == pytest.approx(0.0, abs=1e-12)
    p = np.random.default_rng(0).random((4, 4))
    assert float(bernoulli_kl(p, p).data) == 0.0


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=20))
def test_kl_nonnegative(pairs):
    p, q = (np.array(v) for v in zip(*pairs))
    kl = float(bernoulli_kl(p, q).data)
    assert kl >= -1e-15
    cp, cq = np.clip(p, PROB_EPS, 1 - PROB_EPS), np.clip(q, PROB_EPS, 1 - PROB_EPS)
    if kl == 0.0:
        np.testing.assert_allclose(cp, cq, atol=1e-6)


def test_focal_examples():
    assert float(focal_loss(np.array([1.0]), np.array([0.5]), 0.0).data) == pytest.approx(math.log(2), abs=1e-12)
    assert float(focal_loss(np.array([1.0]), np.array([0.5]), 2.0).data) == pytest.approx(0.25 * math.log(2), abs=1e-12)
    assert float(focal_loss(np.array([1.0]), np.array([1.0 - PROB_EPS]), 2.0).data) < 1e-12
    with pytest.raises(ValueError):
        focal_loss(np.array([1.0]), np.array([0.5]), -1.0)


def test_focal_gamma_zero_is_bce():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        n = rng.integers(1, 30)
        e = (rng.random(n) < 0.5).astype(float)
        p = rng.random(n)
        assert abs(float(focal_loss(e, p, 0.0).data) - independent_bce(e, p)) <= 1e-12
        assert abs(float(bce_loss(e, p).data) - independent_bce(e, p)) <= 1e-12


def test_ce_and_dice_examples():
    y = np.zeros((2, 2, 2))
    y[..., 0] = [[1, 0], [0, 1]]
    y[..., 1] = 1 - y[..., 0]
    assert float(ce_loss(y, np.clip(y, PROB_EPS, 1)).data) < 1e-6
    assert float(dice_loss(y, y).data) == pytest.approx(0.0, abs=1e-12)
    assert float(ce_loss(y, np.full_like(y, 0.5)).data) == pytest.approx(math.log(2), abs=1e-12)
    # soft Dice without smoothing: 2 * 0.5 |y| / (|y| + 0.5 HW) on a 2x2 grid with two ones
    y1 = np.array([[1.0, 0.0], [1.0, 0.0]])[..., None]
    p1 = np.full_like(y1, 0.5)
    expected = 1 - (2 * 0.5 * 2) / (2 + 0.5 * 4)
    assert float(dice_loss(y1, p1, smooth=0.0).data) == pytest.approx(expected, abs=1e-12)
    smoothed = 1 - (2 * 0.5 * 2 + 1) / (2 + 0.5 * 4 + 1)
    assert float(dice_loss(y1, p1).data) == pytest.approx(smoothed, abs=1e-12)


def test_composites():
    assert diffusion_loss(0.0, 0.0, LossWeights()) == 0.0
    assert diffusion_loss(0.2, 0.3, LossWeights(lambda_focal=1.0)) == pytest.approx(0.5)
    assert hybrid_loss(0.0, 0.0) == 0.0
    assert hybrid_loss(1.0, 0.5, LossWeights(lambda_diff=1.0)) == pytest.approx(1.5)
    w = LossWeights()
    assert (w.lambda_dice, w.lambda_focal, w.lambda_diff, w.gamma) == (1.0, 1.0, 1.0, 2.0)
    with pytest.raises(ValueError):
        LossWeights(lambda_diff=-1.0)
    with pytest.raises(ValueError):
        LossWeights(gamma=float("nan"))


def test_shape_mismatch():
    with pytest.raises(ValueError):
        bernoulli_kl(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("which", ["kl", "focal", "focal0", "bce", "ce", "dice", "disc"])
def test_loss_gradients(which):
    rng = np.random.default_rng(hash(which) % 2**32)
    for k in range(10):
        target = (rng.random((2, 3, 3, 2)) < 0.5).astype(float)
        logits = rng.normal(size=(2, 3, 3, 2))
        soft = rng.uniform(0.05, 0.95, (2, 3, 3, 2))
        if which == "kl":
            err = gradcheck(lambda p, q: bernoulli_kl(ad.sigmoid(p), ad.sigmoid(q)), [logits, rng.normal(size=logits.shape)], k)
        elif which == "focal":
            err = gradcheck(lambda z: focal_loss(target, ad.sigmoid(z), 2.0), [logits], k)
        elif which == "focal0":
            err = gradcheck(lambda z: focal_loss(target, ad.sigmoid(z), 0.0), [logits], k)
        elif which == "bce":
            err = gradcheck(lambda z: bce_loss(soft, ad.sigmoid(z)), [logits], k)
        elif which == "ce":
            onehot = np.stack([target[..., 0], 1 - target[..., 0]], axis=-1)
            err = gradcheck(lambda z: ce_loss(onehot, ad.softmax(z, axis=-1)), [logits], k)
        elif which == "dice":
            err = gradcheck(lambda z: dice_loss(target, ad.sigmoid(z)), [logits], k)
        else:
            onehot = np.stack([target[..., 0], 1 - target[..., 0]], axis=-1)
            err = gradcheck(lambda z: disc_loss(onehot, ad.softmax(z, axis=-1), LossWeights(), slice(1, None)), [logits], k)
        assert err <= 1e-4
