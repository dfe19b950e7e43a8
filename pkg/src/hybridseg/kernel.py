"""Closed-form Bernoulli diffusion kernels.

All functions are elementwise over masks of any matching shape.  Masks are
float arrays holding exactly 0.0 / 1.0; probability maps hold values in
[0, 1].  ``t`` is either a python int shared by the whole array or an
integer array of shape (B,) giving one step per leading-axis element.

The posterior and calibration functions only use arithmetic operators and
``abs``, so they also accept :class:`hybridseg.autodiff.Tensor` operands and
then return a differentiable result.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor
from .schedule import NoiseSchedule


class ZeroNormalizerError(ArithmeticError):
    """Both posterior channels vanished at some pixel."""

    def __init__(self, index):
        super().__init__(f"posterior normalizer is zero at pixel {tuple(int(i) for i in index)}")
        self.index = tuple(int(i) for i in index)


def _raw(x):
    return x.data if isinstance(x, Tensor) else x


def _check_shapes(*arrays):
    shapes = {np.shape(_raw(a)) for a in arrays}
    if len(shapes) != 1:
        raise ValueError(f"shape mismatch: {sorted(shapes)}")


def _at(values: np.ndarray, t, ndim: int):
    """values[t] as a scalar, or shaped (B, 1, ..., 1) for per-sample steps."""
    if np.ndim(t) == 0:
        return float(values[int(t)])
    t = np.asarray(t)
    return values[t].reshape((-1,) + (1,) * (ndim - 1))


def _check_step(t, sched: NoiseSchedule, lo: int = 1):
    ta = np.asarray(t)
    if ta.size and (ta.min() < lo or ta.max() > sched.T):
        raise IndexError(f"step {t} outside {lo}..{sched.T}")


def _alpha_t(sched, t, ndim):
    return _at(np.concatenate([[1.0], sched.alpha]), t, ndim)


def bernoulli(p, rng: np.random.Generator) -> np.ndarray:
    """Independent per-element Bernoulli draws, returned as 0/1 floats of p's dtype."""
    p = np.asarray(p)
    dtype = p.dtype if p.dtype.kind == "f" else np.float64
    return (rng.random(p.shape) < p).astype(dtype)


def forward_step(y_prev, prior, t, sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    """One forward transition: y_t ~ B((1 - beta_t) y_{t-1} + beta_t prior)."""
    _check_shapes(y_prev, prior)
    _check_step(t, sched)
    beta = _at(np.concatenate([[0.0], sched.beta]), t, np.ndim(prior))
    return bernoulli((1.0 - beta) * y_prev + beta * prior, rng)


def forward_marginal_prob(y0, prior, t, sched: NoiseSchedule) -> np.ndarray:
    """Mean of q(y_t | y_0, prior): alpha_bar_t y0 + (1 - alpha_bar_t) prior."""
    _check_shapes(y0, prior)
    _check_step(t, sched, lo=0)
    ab = _at(sched.alpha_bar, t, np.ndim(prior))
    return ab * np.asarray(y0) + (1.0 - ab) * np.asarray(prior)


def noise_prob(y0, prior, t, sched: NoiseSchedule) -> np.ndarray:
    """P(eps = 1) = (1 - alpha_bar_t) |prior - y0|."""
    ab = _at(sched.alpha_bar, t, np.ndim(prior))
    return (1.0 - ab) * np.abs(np.asarray(prior) - np.asarray(y0))


def sample_noise_and_latent(y0, prior, t, sched: NoiseSchedule, rng: np.random.Generator):
    """Draw the flip noise eps and the latent y_t = y0 XOR eps."""
    _check_shapes(y0, prior)
    _check_step(t, sched)
    eps = bernoulli(noise_prob(y0, prior, t, sched), rng)
    y0 = np.asarray(y0)
    y_t = np.logical_xor(y0 > 0.5, eps > 0.5).astype(eps.dtype)
    return eps, y_t


def posterior_prob(y_t, y0, prior, t, sched: NoiseSchedule):
    """P(y_{t-1} = 1 | y_t, y0, prior) from the two-channel product form.

    ``y0`` may be soft (values in [0, 1]).  The scalar term
    (1 - alpha_t) |1 - y_t - prior| is added to both channels of the first
    factor before the product is l1-normalized over the channel pair.
    """
    _check_shapes(y_t, y0, prior)
    _check_step(t, sched)
    ndim = np.ndim(_raw(prior))
    a = _alpha_t(sched, t, ndim)
    ab_prev = _at(sched.alpha_bar, np.asarray(t) - 1, ndim)

    shared = (1.0 - a) * abs(1.0 - y_t - prior)
    first1 = a * y_t + shared
    first0 = a * (1.0 - y_t) + shared
    second1 = ab_prev * y0 + (1.0 - ab_prev) * prior
    second0 = ab_prev * (1.0 - y0) + (1.0 - ab_prev) * (1.0 - prior)
    num1 = first1 * second1
    norm = num1 + first0 * second0

    zero = _raw(norm) <= 0.0
    if np.any(zero):
        raise ZeroNormalizerError(np.argwhere(zero)[0])
    return num1 / norm


def estimate_y0(y_t, eps_hat):
    """Soft clean-mask estimate |y_t - eps_hat|."""
    return abs(y_t - eps_hat)


def calibrate(y_t, eps_hat, prior, t, sched: NoiseSchedule):
    """Predicted Bernoulli mean of y_{t-1}: posterior at the estimate |y_t - eps_hat|."""
    _check_shapes(y_t, eps_hat, prior)
    return posterior_prob(y_t, estimate_y0(y_t, eps_hat), prior, t, sched)


def ddpm_step(y_t, eps_hat, prior, t, sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    return bernoulli(calibrate(y_t, eps_hat, prior, t, sched), rng)


def ddim_coefficients(sched: NoiseSchedule, t) -> tuple[float, float, float]:
    """Weights on (y_t, |y_t - eps_hat|, prior) for the DDIM mean at step t.

    sigma_t = (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t), which zeroes the
    prior weight.
    """
    _check_step(t, sched)
    ab = float(sched.alpha_bar[t])
    ab_prev = float(sched.alpha_bar[t - 1])
    if ab >= 1.0:
        raise ZeroDivisionError(f"alpha_bar_{t} = 1, sigma_t undefined")
    sigma = (1.0 - ab_prev) / (1.0 - ab)
    return sigma, ab_prev - sigma * ab, (1.0 - ab_prev) - (1.0 - ab) * sigma


def ddim_mean(y_t, eps_hat, prior, t: int, sched: NoiseSchedule) -> np.ndarray:
    _check_shapes(y_t, eps_hat, prior)
    c_y, c_x0, c_prior = ddim_coefficients(sched, t)
    y_t = np.asarray(y_t)
    mean = c_y * y_t + c_x0 * np.abs(y_t - np.asarray(eps_hat)) + c_prior * np.asarray(prior)
    # convex combination of [0, 1] values; clip only removes rounding
    return np.clip(mean, 0.0, 1.0)


def ddim_step(y_t, eps_hat, prior, t: int, sched: NoiseSchedule, rng: np.random.Generator) -> np.ndarray:
    return bernoulli(ddim_mean(y_t, eps_hat, prior, t, sched), rng)
