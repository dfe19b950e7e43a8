"""Cosine noise schedule for the Bernoulli forward process.

Step indices run 1..T.  ``alpha_bar`` carries an extra leading entry for
t=0 (always 1) so that posterior terms at t=1 need no special case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ALPHA_BAR_MIN = 1e-9


@dataclass(frozen=True)
class NoiseSchedule:
    T: int
    alpha_bar: np.ndarray  # length T+1, alpha_bar[0] == 1
    alpha: np.ndarray  # length T, alpha[t-1] is alpha_t
    beta: np.ndarray  # length T
    s: float
    # original training step for each position; differs from 1..T only after respacing
    timesteps: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        if self.timesteps is None:
            object.__setattr__(self, "timesteps", np.arange(1, self.T + 1))
        for arr in (self.alpha_bar, self.alpha, self.beta, self.timesteps):
            arr.setflags(write=False)


def _from_alpha_bar(alpha_bar: np.ndarray, s: float, timesteps=None) -> NoiseSchedule:
    alpha = alpha_bar[1:] / alpha_bar[:-1]
    beta = 1.0 - alpha
    return NoiseSchedule(
        T=len(alpha), alpha_bar=alpha_bar, alpha=alpha, beta=beta, s=s, timesteps=timesteps
    )


def cosine_schedule(T: int = 10, s: float = 0.008) -> NoiseSchedule:
    """Cosine schedule with alpha_bar clamped to [1e-9, 1]."""
    if not isinstance(T, (int, np.integer)) or T < 1:
        raise ValueError(f"T must be a positive integer, got {T!r}")
    if not s > 0:
        raise ValueError(f"s must be positive, got {s!r}")
    t = np.arange(T + 1, dtype=np.float64)
    f = np.cos((t / T + s) / (1 + s) * math.pi / 2) ** 2
    alpha_bar = np.clip(f / f[0], ALPHA_BAR_MIN, 1.0)
    alpha_bar[0] = 1.0
    return _from_alpha_bar(alpha_bar, float(s))


def from_alpha_bar(alpha_bar, s: float = 0.008) -> NoiseSchedule:
    """Schedule from an explicit alpha_bar table: a leading 1, then non-increasing values >= 1e-9.

    Plateaus (alpha_t = 1) are allowed so degenerate kernels can be exercised.
    """
    ab = np.array(alpha_bar, dtype=np.float64)
    if ab.ndim != 1 or len(ab) < 2 or ab[0] != 1.0:
        raise ValueError("alpha_bar needs a leading 1 followed by at least one step")
    if np.any(np.diff(ab) > 0) or ab[-1] < ALPHA_BAR_MIN:
        raise ValueError(f"alpha_bar must not increase and must stay >= {ALPHA_BAR_MIN}")
    return _from_alpha_bar(ab, float(s))


def lookup(sched: NoiseSchedule, t: int) -> tuple[float, float, float, float]:
    """Return ``(beta_t, alpha_t, alpha_bar_t, alpha_bar_prev)`` for 1 <= t <= T."""
    if not 1 <= t <= sched.T:
        raise IndexError(f"step {t} outside 1..{sched.T}")
    return (
        float(sched.beta[t - 1]),
        float(sched.alpha[t - 1]),
        float(sched.alpha_bar[t]),
        float(sched.alpha_bar[t - 1]),
    )


def respace(sched: NoiseSchedule, steps: int) -> NoiseSchedule:
    """Evenly spaced sub-schedule of ``steps`` positions ending at T.

    The returned schedule keeps the cumulative alpha_bar of the selected
    steps and recomputes the per-step alpha/beta between them; its
    ``timesteps`` field holds the original step index to feed the refiner.
    """
    if not 1 <= steps <= sched.T:
        raise ValueError(f"steps must lie in 1..{sched.T}, got {steps}")
    if steps == sched.T:
        return sched
    idx = np.array([(i * sched.T + steps - 1) // steps for i in range(1, steps + 1)])
    alpha_bar = np.concatenate([[1.0], sched.alpha_bar[idx]])
    return _from_alpha_bar(alpha_bar, sched.s, timesteps=sched.timesteps[idx - 1])
