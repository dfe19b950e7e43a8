import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridseg.schedule import ALPHA_BAR_MIN, cosine_schedule, from_alpha_bar, lookup, respace

# independent high-precision evaluations of the closed-form cosine expression (T=10, s=0.008)
FROZEN_ALPHA_BAR = {1: 0.97209273711396917, 5: 0.49384359044063771, 9: 0.024091724140085855}


def test_endpoints():
    sched = cosine_schedule(10)
    assert sched.alpha_bar[0] == 1.0
    assert sched.alpha_bar[10] == ALPHA_BAR_MIN
    assert len(sched.alpha_bar) == 11 and len(sched.alpha) == 10 and len(sched.beta) == 10


@pytest.mark.parametrize("t", sorted(FROZEN_ALPHA_BAR))
def test_alpha_bar_matches_frozen_oracle(t):
    assert cosine_schedule(10).alpha_bar[t] == pytest.approx(FROZEN_ALPHA_BAR[t], abs=1e-14)


def test_alpha_bar_direct_formula():
    s, T = 0.008, 10
    f = lambda t: math.cos(((t / T + s) / (1 + s)) * math.pi / 2) ** 2  # noqa: E731
    assert cosine_schedule(T).alpha_bar[5] == pytest.approx(f(5) / f(0), rel=1e-13)


@given(st.integers(1, 400), st.floats(1e-4, 0.5))
def test_invariants(T, s):
    sched = cosine_schedule(T, s)
    ab = sched.alpha_bar
    assert ab[0] == 1.0
    assert np.all(np.diff(ab) < 0)
    assert np.all((ab >= ALPHA_BAR_MIN) & (ab <= 1.0))
    assert np.all((sched.beta >= 0) & (sched.beta <= 1))
    np.testing.assert_allclose(sched.alpha * ab[:-1], ab[1:], rtol=0, atol=1e-12)
    np.testing.assert_allclose(np.cumprod(sched.alpha), ab[1:], rtol=0, atol=1e-10)


@pytest.mark.parametrize("T,s", [(0, 0.008), (-3, 0.008), (10, 0.0), (10, -0.1), (2.5, 0.008)])
def test_rejects_bad_arguments(T, s):
    with pytest.raises(ValueError):
        cosine_schedule(T, s)


def test_lookup():
    sched = cosine_schedule(10)
    beta, alpha, ab, ab_prev = lookup(sched, 1)
    assert ab_prev == 1.0 and alpha == pytest.approx(ab)
    assert beta == pytest.approx(1 - alpha)
    assert lookup(sched, 10)[2] == ALPHA_BAR_MIN
    for bad in (0, 11):
        with pytest.raises(IndexError):
            lookup(sched, bad)


def test_arrays_are_read_only():
    sched = cosine_schedule(10)
    with pytest.raises(ValueError):
        sched.alpha_bar[3] = 0.5


def test_respace_full_is_identity():
    sched = cosine_schedule(10)
    assert respace(sched, 10) is sched


@given(st.integers(1, 60), st.data())
def test_respace_keeps_selected_alpha_bar(T, data):
    steps = data.draw(st.integers(1, T))
    sched = cosine_schedule(T)
    sub = respace(sched, steps)
    assert sub.T == steps
    assert sub.timesteps[-1] == T
    assert np.all(np.diff(sub.timesteps) > 0)
    np.testing.assert_array_equal(sub.alpha_bar[1:], sched.alpha_bar[sub.timesteps])
    np.testing.assert_allclose(np.cumprod(sub.alpha), sub.alpha_bar[1:], rtol=1e-12)


def test_respace_even_spacing():
    sub = respace(cosine_schedule(10), 5)
    assert list(sub.timesteps) == [2, 4, 6, 8, 10]
    with pytest.raises(ValueError):
        respace(cosine_schedule(10), 11)


def test_from_alpha_bar_validation():
    sched = from_alpha_bar([1.0, 0.8, 0.72])
    assert sched.alpha[1] == pytest.approx(0.9)
    with pytest.raises(ValueError):
        from_alpha_bar([0.9, 0.5])
    with pytest.raises(ValueError):
        from_alpha_bar([1.0, 0.5, 0.6])
