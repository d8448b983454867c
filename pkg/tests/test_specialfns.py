import mpmath
import numpy as np
import pytest

from skewmatch.specialfns import zeta, zeta_vec

mpmath.mp.dps = 50


def zeta_mp(k, x):
    """High-precision oracle evaluated independently with mpmath."""
    x = mpmath.mpf(x)
    if k == 0:
        return mpmath.log(mpmath.ncdf(x))
    z1 = mpmath.npdf(x) / mpmath.ncdf(x)
    if k == 1:
        return z1
    z2 = -z1 * (x + z1)
    if k == 2:
        return z2
    return -z2 * (x + z1) - z1 * (1 + z2)


def central_diff(f, x, h, order6=False):
    if order6:
        num = (
            45.0 * (f(x + h) - f(x - h))
            - 9.0 * (f(x + 2 * h) - f(x - 2 * h))
            + (f(x + 3 * h) - f(x - 3 * h))
        )
        return num / (60.0 * h)
    num = 8.0 * (f(x + h) - f(x - h)) - (f(x + 2 * h) - f(x - 2 * h))
    return num / (12.0 * h)


def test_values_at_zero():
    assert zeta(0, 0.0) == pytest.approx(np.log(0.5), rel=1e-15)
    assert zeta(1, 0.0) == pytest.approx(np.sqrt(2.0 / np.pi), rel=1e-15)
    assert zeta(2, 0.0) == pytest.approx(-2.0 / np.pi, rel=1e-14)
    # recurrence value at 0, cross-checked below against finite differences
    expected3 = 2.0 * (2.0 / np.pi) ** 1.5 - np.sqrt(2.0 / np.pi)
    assert zeta(3, 0.0) == pytest.approx(expected3, rel=1e-13)
    fd3 = central_diff(
        lambda u: central_diff(lambda v: zeta(1, v), u, 1e-4), 0.0, 1e-4, order6=True
    )
    assert zeta(3, 0.0) == pytest.approx(fd3, rel=1e-5)


@pytest.mark.parametrize("k", [0, 1, 2, 3])
def test_matches_high_precision_oracle_core(k):
    for x in np.arange(-8.0, 8.0 + 0.25, 0.25):
        expected = float(zeta_mp(k, x))
        got = zeta(k, float(x))
        assert got == pytest.approx(expected, rel=1e-12), f"x={x}"


@pytest.mark.parametrize("k", [1, 2, 3])
def test_matches_high_precision_oracle_left_tail(k):
    for x in [-8.0, -20.0, -50.0, -100.0, -300.0, -700.0]:
        expected = float(zeta_mp(k, x))
        assert zeta(k, x) == pytest.approx(expected, rel=1e-9), f"x={x}"


def test_finite_difference_ladder():
    # zeta_k is the derivative of zeta_{k-1}: 4th-order stencil, h=1e-5
    xs = np.arange(-8.0, 8.0 + 0.25, 0.25)
    for k in (1, 2, 3):
        for x in xs:
            fd = central_diff(lambda u: zeta(k - 1, u), float(x), 1e-5)
            assert zeta(k, float(x)) == pytest.approx(fd, rel=1e-6)


def test_sign_properties():
    xs = np.concatenate([np.arange(-8.0, 8.0 + 0.25, 0.25), [-30.0, 30.0]])
    z1 = zeta_vec(1, xs)
    z2 = zeta_vec(2, xs)
    assert np.all(z1 > 0.0)
    assert np.all(z2 < 0.0)


def test_zeta0_monotone():
    xs = np.arange(-8.0, 8.0 + 0.25, 0.25)
    assert np.all(np.diff(zeta_vec(0, xs)) > 0.0)


def test_left_tail_asymptotic():
    for x in (-20.0, -30.0):
        approx = -x + 1.0 / (-x)
        assert abs(zeta(1, x) - approx) / abs(x) < 0.01


def test_deep_tail_does_not_overflow():
    x = -750.0
    val = zeta(1, x)
    assert np.isfinite(val)
    assert val == pytest.approx(-x + 1.0 / (-x), rel=1e-6)


def test_vectorized_matches_scalar():
    xs = np.array([-5.0, 5.0])
    for k in range(4):
        vec = zeta_vec(k, xs)
        assert vec[0] == zeta(k, -5.0)
        assert vec[1] == zeta(k, 5.0)


def test_vectorized_broadcast_and_empty():
    np.testing.assert_allclose(
        zeta_vec(1, [0.0, 0.0]), [0.7978845608028654] * 2, rtol=1e-15
    )
    assert zeta_vec(0, []).shape == (0,)


def test_rejects_bad_inputs():
    with pytest.raises(ValueError):
        zeta(4, 0.0)
    with pytest.raises(ValueError):
        zeta(-1, 0.0)
    with pytest.raises(ValueError):
        zeta(1.5, 0.0)
    with pytest.raises(ValueError):
        zeta(1, np.nan)
    with pytest.raises(ValueError):
        zeta(1, np.inf)
    with pytest.raises(ValueError):
        zeta_vec(2, [0.0, np.nan])
