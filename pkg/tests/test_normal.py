"""Accuracy of the normal CDF/quantile helpers against an mpmath oracle."""

import mpmath
import numpy as np
import pytest

from online_fcr._normal import check_level, norm_cdf, norm_quantile, norm_sf, upper_quantile
from online_fcr._engine import _cdf, _isf, _ndtri, _sf

mpmath.mp.dps = 40


def mp_cdf(x: float) -> float:
    return float(mpmath.ncdf(x))


def mp_sf(x: float) -> float:
    return float(mpmath.ncdf(-x))


GRID = [-8.0, -5.0, -3.0, -1.0, -0.3, 0.0, 0.4, 1.0, 2.5, 4.0, 6.0, 8.0]


@pytest.mark.parametrize("x", GRID)
def test_cdf_accuracy(x):
    assert abs(norm_cdf(x) - mp_cdf(x)) < 1e-12
    assert abs(_cdf(x) - mp_cdf(x)) < 1e-12


@pytest.mark.parametrize("x", GRID)
def test_sf_relative_accuracy_in_tails(x):
    exact = mp_sf(x)
    assert abs(float(norm_sf(x)) - exact) <= 1e-14 * max(1.0, abs(exact) / exact if exact else 1.0)
    assert abs(float(norm_sf(x)) / exact - 1.0) < 1e-12
    assert abs(_sf(x) / exact - 1.0) < 1e-12


@pytest.mark.parametrize(
    "p", [1e-12, 1e-8, 1e-4, 0.01, 0.025, 0.05, 0.1, 0.3, 0.5, 0.7, 0.95, 0.999, 1 - 1e-8]
)
def test_quantile_accuracy(p):
    exact = float(mpmath.sqrt(2) * mpmath.erfinv(2 * mpmath.mpf(p) - 1))
    assert abs(norm_quantile(p) - exact) < 1e-9 * max(1.0, abs(exact))
    assert abs(_ndtri(p) - exact) < 1e-9 * max(1.0, abs(exact))
    # both lanes agree far tighter than the contract tolerance
    assert abs(norm_quantile(p) - _ndtri(p)) < 5e-13 * max(1.0, abs(exact))


def test_upper_quantile_reference_values():
    assert upper_quantile(0.05) == pytest.approx(1.6448536269514722, abs=1e-12)
    assert upper_quantile(0.1) == pytest.approx(1.2815515655446004, abs=1e-12)
    assert upper_quantile(0.025) == pytest.approx(1.959963984540054, abs=1e-12)
    assert _isf(0.05) == pytest.approx(1.6448536269514722, abs=1e-12)


def test_check_level_rejects_degenerate():
    with pytest.raises(ValueError):
        check_level(0.0)
    with pytest.raises(ValueError):
        check_level(1.0)
    with pytest.raises(ValueError):
        check_level(float("nan"))
    assert check_level(0.1) == 0.1
