"""Shared oracles for the test suite.

The vectorized interval-membership functions here re-derive each rule from
its mathematical definition (they do not call the library's Interval
machinery), so Monte Carlo coverage checks exercise an independent route;
agreement between these oracles and the library objects is itself tested.
"""

from __future__ import annotations

import numpy as np
import pytest
from scipy.special import ndtri
from scipy.stats import norm


def z(q: float) -> float:
    """Upper-q standard normal quantile."""
    return float(-ndtri(q))


# --- vectorized membership oracles (theta covered by I(x, level)?) ---------


def sym_covers(theta, x, level):
    return np.abs(x - theta) < z(level / 2)


def one_sided_covers(theta, x, level):
    za = z(level)
    central = np.abs(x) <= za
    cov_central = np.abs(x - theta) < za
    cov_upper = (0.0 < theta) & (theta < x + za)
    cov_lower = (x - za < theta) & (theta <= 0.0)
    return np.where(central, cov_central, np.where(x > za, cov_upper, cov_lower))


def mqc_covers(theta, x, level, psi=0.7, pivot=0.5):
    z_core = z((1 - psi) * level / 2)
    z_sign = max(0.0, z(psi * level))
    lo = np.where(np.abs(x) <= pivot, -(pivot + z_core), x - z_core)
    hi = np.where(np.abs(x) <= pivot, pivot + z_core, x + z_core)
    in_core = (lo < theta) & (theta < hi)
    sign_ok = np.where(x > z_sign, theta > 0, np.where(x < -z_sign, theta <= 0, True))
    return in_core & sign_ok


RULE_ORACLES = {
    "symmetric": sym_covers,
    "one_sided": one_sided_covers,
    "mqc": mqc_covers,
}


# --- truncated normal samplers (exact inverse-CDF, no rejection) ------------


def sample_right_tail(theta, c, n, rng):
    """X ~ N(theta,1) conditioned on X > c, exact inverse CDF in log space
    (valid even when theta sits hundreds of sigmas below the cutoff)."""
    from scipy.special import log_ndtr, ndtri_exp

    u = rng.random(n)
    log_tail = np.log(u) + log_ndtr(theta - c)
    return theta - ndtri_exp(log_tail)


def sample_two_sided(theta, c, n, rng):
    """X ~ N(theta,1) conditioned on |X| > c."""
    pr = norm.sf(c - theta)
    pl = norm.cdf(-c - theta)
    P = pr + pl
    take_right = rng.random(n) < pr / P
    u = rng.random(n)
    right = theta + norm.isf(u * norm.sf(c - theta))
    left = theta - norm.isf(u * norm.sf(c + theta))
    return np.where(take_right, right, left)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
