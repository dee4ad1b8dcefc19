"""JIT-compiled replication kernel for the Monte Carlo harness.

One replication = one sequential pass over a stream: compute the LORD-CI
level (same Kahan-ordered arithmetic as scheduler.next_level, so levels are
bit-identical given the same gamma table and selection history), decide
selection per scheme, and score the reported interval in both modes
(marginal-at-level and conditional-at-nominal) against the true theta.

The conditional score never builds the interval: theta is covered iff
|x - theta| <= s(theta), with s the closed-form shortest-acceptance-region
half-width. Linear-space survival functions suffice for the cutoff/theta
ranges the simulations produce (tail arguments stay far from underflow).
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

SCHEME_FIXED = 0
SCHEME_SGN_SYM = 1
SCHEME_SGN_MQC = 2
SCHEME_SGN_ONE = 3

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)


@njit(cache=True, nogil=True)
def _sf(x):
    return 0.5 * math.erfc(x / _SQRT2)


@njit(cache=True, nogil=True)
def _cdf(x):
    return 0.5 * math.erfc(-x / _SQRT2)


@njit(cache=True, nogil=True)
def _ndtri_half(p):
    """Inverse normal CDF for p in (0, 0.5]: Acklam's rational approximation
    polished with one Halley step of the erfc-based CDF (which keeps full
    relative accuracy on this side)."""
    a0 = -3.969683028665376e01
    a1 = 2.209460984245205e02
    a2 = -2.759285104469687e02
    a3 = 1.383577518672690e02
    a4 = -3.066479806614716e01
    a5 = 2.506628277459239e00
    b0 = -5.447609879822406e01
    b1 = 1.615858368580409e02
    b2 = -1.556989798598866e02
    b3 = 6.680131188771972e01
    b4 = -1.328068155288572e01
    c0 = -7.784894002430293e-03
    c1 = -3.223964580411365e-01
    c2 = -2.400758277161838e00
    c3 = -2.549732539343734e00
    c4 = 4.374664141464968e00
    c5 = 2.938163982698783e00
    d0 = 7.784695709041462e-03
    d1 = 3.224671290700398e-01
    d2 = 2.445134137142996e00
    d3 = 3.754408661907416e00
    p_low = 0.02425
    if p < p_low:
        q = math.sqrt(-2.0 * math.log(p))
        x = (((((c0 * q + c1) * q + c2) * q + c3) * q + c4) * q + c5) / (
            (((d0 * q + d1) * q + d2) * q + d3) * q + 1.0
        )
    else:
        q = p - 0.5
        r = q * q
        x = (((((a0 * r + a1) * r + a2) * r + a3) * r + a4) * r + a5) * q / (
            ((((b0 * r + b1) * r + b2) * r + b3) * r + b4) * r + 1.0
        )
    # one Halley refinement; x <= 0 so _cdf goes through erfc(|x|/sqrt2)
    e = _cdf(x) - p
    u = e * _SQRT_2PI * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


@njit(cache=True, nogil=True)
def _ndtri(p):
    if p <= 0.0:
        return -math.inf
    if p >= 1.0:
        return math.inf
    if p > 0.5:
        return -_ndtri_half(1.0 - p)
    return _ndtri_half(p)


@njit(cache=True, nogil=True)
def _isf(a):
    return -_ndtri(a)


@njit(cache=True, nogil=True)
def _halfwidth_right(theta, c, level):
    """Closed-form acceptance half-width, conditioning event {X > c}."""
    m = theta - c
    P = _cdf(m)
    s_boundary = _isf(level * P)
    if s_boundary >= m:
        return s_boundary
    return _isf((1.0 - (1.0 - level) * P) / 2.0)


@njit(cache=True, nogil=True)
def _halfwidth_two_sided(theta, c, level):
    """Closed-form acceptance half-width, conditioning event {|X| > c}."""
    th = abs(theta)
    p_right = _cdf(th - c)
    p_left = _cdf(-th - c)
    P = p_right + p_left
    if th > c:
        s1 = _isf((1.0 - (1.0 - level) * P) / 2.0)
        if s1 <= th - c:
            return s1
    target = p_right - (1.0 - level) * P
    if target > 0.0:
        s2 = _isf(target)
        if s2 <= th + c:
            return s2
    return _isf(level * P / 2.0)


@njit(cache=True, nogil=True)
def _mqc_covers(theta, x, level, psi):
    """Membership of theta in the MQC interval at the given level."""
    z_core = _isf((1.0 - psi) * level / 2.0)
    z_sign = max(0.0, _isf(psi * level))
    if abs(x) <= 0.5:  # MQC_PIVOT
        lo = -(0.5 + z_core)
        hi = 0.5 + z_core
    else:
        lo = x - z_core
        hi = x + z_core
    if not (lo < theta < hi):
        return False
    if x > z_sign:
        return theta > 0.0
    if x < -z_sign:
        return theta <= 0.0
    return True


@njit(cache=True, nogil=True)
def replication_kernel(
    x,
    theta,
    alpha,
    w0,
    gamma,
    scheme,
    psi,
    threshold,
    threshold_two_sided,
    collect_levels,
):
    """Run one stream; returns per-selection arrays and a level trace.

    Output tuple:
      nsel, sel_idx, sel_x, sel_theta, sel_level, sel_cutoff,
      v_lord, v_cond, signdet_lord, signdet_cond, sign_lord, levels
    where sel_cutoff is the truncation cutoff implied by the committed rule
    (used by the conditional mode and the inconsistency iterations), the
    v_*/signdet_* arrays are 0/1 flags per selection and sign_lord is the
    directional call implied by the reported marginal interval.
    """
    m = x.shape[0]
    sel_idx = np.empty(m, dtype=np.int64)
    sel_x = np.empty(m, dtype=np.float64)
    sel_theta = np.empty(m, dtype=np.float64)
    sel_level = np.empty(m, dtype=np.float64)
    sel_cutoff = np.empty(m, dtype=np.float64)
    v_lord = np.empty(m, dtype=np.uint8)
    v_cond = np.empty(m, dtype=np.uint8)
    signdet_lord = np.empty(m, dtype=np.uint8)
    signdet_cond = np.empty(m, dtype=np.uint8)
    sign_lord = np.empty(m, dtype=np.int8)
    levels = np.empty(m if collect_levels else 0, dtype=np.float64)

    taus = np.empty(m, dtype=np.int64)
    nsel = 0

    for step in range(m):
        i = step + 1
        # LORD-CI level; Kahan order matches scheduler.next_level exactly
        acc = 0.0
        comp = 0.0
        for k in range(1, nsel):
            j = i - taus[k]
            term = gamma[j] if j > 0 else 0.0
            y = term - comp
            t = acc + y
            comp = (t - acc) - y
            acc = t
        first = 0.0
        if nsel > 0:
            j = i - taus[0]
            if j > 0:
                first = gamma[j]
        gi = gamma[i] if i < gamma.shape[0] else 0.0
        level = gi * w0 + (alpha - w0) * first + alpha * acc
        if collect_levels:
            levels[step] = level

        xv = x[step]
        tv = theta[step]
        selected = False
        cutoff = 0.0
        if scheme == SCHEME_FIXED:
            if threshold_two_sided:
                selected = abs(xv) > threshold
            else:
                selected = xv > threshold
            cutoff = threshold
        elif scheme == SCHEME_SGN_SYM:
            cutoff = _isf(level / 2.0)
            selected = xv >= cutoff or xv <= -cutoff
        elif scheme == SCHEME_SGN_MQC:
            cutoff = _isf(psi * level)
            selected = xv > cutoff or xv < -cutoff
        else:  # SCHEME_SGN_ONE
            cutoff = _isf(level)
            selected = xv > cutoff or xv < -cutoff

        if selected:
            taus[nsel] = i
            k = nsel
            sel_idx[k] = i
            sel_x[k] = xv
            sel_theta[k] = tv
            sel_level[k] = level
            sel_cutoff[k] = cutoff

            # reported marginal interval at the committed level
            if scheme == SCHEME_SGN_MQC:
                covered = _mqc_covers(tv, xv, level, psi)
                sd = True
                sgn = 1 if xv > 0.0 else -1
            elif scheme == SCHEME_SGN_ONE:
                z1 = cutoff
                if xv > z1:
                    covered = 0.0 < tv < xv + z1
                    sd = True
                    sgn = 1
                else:
                    covered = xv - z1 < tv <= 0.0
                    sd = True
                    sgn = -1
            else:
                z2 = _isf(level / 2.0)
                covered = abs(xv - tv) < z2
                sd = abs(xv) >= z2
                if sd:
                    sgn = 1 if xv > 0.0 else -1
                else:
                    sgn = 0
            v_lord[k] = 0 if covered else 1
            signdet_lord[k] = 1 if sd else 0
            sign_lord[k] = sgn

            # conditional-at-nominal score
            if scheme == SCHEME_FIXED and not threshold_two_sided:
                s_theta = _halfwidth_right(tv, cutoff, alpha)
                s_zero = _halfwidth_right(0.0, cutoff, alpha)
            else:
                s_theta = _halfwidth_two_sided(tv, cutoff, alpha)
                s_zero = _halfwidth_two_sided(0.0, cutoff, alpha)
            v_cond[k] = 0 if abs(xv - tv) <= s_theta else 1
            signdet_cond[k] = 1 if abs(xv) > s_zero else 0

            nsel += 1

    return (
        nsel,
        sel_idx[:nsel],
        sel_x[:nsel],
        sel_theta[:nsel],
        sel_level[:nsel],
        sel_cutoff[:nsel],
        v_lord[:nsel],
        v_cond[:nsel],
        signdet_lord[:nsel],
        signdet_cond[:nsel],
        sign_lord[:nsel],
        levels,
    )


@njit(cache=True, nogil=True)
def levels_for_history(history, alpha, w0, gamma):
    """Replay Protocol-1 levels for a fixed 0/1 selection history."""
    m = history.shape[0]
    out = np.empty(m, dtype=np.float64)
    taus = np.empty(m, dtype=np.int64)
    nsel = 0
    for step in range(m):
        i = step + 1
        acc = 0.0
        comp = 0.0
        for k in range(1, nsel):
            j = i - taus[k]
            term = gamma[j] if j > 0 else 0.0
            y = term - comp
            t = acc + y
            comp = (t - acc) - y
            acc = t
        first = 0.0
        if nsel > 0:
            j = i - taus[0]
            if j > 0:
                first = gamma[j]
        gi = gamma[i] if i < gamma.shape[0] else 0.0
        out[step] = gi * w0 + (alpha - w0) * first + alpha * acc
        if history[step]:
            taus[nsel] = i
            nsel += 1
    return out
