"""Compiled scalar kernels for the cubic roots and the multiplier search.

The multiplier search evaluates every channel's cubic root ~50 times per
bisection, twice per SCA iteration; numpy call overhead dominated the run
time, so these loops are compiled. Inputs are assumed validated.
"""

import math

import numpy as np
from numba import njit

# status codes returned by golden_search
OK = 0
NOT_MONOTONE = 1
STEP_LIMIT = 2


@njit(cache=True)
def cubic_root(a, c, d):
    """Positive root of a x^3 - c x - d, a > 0, c, d >= 0, c + d > 0."""
    p = c / a
    h = 0.5 * d / a
    p3 = p / 3.0
    disc = h * h - p3 * p3 * p3
    if disc >= 0.0:
        u = np.cbrt(h + math.sqrt(disc))
        x = u + p3 / u
    else:
        ratio = h / (p3 * math.sqrt(p3))
        if ratio > 1.0:
            ratio = 1.0
        x = 2.0 * math.sqrt(p3) * math.cos(math.acos(ratio) / 3.0)
    q = 2.0 * h
    for _ in range(2):
        dfx = 3.0 * x * x - p
        if dfx > 0.0:
            x -= ((x * x - p) * x - q) / dfx
    return x


@njit(cache=True)
def cubic_roots(a, c, d, out):
    for i in range(a.size):
        out[i] = cubic_root(a[i], c[i], d[i])


@njit(cache=True)
def _total(lam, lin, const, w, x):
    s = 0.0
    for i in range(lin.size):
        x[i] = cubic_root(lam * w[i], lin[i], const[i])
        s += w[i] * x[i]
    return s


@njit(cache=True)
def golden_search(lin, const, w, target, tol, max_steps, x_out):
    """Doubling-then-bisection on the multiplier; see sca._golden_search.

    Writes the root vector to ``x_out`` and returns (lam, implied_total, status).
    """
    m = lin.size
    x_lo = np.empty(m)
    x_hi = np.empty(m)
    x_mid = np.empty(m)
    lam_lo = 0.0
    for i in range(m):
        v = (lin[i] / target**2 + const[i] / target**3) / w[i]
        if v > lam_lo:
            lam_lo = v
    s_lo = _total(lam_lo, lin, const, w, x_lo)
    while s_lo < target:
        lam_lo *= 0.5
        s_lo = _total(lam_lo, lin, const, w, x_lo)
    lam_hi = 2.0 * lam_lo
    s_hi = _total(lam_hi, lin, const, w, x_hi)
    while s_hi > target:
        lam_lo = lam_hi
        s_lo = s_hi
        x_lo[:] = x_hi
        lam_hi *= 2.0
        s_hi = _total(lam_hi, lin, const, w, x_hi)

    if abs(s_lo - target) < abs(s_hi - target):
        best_lam, best_s = lam_lo, s_lo
        x_out[:] = x_lo
    else:
        best_lam, best_s = lam_hi, s_hi
        x_out[:] = x_hi
    collapsed = False
    for _ in range(max_steps):
        if abs(best_s - target) <= tol * target:
            break
        mid = 0.5 * (lam_lo + lam_hi)
        if mid <= lam_lo or mid >= lam_hi:
            collapsed = True
            break
        s_mid = _total(mid, lin, const, w, x_mid)
        if not (s_lo >= s_mid and s_mid >= s_hi):
            return mid, s_mid, NOT_MONOTONE
        if s_mid > target:
            lam_lo = mid
            s_lo = s_mid
        else:
            lam_hi = mid
            s_hi = s_mid
        if abs(s_mid - target) < abs(best_s - target):
            best_lam, best_s = mid, s_mid
            x_out[:] = x_mid
    # a collapsed bracket means the multiplier is resolved to machine precision
    if collapsed or abs(best_s - target) <= tol * target:
        return best_lam, best_s, OK
    return best_lam, best_s, STEP_LIMIT
