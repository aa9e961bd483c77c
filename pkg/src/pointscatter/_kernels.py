"""Compiled kernels for the secular function.

The full sum  sum_j r_j / (n_j - lam)  is evaluated with a one-dimensional
treecode: norms are binned on dyadic levels (bin width h0 * 2**level) and each
bin stores scaled moments  sum r ((n - c) / half)**p  about its center c.
Bins at least two bin widths away from the target use the moment expansion,
the three bins around the target at the finest level are summed directly.
With the separation ratio bounded by 1/3 and ORDER terms the truncation error
is below 3**-ORDER relative to the bin weight.
"""
import math

import numpy as np
from numba import njit

ORDER = 32


@njit(cache=True)
def build_moments(norms, weights, h0, nbins0, nlevels, order):
    offsets = np.zeros(nlevels + 1, dtype=np.int64)
    nb = nbins0
    for lvl in range(nlevels):
        offsets[lvl + 1] = offsets[lvl] + nb
        nb = ((nb - 1) >> 1) + 1
    moments = np.zeros((offsets[nlevels], order))
    for i in range(norms.size):
        b0 = min(np.int64(math.floor(norms[i] / h0)), nbins0 - 1)
        for lvl in range(nlevels):
            b = b0 >> lvl
            h = h0 * (1 << lvl)
            half = 0.5 * h
            u = (norms[i] - (b + 0.5) * h) / half
            row = offsets[lvl] + b
            term = weights[i]
            for p in range(order):
                moments[row, p] += term
                term *= u
    return moments, offsets


@njit(cache=True)
def _far_field(lam, h0, nbins0, nlevels, moments, offsets):
    """Moment-expansion part of sum r/(n-lam) and of sum r/(n-lam)^2."""
    order = moments.shape[1]
    t0 = np.int64(math.floor(lam / h0))
    s = 0.0
    ds = 0.0
    nb = nbins0
    for lvl in range(nlevels):
        t = t0 >> lvl
        h = h0 * (1 << lvl)
        if lvl == nlevels - 1:
            lo, hi = 0, nb - 1
        else:
            parent = t >> 1
            lo, hi = 2 * (parent - 1), 2 * (parent + 1) + 1
        lo = max(lo, 0)
        hi = min(hi, nb - 1)
        for b in range(lo, hi + 1):
            if abs(b - t) < 2:
                continue
            row = offsets[lvl] + b
            inv = 1.0 / ((b + 0.5) * h - lam)
            rho = -0.5 * h * inv
            acc = 0.0
            dacc = 0.0
            for p in range(order - 1, -1, -1):
                acc = acc * rho + moments[row, p]
                dacc = dacc * rho + (p + 1) * moments[row, p]
            s += acc * inv
            ds += dacc * inv * inv
        nb = ((nb - 1) >> 1) + 1
    return s, ds


@njit(cache=True)
def _near_field(lam, norms, weights, starts, h0, nbins0):
    t0 = np.int64(math.floor(lam / h0))
    lo = max(t0 - 1, 0)
    hi = min(t0 + 1, nbins0 - 1)
    s = 0.0
    ds = 0.0
    if lo > hi:
        return s, ds
    for i in range(starts[lo], starts[hi + 1]):
        inv = 1.0 / (norms[i] - lam)
        s += weights[i] * inv
        ds += weights[i] * inv * inv
    return s, ds


@njit(cache=True)
def tail(lam, cutoff, dim, quartic_tail):
    """Integral of the Weyl density times 1/(t-lam) - t/(t^2+1) over t > cutoff.

    Returns the value and its derivative in lam (the latter approximate in 3D,
    used only for a Newton polish step).
    """
    if dim == 2:
        val = -math.pi * math.log((cutoff - lam) / math.sqrt(cutoff * cutoff + 1.0))
        return val, math.pi / (cutoff - lam)
    root = math.sqrt(cutoff)
    if lam > 0:
        s = math.sqrt(lam)
        part = s * math.log((root + s) / (root - s))
    elif lam < 0:
        s = math.sqrt(-lam)
        part = -2.0 * s * (0.5 * math.pi - math.atan(root / s))
    else:
        part = 0.0
    return 2.0 * math.pi * (part + quartic_tail), 2.0 * math.pi * 2.0 * root / (cutoff - lam)


@njit(cache=True)
def secular(lam, norms, weights, starts, h0, nbins0, nlevels, moments, offsets,
            const, cutoff, dim, quartic_tail):
    """Full secular function and its derivative at lam."""
    s1, d1 = _near_field(lam, norms, weights, starts, h0, nbins0)
    s2, d2 = _far_field(lam, h0, nbins0, nlevels, moments, offsets)
    tv, td = tail(lam, cutoff, dim, quartic_tail)
    return s1 + s2 - const + tv, d1 + d2 + td


@njit(cache=True)
def windowed(lam, norms, weights, k0, k1):
    """Secular sum restricted to norm indices k0..k1 inclusive, and its derivative."""
    s = 0.0
    ds = 0.0
    for k in range(k0, k1 + 1):
        n = norms[k]
        inv = 1.0 / (n - lam)
        s += weights[k] * (inv - n / (n * n + 1.0))
        ds += weights[k] * inv * inv
    return s, ds


@njit(cache=True, nogil=True)
def bisect_full(lo, hi, target, rel_width, norms, weights, starts, h0, nbins0, nlevels,
                moments, offsets, const, cutoff, dim, quartic_tail):
    """Root of secular(lam) = target[i] strictly inside (lo[i], hi[i]) for every i.

    The function increases from -inf to +inf between the bracketing poles, so
    plain bisection on midpoints never touches a pole.  One Newton step is
    applied at the end and accepted only if it stays inside the final bracket.
    """
    m = lo.size
    roots = np.empty(m)
    resid = np.empty(m)
    for i in range(m):
        a = lo[i]
        b = hi[i]
        mid = 0.5 * (a + b)
        while True:
            mid = 0.5 * (a + b)
            if b - a <= rel_width * max(1.0, abs(mid)) or mid <= a or mid >= b:
                break
            f, _ = secular(mid, norms, weights, starts, h0, nbins0, nlevels, moments,
                           offsets, const, cutoff, dim, quartic_tail)
            if f - target[i] > 0:
                b = mid
            else:
                a = mid
        f, df = secular(mid, norms, weights, starts, h0, nbins0, nlevels, moments,
                        offsets, const, cutoff, dim, quartic_tail)
        root = mid
        if df > 0:
            cand = mid - (f - target[i]) / df
            if a < cand < b:
                g, _ = secular(cand, norms, weights, starts, h0, nbins0, nlevels, moments,
                               offsets, const, cutoff, dim, quartic_tail)
                if abs(g - target[i]) <= abs(f - target[i]):
                    root = cand
                    f = g
        roots[i] = root
        resid[i] = abs(f - target[i])
    return roots, resid


@njit(cache=True, nogil=True)
def bisect_window(lo, hi, target, rel_width, norms, weights, k0, k1):
    """Windowed analogue of :func:`bisect_full`; window i spans norm indices k0[i]..k1[i]."""
    m = lo.size
    roots = np.empty(m)
    resid = np.empty(m)
    for i in range(m):
        a = lo[i]
        b = hi[i]
        mid = 0.5 * (a + b)
        while True:
            mid = 0.5 * (a + b)
            if b - a <= rel_width * max(1.0, abs(mid)) or mid <= a or mid >= b:
                break
            f, _ = windowed(mid, norms, weights, k0[i], k1[i])
            if f - target[i] > 0:
                b = mid
            else:
                a = mid
        f, df = windowed(mid, norms, weights, k0[i], k1[i])
        root = mid
        if df > 0:
            cand = mid - (f - target[i]) / df
            if a < cand < b:
                g, _ = windowed(cand, norms, weights, k0[i], k1[i])
                if abs(g - target[i]) <= abs(f - target[i]):
                    root = cand
                    f = g
        roots[i] = root
        resid[i] = abs(f - target[i])
    return roots, resid
