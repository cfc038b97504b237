"""Numeric kernels for the per-element phase update.

The phase projection runs once per reflecting element per optimizer
iteration, across every grid point, seed, and sweep value, so it is the
one genuinely hot pure-numpy loop in the package.  Two interchangeable
implementations live here:

* a numba ``@njit`` scalar loop (default), and
* a vectorised plain-numpy fallback,

selected at import time by the ``WPMEC_NUMBA`` environment variable
("0" disables numba).  Both evaluate the same formulas; tests pin them
against each other and ``benchmarks/bench_kernels.py`` compares their
throughput.

Algorithm per element: pick the trust-region branch by comparing the
mean amplitude towards each edge against the target magnitude, fit a
parabola through the region's endpoint/midpoint/anchor samples of

    f(theta) = 2 beta(theta) |v| cos(psi - theta) - beta(theta)^2

and return whichever of {clamped vertex, three samples} scores best.
Keeping the sampled candidates matters: when the three points trace a
convex arc the vertex formula lands on the parabola's *minimum*, and
discarding it is what makes the step safe.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DENOM_EPS = 1e-12


def _amp_np(theta, beta_min, phi, alpha):
    return (1.0 - beta_min) * ((np.sin(theta - phi) + 1.0) * 0.5) ** alpha + beta_min


def _fval_np(theta, psi, mag, beta_min, phi, alpha):
    b = _amp_np(theta, beta_min, phi, alpha)
    return 2.0 * b * mag * np.cos(psi - theta) - b * b


def _fit_batch_np(v_re, v_im, beta_min, phi, alpha, delta):
    psi = np.arctan2(v_im, v_re)
    if beta_min == 1.0:
        return psi.copy()
    mag = np.hypot(v_re, v_im)
    s_lam = np.where(psi >= 0.0, 1.0, -1.0)

    b0 = _amp_np(psi, beta_min, phi, alpha)
    b_plus = _amp_np(psi + delta, beta_min, phi, alpha)
    b_minus = _amp_np(psi - delta, beta_min, phi, alpha)
    avg_plus = 0.5 * (b0 + b_plus)
    avg_minus = 0.5 * (b0 + b_minus)
    go_plus = avg_plus < mag
    go_minus = ~go_plus & (avg_minus > mag)
    tie_plus = np.abs(avg_plus - mag) <= np.abs(avg_minus - mag)
    sign = np.where(go_plus, s_lam, np.where(go_minus, -s_lam, np.where(tie_plus, s_lam, -s_lam)))

    far = psi + sign * delta
    mid = 0.5 * (psi + far)
    f1 = _fval_np(psi, psi, mag, beta_min, phi, alpha)
    f2 = _fval_np(mid, psi, mag, beta_min, phi, alpha)
    f3 = _fval_np(far, psi, mag, beta_min, phi, alpha)

    den = f1 - 2.0 * f2 + f3
    safe_den = np.where(np.abs(den) < _DENOM_EPS, 1.0, 4.0 * den)
    vertex = (psi * (f1 - 4.0 * f2 + 3.0 * f3) + far * (3.0 * f1 - 4.0 * f2 + f3)) / safe_den
    lo = np.minimum(psi, far)
    hi = np.maximum(psi, far)
    vertex = np.clip(vertex, lo, hi)
    fv = _fval_np(vertex, psi, mag, beta_min, phi, alpha)
    fv = np.where(np.abs(den) < _DENOM_EPS, -np.inf, fv)

    # candidate order mirrors the numba loop's tie-breaking: a later
    # candidate only wins with a strictly better score
    cands = np.stack([psi, mid, far, vertex])
    scores = np.stack([f1, f2, f3, fv])
    keep = np.zeros(psi.size, dtype=np.int64)
    best = scores[0].copy()
    for idx in range(1, 4):
        better = scores[idx] > best
        keep = np.where(better, idx, keep)
        best = np.where(better, scores[idx], best)
    return cands[keep, np.arange(psi.size)]


def _build_numba():
    from numba import njit

    @njit(cache=True)
    def _amp(theta, beta_min, phi, alpha):
        return (1.0 - beta_min) * ((math.sin(theta - phi) + 1.0) * 0.5) ** alpha + beta_min

    @njit(cache=True)
    def _fval(theta, psi, mag, beta_min, phi, alpha):
        b = _amp(theta, beta_min, phi, alpha)
        return 2.0 * b * mag * math.cos(psi - theta) - b * b

    @njit(cache=True)
    def _amp_batch(theta, beta_min, phi, alpha):
        out = np.empty(theta.size)
        for n in range(theta.size):
            out[n] = _amp(theta[n], beta_min, phi, alpha)
        return out

    @njit(cache=True)
    def _fit_batch(v_re, v_im, beta_min, phi, alpha, delta):
        out = np.empty(v_re.size)
        for n in range(v_re.size):
            psi = math.atan2(v_im[n], v_re[n])
            if beta_min == 1.0:
                out[n] = psi
                continue
            mag = math.hypot(v_re[n], v_im[n])
            s_lam = 1.0 if psi >= 0.0 else -1.0
            b0 = _amp(psi, beta_min, phi, alpha)
            avg_plus = 0.5 * (b0 + _amp(psi + delta, beta_min, phi, alpha))
            avg_minus = 0.5 * (b0 + _amp(psi - delta, beta_min, phi, alpha))
            if avg_plus < mag:
                sign = s_lam
            elif avg_minus > mag:
                sign = -s_lam
            elif abs(avg_plus - mag) <= abs(avg_minus - mag):
                sign = s_lam
            else:
                sign = -s_lam
            far = psi + sign * delta
            mid = 0.5 * (psi + far)
            f1 = _fval(psi, psi, mag, beta_min, phi, alpha)
            f2 = _fval(mid, psi, mag, beta_min, phi, alpha)
            f3 = _fval(far, psi, mag, beta_min, phi, alpha)

            best = psi
            fbest = f1
            if f2 > fbest:
                best, fbest = mid, f2
            if f3 > fbest:
                best, fbest = far, f3

            den = f1 - 2.0 * f2 + f3
            if abs(den) >= _DENOM_EPS:
                vertex = (psi * (f1 - 4.0 * f2 + 3.0 * f3)
                          + far * (3.0 * f1 - 4.0 * f2 + f3)) / (4.0 * den)
                lo = psi if psi < far else far
                hi = far if far > psi else psi
                if vertex < lo:
                    vertex = lo
                elif vertex > hi:
                    vertex = hi
                fv = _fval(vertex, psi, mag, beta_min, phi, alpha)
                if fv > fbest:
                    best = vertex
            out[n] = best
        return out

    return _amp_batch, _fit_batch


def _amp_batch_np(theta, beta_min, phi, alpha):
    return _amp_np(theta, beta_min, phi, alpha)


_want_numba = os.environ.get("WPMEC_NUMBA", "1") != "0"
if _want_numba:
    try:
        amp_batch, fit_batch = _build_numba()
        BACKEND = "numba"
    except ImportError:
        amp_batch, fit_batch = _amp_batch_np, _fit_batch_np
        BACKEND = "numpy"
else:
    amp_batch, fit_batch = _amp_batch_np, _fit_batch_np
    BACKEND = "numpy"

numpy_amp_batch = _amp_batch_np
numpy_fit_batch = _fit_batch_np


def backend_name() -> str:
    return BACKEND
