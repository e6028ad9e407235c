"""Airy function Ai and its derivative.

Small and moderate arguments use the Maclaurin series summed in extended
precision (mpmath), which sidesteps the cancellation between the two series
for positive x.  Large positive arguments use the exponentially small
asymptotic expansion in plain floats.
"""
from __future__ import annotations

import math

import mpmath
import numpy as np

# Above this point the asymptotic series is accurate to ~1e-15 relative.
ASYMPTOTIC_FROM = 9.0

_AI0 = 1.0 / (3.0 ** (2.0 / 3.0) * math.gamma(2.0 / 3.0))
_AIP0 = -1.0 / (3.0 ** (1.0 / 3.0) * math.gamma(1.0 / 3.0))


def _series(x: float, dps: int):
    with mpmath.workdps(dps):
        x = mpmath.mpf(x)
        ai0 = 1 / (mpmath.power(3, mpmath.mpf(2) / 3) * mpmath.gamma(mpmath.mpf(2) / 3))
        aip0 = -1 / (mpmath.power(3, mpmath.mpf(1) / 3) * mpmath.gamma(mpmath.mpf(1) / 3))
        x3 = x**3
        # f = sum x^(3k) prod (3j-2)/(3k)!, g = sum x^(3k+1) prod (3j-1)/(3k+1)!
        f = fp = mpmath.mpf(0)
        g = gp = mpmath.mpf(0)
        tf = mpmath.mpf(1)
        tg = x
        k = 0
        eps = mpmath.mpf(10) ** (-dps)
        while True:
            f += tf
            g += tg
            # derivatives termwise: d/dx x^(3k) = 3k x^(3k-1)
            if k > 0:
                fp += tf * 3 * k / x if x != 0 else 0
            gp += tg * (3 * k + 1) / x if x != 0 else (1 if k == 0 else 0)
            k += 1
            tf = tf * x3 / ((3 * k - 1) * (3 * k))
            tg = tg * x3 / ((3 * k) * (3 * k + 1))
            if abs(tf) + abs(tg) < eps * (abs(f) + abs(g)) and k > 2:
                break
        ai = ai0 * f + aip0 * g
        aip = ai0 * fp + aip0 * gp
        return float(ai), float(aip)


def _asymptotic(x: float) -> tuple[float, float]:
    zeta = 2.0 / 3.0 * x**1.5
    # u_k and v_k coefficients of the standard expansion
    u, v = [1.0], [1.0]
    for k in range(1, 25):
        uk = u[-1] * (6 * k - 5) * (6 * k - 3) * (6 * k - 1) / ((2 * k - 1) * 216 * k)
        u.append(uk)
        v.append(-(6 * k + 1) / (6 * k - 1) * uk)
    sa = sb = 0.0
    prev = math.inf
    for k in range(len(u)):
        term = u[k] / zeta**k
        if term > prev:
            break
        sa += (-1) ** k * term
        sb += (-1) ** k * v[k] / zeta**k
        prev = term
    e = math.exp(-zeta) / (2.0 * math.sqrt(math.pi))
    return e / x**0.25 * sa, -e * x**0.25 * sb


def airy_ai(x: float) -> tuple[float, float]:
    """Return (Ai(x), Ai'(x)) for a real scalar x."""
    x = float(x)
    if x >= ASYMPTOTIC_FROM:
        return _asymptotic(x)
    if x == 0.0:
        return _AI0, _AIP0
    # the series terms peak near exp(|zeta|); carry enough digits to absorb it
    dps = 30 + int(abs(x) ** 1.5)
    return _series(x, dps)


def airy_ai_array(xs) -> tuple[np.ndarray, np.ndarray]:
    pairs = [airy_ai(x) for x in np.ravel(xs)]
    ai = np.array([p[0] for p in pairs]).reshape(np.shape(xs))
    aip = np.array([p[1] for p in pairs]).reshape(np.shape(xs))
    return ai, aip


def airy_tail_integrals(x: float) -> tuple[float, float, float]:
    """Integrals of the Airy tail beyond ``x``.

    Returns (int_x^inf Ai, int_x^inf Ai^2, int_x^inf (t - x) Ai(t)^2 dt).  The
    last two follow in closed form from Ai'' = t Ai; the first is
    1/3 - int_0^x Ai, with the primitive summed from the series.
    """
    ai, aip = airy_ai(x)
    sq = aip * aip - x * ai * ai
    weighted = (2.0 * x * x * ai * ai - 2.0 * x * aip * aip - ai * aip) / 3.0
    return _ai_tail(x), sq, weighted


def _ai_tail(x: float) -> float:
    dps = 30 + int(abs(x) ** 1.5)
    with mpmath.workdps(dps):
        xm = mpmath.mpf(x)
        ai0 = 1 / (mpmath.power(3, mpmath.mpf(2) / 3) * mpmath.gamma(mpmath.mpf(2) / 3))
        aip0 = -1 / (mpmath.power(3, mpmath.mpf(1) / 3) * mpmath.gamma(mpmath.mpf(1) / 3))
        x3 = xm**3
        tf, tg = mpmath.mpf(1), xm
        F = G = mpmath.mpf(0)
        k = 0
        eps = mpmath.mpf(10) ** (-dps)
        while True:
            F += tf * xm / (3 * k + 1)
            G += tg * xm / (3 * k + 2)
            k += 1
            tf = tf * x3 / ((3 * k - 1) * (3 * k))
            tg = tg * x3 / ((3 * k) * (3 * k + 1))
            if abs(tf) + abs(tg) < eps * (abs(F) + abs(G) + 1) and k > 2:
                break
        return float(mpmath.mpf(1) / 3 - (ai0 * F + aip0 * G))
