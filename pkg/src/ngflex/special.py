"""Log-scale Bessel K and a real dilogarithm.

Shared numeric kernels. The Bessel path matters for density evaluation far
in the tails (where the unscaled function underflows) and for gamma-mixture
densities whose order grows like 1/eta; the dilogarithm backs the closed
form of the exponential-kernel moving-average characteristic function.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln, kve

# Coefficient polynomials u_k(t) of the uniform large-order expansion of
# K_v(v z), ordered by k. Each entry is (denominator, {power: coefficient}).
_OLVER_U = [
    (24.0, {1: 3.0, 3: -5.0}),
    (1152.0, {2: 81.0, 4: -462.0, 6: 385.0}),
    (414720.0, {3: 30375.0, 5: -369603.0, 7: 765765.0, 9: -425425.0}),
    (39813120.0, {4: 4465125.0, 6: -94121676.0, 8: 349922430.0,
                  10: -446185740.0, 12: 185910725.0}),
    (6688604160.0, {5: 1519035525.0, 7: -49286948607.0, 9: 284499769554.0,
                    11: -614135872350.0, 13: 566098157625.0,
                    15: -188699385875.0}),
]

_ORDER_SWITCH = 50.0


def log_kv(v: float, x) -> np.ndarray | float:
    """Logarithm of the modified Bessel function of the second kind.

    For orders up to 50 this wraps the exponentially scaled library
    routine, so arguments far beyond the overflow point of K itself are
    fine. Above order 50 the scaled routine degrades, and the uniform
    large-order asymptotic expansion (five correction terms) takes over;
    its first omitted term is below 1e-10 relative for all admissible
    arguments there.

    Parameters
    ----------
    v : float
        Order. May be negative; K is even in the order.
    x : array_like
        Strictly positive argument(s).

    Returns
    -------
    float or ndarray
        log K_v(x) evaluated elementwise.
    """
    v = abs(float(v))
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x <= 0.0):
        raise ValueError("log_kv requires x > 0")

    if v <= _ORDER_SWITCH:
        with np.errstate(over="ignore", divide="ignore"):
            out = np.log(kve(v, x)) - x
        # Splice in the small-argument limit where the scaled routine
        # overflows: K_v(x) ~ Gamma(v) 2^(v-1) x^(-v) for v > 0.
        tiny = ~np.isfinite(out)
        if np.any(tiny):
            if v > 0:
                out = np.where(
                    tiny,
                    gammaln(v) + (v - 1.0) * np.log(2.0) - v * np.log(x),
                    out,
                )
            else:
                out = np.where(tiny, np.log(-np.log(x / 2.0) - np.euler_gamma), out)
    else:
        z = x / v
        s = np.sqrt(1.0 + z * z)
        t = 1.0 / s
        eta = s + np.log(z / (1.0 + s))
        series = np.ones_like(x)
        sign = -1.0
        vk = v
        for denom, powers in _OLVER_U:
            uk = sum(c * t**p for p, c in powers.items()) / denom
            series += sign * uk / vk
            sign = -sign
            vk *= v
        out = 0.5 * np.log(np.pi / (2.0 * v)) - v * eta - 0.5 * np.log(s) + np.log(series)

    return float(out[0]) if scalar else out


def _dilog_series(s: float) -> float:
    # Direct power series, used only for |s| <= 0.5 where 60 terms reach
    # full double precision.
    total = 0.0
    term = 1.0
    for k in range(1, 61):
        term *= s
        total += term / (k * k)
    return total


def dilog(x) -> np.ndarray | float:
    """Real dilogarithm Li2(x) on x <= 0.5.

    The domain covers every use in this package (characteristic-function
    closed forms evaluate it at non-positive arguments). Arguments in
    [-1, 0.5] outside the series radius are mapped by the Landen identity
    Li2(x) = -Li2(x/(x-1)) - log(1-x)^2/2, and x < -1 first by inversion.
    """
    x = np.asarray(x, dtype=float)
    scalar = x.ndim == 0
    x = np.atleast_1d(x)
    if np.any(x > 0.5):
        raise ValueError("dilog implemented for x <= 0.5 only")

    out = np.empty_like(x)
    for i, xi in enumerate(x.ravel()):
        if xi < -1.0:
            inv = 1.0 / xi
            base = -np.pi**2 / 6.0 - 0.5 * np.log(-xi) ** 2
            mapped = inv / (inv - 1.0)
            out.flat[i] = base - (-_dilog_series(mapped) - 0.5 * np.log(1.0 - inv) ** 2)
        elif xi < -0.5:
            mapped = xi / (xi - 1.0)
            out.flat[i] = -_dilog_series(mapped) - 0.5 * np.log(1.0 - xi) ** 2
        else:
            out.flat[i] = _dilog_series(xi)
    return float(out[0]) if scalar else out
