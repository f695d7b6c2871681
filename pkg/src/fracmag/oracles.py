"""Reference values computed independently of the assembled operators.

Everything here works from closed forms or adaptive quadrature of the
singular integral and never touches the pair-measure machinery.
"""

from __future__ import annotations

from math import gamma, pi

import numpy as np
from scipy import integrate
from scipy.special import hyp1f1

from .nonlocal_ops import frac_constant


def gaussian_symbol(x, s):
    """(-Delta)^s exp(-|x|^2) in 1D via the Fourier multiplier |xi|^{2s}.

    Computed as (1/pi) int_0^inf xi^{2s} sqrt(pi) exp(-xi^2/4) cos(x xi) dxi.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty_like(x)
    for i, xi in enumerate(x):
        val, _ = integrate.quad(
            lambda t: t ** (2 * s) * np.sqrt(pi) * np.exp(-(t**2) / 4),
            0,
            60,
            weight="cos",
            wvar=abs(xi),
            limit=400,
            epsabs=1e-13,
        )
        out[i] = val / pi
    return out


def gaussian_closed_form(x, s, n=1):
    """(-Delta)^s exp(-|x|^2) = 4^s Gamma(n/2+s)/Gamma(n/2) 1F1(n/2+s; n/2; -|x|^2)."""
    r2 = np.sum(np.atleast_2d(np.asarray(x, dtype=float)).reshape(-1, n) ** 2, axis=1)
    return 4**s * gamma(n / 2 + s) / gamma(n / 2) * hyp1f1(n / 2 + s, n / 2, -r2)


def getoor_constant(n, s):
    """(-Delta)^s (1 - |x|^2)_+^s on the unit ball."""
    return 4**s * gamma(1 + s) * gamma(n / 2 + s) / gamma(n / 2)


def singular_integral_1d(func, x, s, breakpoints=(), upper=np.inf):
    """C_{1,s} int_0^inf (2 u(x) - u(x+r) - u(x-r)) r^{-1-2s} dr by adaptive quadrature.

    ``breakpoints`` are points of reduced smoothness of u (absolute positions).
    """
    C = frac_constant(1, s).value
    ux = func(x)

    def integrand(r):
        return (2 * ux - func(x + r) - func(x - r)) * r ** (-1 - 2 * s)

    cuts = sorted({abs(b - x) for b in breakpoints if abs(b - x) > 0})
    edges = [0.0] + [c for c in cuts if c < 50] + [50.0]
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        # cancellation near r = 0 limits attainable accuracy to about 1e-12; full_output
        # returns the quadrature message instead of warning
        val = integrate.quad(integrand, lo, hi, limit=500, epsabs=1e-12, epsrel=1e-11, full_output=1)[0]
        total += val
    if upper == np.inf:
        tail, _ = integrate.quad(integrand, 50.0, np.inf, limit=200)
        total += tail
    return C * total


def getoor_profile(x, s=0.5):
    """(1 - |x|^2)_+^s in 1D."""
    return np.clip(1 - np.asarray(x, dtype=float) ** 2, 0, None) ** s
