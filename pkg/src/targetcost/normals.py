"""Standard-normal primitives and the conditional-probability level map.

The cumulative distribution goes through the complementary error function
(rational/erf style, absolute error well below 1e-12) and is clamped to the
+-8 sigma tail values so that interior states never produce an exact 0 or 1.
Downstream code takes logarithms and quantiles of these levels, so the clamp
matters.

The quantile uses Acklam's rational approximation polished by two Newton
steps on the cdf, which meets the 1e-10 inverse contract with a wide margin.

All functions accept floats or numpy arrays and return the matching kind.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

_SQRT2 = math.sqrt(2.0)
_SQRT_2PI = math.sqrt(2.0 * math.pi)
_INV_SQRT_2PI = 1.0 / _SQRT_2PI

# Values returned beyond +-8 sigma; both are strictly inside (0, 1).
CDF_CLAMP_Z = 8.0
CDF_MIN = 0.5 * math.erfc(CDF_CLAMP_Z / _SQRT2)
CDF_MAX = 0.5 * math.erfc(-CDF_CLAMP_Z / _SQRT2)

# Acklam's inverse-normal coefficients (central and tail branches).
_A = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
      1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
      6.680131188771972e+01, -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
      -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
      3.754408661907416e+00)
_P_LOW = 0.02425


def _as_array(x, name):
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise DomainError(f"{name} must be finite")
    return arr


def _match(x, out):
    return float(out) if np.ndim(x) == 0 else out


def std_normal_pdf(z):
    """Standard normal density."""
    arr = np.asarray(z, dtype=float)
    return _match(z, np.exp(-0.5 * arr * arr) * _INV_SQRT_2PI)


def std_normal_cdf(z):
    """P(Z <= z) for a standard normal Z.

    Clamped to the +-8 sigma tail values outside [-8, 8] so the result is
    always strictly inside (0, 1).
    """
    arr = _as_array(z, "z")
    out = 0.5 * special.erfc(-arr / _SQRT2)
    out = np.clip(out, CDF_MIN, CDF_MAX)
    return _match(z, out)


def _acklam(q):
    """Rational initial guess for the normal quantile (vectorized)."""
    q = np.asarray(q, dtype=float)
    x = np.empty_like(q)

    lo = q < _P_LOW
    hi = q > 1.0 - _P_LOW
    mid = ~(lo | hi)

    if np.any(mid):
        u = q[mid] - 0.5
        r = u * u
        num = ((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r + _A[4]) * r + _A[5]
        den = ((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r + _B[4]) * r + 1.0
        x[mid] = num * u / den
    if np.any(lo):
        u = np.sqrt(-2.0 * np.log(q[lo]))
        num = ((((_C[0] * u + _C[1]) * u + _C[2]) * u + _C[3]) * u + _C[4]) * u + _C[5]
        den = (((_D[0] * u + _D[1]) * u + _D[2]) * u + _D[3]) * u + 1.0
        x[lo] = num / den
    if np.any(hi):
        u = np.sqrt(-2.0 * np.log(1.0 - q[hi]))
        num = ((((_C[0] * u + _C[1]) * u + _C[2]) * u + _C[3]) * u + _C[4]) * u + _C[5]
        den = (((_D[0] * u + _D[1]) * u + _D[2]) * u + _D[3]) * u + 1.0
        x[hi] = -num / den
    return x


def _quantile_core(arr):
    x = _acklam(arr)
    # Newton refinement where the cdf is computed at full accuracy; beyond
    # 8 sigma the clamped cdf is flat and the rational guess already has
    # ~1e-9 relative accuracy, which is all the tail needs.
    for _ in range(2):
        inside = np.abs(x) < CDF_CLAMP_Z
        if not np.any(inside):
            break
        xi = x[inside]
        err = 0.5 * special.erfc(-xi / _SQRT2) - arr[inside]
        x[inside] = xi - err / (np.exp(-0.5 * xi * xi) * _INV_SQRT_2PI)
    return x


def std_normal_quantile(q):
    """Inverse of std_normal_cdf on (0, 1), exclusive.

    Raises DomainError outside the open interval.
    """
    arr = _as_array(q, "q")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("q must lie strictly inside (0, 1)")
    return _match(q, _quantile_core(arr))


def h(y):
    """Diffusion coefficient exp(-quantile(y)^2) / (4 pi) on (0, 1).

    Strictly positive, symmetric about 1/2 with its maximum there, and
    decaying faster than any polynomial at the endpoints.
    """
    arr = _as_array(y, "y")
    if np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("y must lie strictly inside (0, 1)")
    z = _quantile_core(arr)
    out = np.exp(-z * z) / (4.0 * math.pi)
    # Deep tails underflow exp(-z^2); floor keeps the positivity contract.
    out = np.maximum(out, 5e-324)
    return _match(y, out)


def martingale_level(t, w, T, c):
    """Conditional probability that the terminal Brownian value ends below c.

    Equals cdf((c - w) / sqrt(T - t)) for 0 <= t < T; the terminal value at
    t = T is an indicator and is set by the caller, not here.
    """
    if not (0.0 <= t < T):
        raise DomainError("need 0 <= t < T; the terminal level is an indicator")
    arr = _as_array(w, "w")
    out = std_normal_cdf((c - arr) / math.sqrt(T - t))
    return _match(w, out)


@dataclass(frozen=True)
class Params:
    """One problem instance: cost exponent, horizon, initial state, threshold.

    p must exceed 1 (the exponents p/(p-1) and 1/(p-1) appear throughout),
    the horizon must be positive and the state must start in [0, 1].
    """

    p: float
    T: float
    x: float
    c: float

    def __post_init__(self):
        for name in ("p", "T", "x", "c"):
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and math.isfinite(v)):
                raise DomainError(f"{name} must be a finite number")
        if self.p <= 1.0:
            raise DomainError("p must be > 1")
        if self.T <= 0.0:
            raise DomainError("T must be > 0")
        if not (0.0 <= self.x <= 1.0):
            raise DomainError("x must lie in [0, 1]")
