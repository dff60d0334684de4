"""Independent numerical oracles used by the tests.

These stay deliberately separate from the package implementations: the
normal cdf oracle integrates the density with composite Gauss-Legendre
panels, and the scalar minimization oracle scans a dense grid.
"""

import math

import numpy as np

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(48)
_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)


def cdf_by_quadrature(z, panels_per_unit=4):
    """Standard normal cdf via quadrature of the density from 0 to z."""
    if z == 0.0:
        return 0.5
    a, b = (0.0, z) if z > 0 else (z, 0.0)
    n_panels = max(2, int(math.ceil((b - a) * panels_per_unit)))
    edges = np.linspace(a, b, n_panels + 1)
    total = 0.0
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
        t = mid + half * _GL_NODES
        total += half * float(np.sum(_GL_WEIGHTS * np.exp(-0.5 * t * t)))
    total *= _INV_SQRT_2PI
    return 0.5 + total if z > 0 else 0.5 - total


def scan_min_split(kappa1, kappa2, p, n_grid=1_000_001):
    """Brute-force minimizer of a^p k1 + (1-a)^p k2 over a dense grid."""
    a = np.linspace(0.0, 1.0, n_grid)
    costs = a ** p * kappa1 + (1.0 - a) ** p * kappa2
    i = int(np.argmin(costs))
    return float(a[i]), float(costs[i])
