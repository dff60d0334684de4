"""Independent ground truth by dynamic programming on a scaled random walk.

The Brownian motion is replaced by a recombining lattice with increments
+-sqrt(dt) at probability 1/2.  Values are stored normalized: the state
enters only through the (1-x)^p prefactor, so one sweep over walk nodes
covers every initial state.  Each backward step solves a one-dimensional
Bellman problem in closed form: split the remaining gap between "move now"
at cost a^p dt^{1-p} and "wait" at expected continuation (1-a)^p E[next].

Node values of infinity encode "the constraint is certain and the gap must
be closed immediately"; expectation and minimization treat them exactly
(one infinite child forces the full jump, whose cost is finite).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ResourceError
from .normals import std_normal_quantile

INFEASIBLE = np.inf  # sentinel for nodes where the constraint already binds


def inner_min(kappa1, kappa2, p):
    """Minimize a^p * kappa1 + (1-a)^p * kappa2 over a in [0, 1].

    Returns (a_star, cost).  Closed form: a* = rho / (1 + rho) with
    rho = (kappa2/kappa1)^{1/(p-1)}; an infinite kappa2 forces a* = 1.
    """
    if not (kappa1 > 0.0):
        raise DomainError("kappa1 must be > 0")
    if kappa2 < 0.0:
        raise DomainError("kappa2 must be >= 0 or infinity")
    if p <= 1.0:
        raise DomainError("p must be > 1")
    if math.isinf(kappa2):
        return 1.0, kappa1
    if kappa2 == 0.0:
        return 0.0, 0.0
    rho = (kappa2 / kappa1) ** (1.0 / (p - 1.0))
    a = rho / (1.0 + rho)
    return a, a ** p * kappa1 + (1.0 - a) ** p * kappa2


def _bellman_sweep(psi_next, kappa1, p):
    """One backward level: expectation over the two children, then the
    closed-form inner minimization, vectorized over nodes."""
    expect = 0.5 * (psi_next[:-1] + psi_next[1:])
    finite = np.isfinite(expect)
    safe = np.where(finite, expect, 1.0)
    rho = (safe / kappa1) ** (1.0 / (p - 1.0))
    a = rho / (1.0 + rho)
    cost = a ** p * kappa1 + (1.0 - a) ** p * safe
    return np.where(finite, cost, kappa1)


def _terminal_layer(n, dt, c, tie):
    w_end = (2.0 * np.arange(n + 1) - n) * math.sqrt(dt)
    binding = w_end >= c if tie == "geq" else w_end > c
    return np.where(binding, INFEASIBLE, 0.0)


def _check_args(n, T, p, tie):
    if not (isinstance(n, (int, np.integer)) and n >= 2):
        raise DomainError("n must be an integer >= 2")
    if not (T > 0.0):
        raise DomainError("T must be > 0")
    if not (p > 1.0):
        raise DomainError("p must be > 1")
    if tie not in ("geq", "gt"):
        raise DomainError("tie must be 'geq' or 'gt'")
    dt = T / n
    try:
        kappa1 = dt ** (1.0 - p)
    except OverflowError:
        kappa1 = math.inf
    if not math.isfinite(kappa1):
        raise ResourceError(f"dt^(1-p) overflows for n={n}, T={T}, p={p}")
    if n > 200_000:
        raise ResourceError(f"lattice with n={n} steps is beyond the supported size")
    return dt, kappa1


def dp_value(n, T, c, p, tie="geq"):
    """Minimal expected cost from state 0 on an n-step lattice.

    Estimates the continuous value at (T, 0, c); callers scale by (1-x)^p
    for other initial states.  `tie` picks the lattice event for a terminal
    walk value exactly at the threshold; the default counts it as binding,
    which upper-biases the cost (the continuous event is null).
    """
    dt, kappa1 = _check_args(n, T, p, tie)
    psi = _terminal_layer(n, dt, c, tie)
    for _ in range(n):
        psi = _bellman_sweep(psi, kappa1, p)
    return float(psi[0])


@dataclass(frozen=True)
class OracleTable:
    """Full normalized value table, one array per time level.

    psi[k][j] is the value at step k in walk position j (j up-moves); the
    unnormalized value is (1-x)^p * psi[k][j].  Kept for diagnostics and
    invariant tests; dp_value itself rolls two levels in O(n) memory.
    """

    n: int
    T: float
    c: float
    p: float
    psi: tuple

    def monotone_in_position(self):
        """Largest violation of 'harder constraint costs more' across nodes."""
        worst = 0.0
        for level in self.psi:
            finite = level[np.isfinite(level)]
            if len(finite) > 1:
                worst = max(worst, float(np.max(-np.diff(finite))))
            # infinite entries sit at the top positions by construction
        return worst


def dp_table(n, T, c, p, tie="geq"):
    """Like dp_value but retaining every level; O(n^2) memory."""
    dt, kappa1 = _check_args(n, T, p, tie)
    if n > 5000:
        raise ResourceError("full table beyond n=5000; use dp_value")
    levels = [_terminal_layer(n, dt, c, tie)]
    for _ in range(n):
        levels.append(_bellman_sweep(levels[-1], kappa1, p))
    levels.reverse()
    return OracleTable(n=n, T=float(T), c=float(c), p=float(p),
                       psi=tuple(levels))


def dp_g_profile(n, p, levels, tie="geq"):
    """Lattice estimates of the kernel: g(y) ~ dp_value(n, 1, quantile(y), p).

    Returns a list of (y, estimate) pairs suitable for overlay against the
    calibrated curve.
    """
    out = []
    for y in levels:
        if not (0.0 < y < 1.0):
            raise DomainError("levels must lie strictly inside (0, 1)")
        out.append((float(y), dp_value(n, 1.0, float(std_normal_quantile(y)), p, tie=tie)))
    return out


def refinement_gap(n, T, c, p, tie="geq"):
    """|dp_value(2n) - dp_value(n)|, the measured discretization scale."""
    return abs(dp_value(2 * n, T, c, p, tie=tie) - dp_value(n, T, c, p, tie=tie))


def save_profile(profile, path):
    """CSV `y,g_dp` for overlay plotting."""
    with open(path, "w", newline="") as fh:
        fh.write("y,g_dp\n")
        for y, val in profile:
            fh.write(f"{y:.17g},{val:.17g}\n")
