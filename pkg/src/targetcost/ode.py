"""Boundary-value solve for the value-function kernel g.

g solves  h(y) g''(y) + (p - 1) (g(y) - g(y)^{p/(p-1)}) = 0  on (0, 1) with
g -> 1 at 0 and g -> 0 at 1.  The coefficient h vanishes faster than any
polynomial at the endpoints, so the equation is singular there.  We remove
the singularity exactly with the substitution y = cdf(z): since
h(y) = pdf(z)^2 / 2, the equation becomes

    g_zz = -z g_z - 2 (p - 1) (g - g^{p/(p-1)})

which is smooth on the whole line.  Integration runs in z with an adaptive
embedded Runge-Kutta pair (Dormand-Prince 4(5), absolute tolerance 1e-10,
relative 1e-9) outward from z = 0 (y = 1/2) to the cutoff quantiles of
epsilon and 1 - epsilon, where the boundary conditions are enforced.

Two unknowns fix the solution: the midpoint value g(1/2) and the midpoint
slope.  The shooter nests a bisection on the slope (matching the right
boundary, where the value must vanish) inside a bisection on g(1/2)
(matching the left boundary, where the value must reach 1).

Curves store (y, g, dg/dy) on a grid uniform in z, are interpolated with a
shape-preserving monotone cubic, and serialize to CSV plus a JSON sidecar.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import CalibrationError, DivergenceError, DomainError, RangeError, UsageError
from .normals import (
    _INV_SQRT_2PI,
    Params,
    std_normal_cdf,
    std_normal_pdf,
    std_normal_quantile,
)

# Admissible band and blow-up thresholds for the integrated solution.
RANGE_LO = -0.01
RANGE_HI = 1.01
DIVERGE_G = 2.0
DIVERGE_DGDY = 1.0e6

DEFAULT_EPSILON = 1e-4
DEFAULT_BOUNDARY_TOL = 1e-3
DEFAULT_ATOL = 1e-10
DEFAULT_RTOL = 1e-9
# Spacing of the stored grid in the z coordinate.  Fine enough that the
# five-point stencil used by ode_residuals resolves the curvature to well
# below the 1e-7 residual contract and that raw second differences of the
# stored values stay within the discrete concavity tolerance.
GRID_DZ = 1.25e-3

_MAX_BISECT = 60

# Dormand-Prince 4(5) tableau.
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (_B1 - 5179 / 57600, _B3 - 7571 / 16695, _B4 - 393 / 640,
                                _B5 + 92097 / 339200, _B6 - 187 / 2100, -1 / 40)
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9

# Outcomes of one integration sweep.
_OK, _LOW, _HIGH, _PEAK, _DIVERGED = "ok", "low", "high", "peak", "diverged"


def chord_lower_bound(y, z, p):
    """z^p / y^{p-1} + (1-z)^p / (1-y)^{p-1} for y, z in (0, 1).

    The quantity is >= 1 with equality exactly at z = y; tests use it as a
    standalone checked predicate.
    """
    if not (0.0 < y < 1.0 and 0.0 < z < 1.0):
        raise DomainError("y and z must lie strictly inside (0, 1)")
    if p <= 1.0:
        raise DomainError("p must be > 1")
    return z ** p / y ** (p - 1) + (1.0 - z) ** p / (1.0 - y) ** (p - 1)


def _power_term(g, expo):
    # Sign-safe power: tiny negative excursions from roundoff must not
    # produce complex values; real excursions still trip the range check.
    return (g if g > 0.0 else 0.0) ** expo


def _propagate(p, z_end, g0, q0, atol, rtol, targets=None,
               lo=RANGE_LO, hi=RANGE_HI, peak_stop=False):
    """Integrate (g, g_z) from z = 0 to z_end; optionally record at targets.

    Returns (status, z_stop, g, q, recorded) where recorded is a list of
    (g, q) aligned with targets when recording.  Statuses: 'ok', or 'low' /
    'high' when g leaves the [lo, hi] band, 'peak' when peak_stop is set and
    the slope turns positive (the solution stopped being monotone), or
    'diverged' on numerical blow-up; z_stop is where integration stopped.

    The Runge-Kutta stages are written out inline: this loop sits at the
    bottom of the nested shooting bisection and dominates calibration time.
    """
    expo = p / (p - 1.0)
    two_pm1 = 2.0 * (p - 1.0)
    direction = 1.0 if z_end > 0.0 else -1.0
    exp_ = math.exp
    a21, a31, a32 = _A21, _A31, _A32
    a41, a42, a43 = _A41, _A42, _A43
    a51, a52, a53, a54 = _A51, _A52, _A53, _A54
    a61, a62, a63, a64, a65 = _A61, _A62, _A63, _A64, _A65
    b1, b3, b4, b5, b6 = _B1, _B3, _B4, _B5, _B6
    e1, e3, e4, e5, e6, e7 = _E1, _E3, _E4, _E5, _E6, _E7
    c2, c3, c4, c5 = _C2, _C3, _C4, _C5

    recorded = [] if targets is not None else None
    next_target = 0

    z, g, q = 0.0, g0, q0
    k1g = q
    k1q = -z * q - two_pm1 * (g - (g if g > 0.0 else 0.0) ** expo)
    hstep = direction * min(0.05, abs(z_end) / 10.0 + 1e-12)
    steps = 0
    while True:
        if direction * (z_end - z) <= 1e-14:
            return _OK, z, g, q, recorded
        limit = z_end
        if recorded is not None and next_target < len(targets):
            limit = targets[next_target]
        if direction * (z + hstep - limit) > 0.0:
            hstep = limit - z

        gs_ = g + hstep * a21 * k1g
        qs_ = q + hstep * a21 * k1q
        zs_ = z + c2 * hstep
        k2g = qs_
        k2q = -zs_ * qs_ - two_pm1 * (gs_ - (gs_ if gs_ > 0.0 else 0.0) ** expo)

        gs_ = g + hstep * (a31 * k1g + a32 * k2g)
        qs_ = q + hstep * (a31 * k1q + a32 * k2q)
        zs_ = z + c3 * hstep
        k3g = qs_
        k3q = -zs_ * qs_ - two_pm1 * (gs_ - (gs_ if gs_ > 0.0 else 0.0) ** expo)

        gs_ = g + hstep * (a41 * k1g + a42 * k2g + a43 * k3g)
        qs_ = q + hstep * (a41 * k1q + a42 * k2q + a43 * k3q)
        zs_ = z + c4 * hstep
        k4g = qs_
        k4q = -zs_ * qs_ - two_pm1 * (gs_ - (gs_ if gs_ > 0.0 else 0.0) ** expo)

        gs_ = g + hstep * (a51 * k1g + a52 * k2g + a53 * k3g + a54 * k4g)
        qs_ = q + hstep * (a51 * k1q + a52 * k2q + a53 * k3q + a54 * k4q)
        zs_ = z + c5 * hstep
        k5g = qs_
        k5q = -zs_ * qs_ - two_pm1 * (gs_ - (gs_ if gs_ > 0.0 else 0.0) ** expo)

        gs_ = g + hstep * (a61 * k1g + a62 * k2g + a63 * k3g + a64 * k4g + a65 * k5g)
        qs_ = q + hstep * (a61 * k1q + a62 * k2q + a63 * k3q + a64 * k4q + a65 * k5q)
        zs_ = z + hstep
        k6g = qs_
        k6q = -zs_ * qs_ - two_pm1 * (gs_ - (gs_ if gs_ > 0.0 else 0.0) ** expo)

        g_new = g + hstep * (b1 * k1g + b3 * k3g + b4 * k4g + b5 * k5g + b6 * k6g)
        q_new = q + hstep * (b1 * k1q + b3 * k3q + b4 * k4q + b5 * k5q + b6 * k6q)
        k7g = q_new
        k7q = -zs_ * q_new - two_pm1 * (g_new - (g_new if g_new > 0.0 else 0.0) ** expo)

        err_g = hstep * (e1 * k1g + e3 * k3g + e4 * k4g + e5 * k5g + e6 * k6g + e7 * k7g)
        err_q = hstep * (e1 * k1q + e3 * k3q + e4 * k4q + e5 * k5q + e6 * k6q + e7 * k7q)
        sg = atol + rtol * max(abs(g), abs(g_new))
        sq = atol + rtol * max(abs(q), abs(q_new))
        err = math.sqrt(0.5 * ((err_g / sg) ** 2 + (err_q / sq) ** 2))

        if not math.isfinite(err):
            return _DIVERGED, z, g, q, recorded
        if err <= 1.0:
            z += hstep
            g, q, k1g, k1q = g_new, q_new, k7g, k7q
            if not (math.isfinite(g) and math.isfinite(q)):
                return _DIVERGED, z, g, q, recorded
            if g < lo:
                return _LOW, z, g, q, recorded
            if g > hi:
                return _HIGH, z, g, q, recorded
            if peak_stop and q > 0.0:
                return _PEAK, z, g, q, recorded
            if abs(g) > DIVERGE_G or \
                    abs(q) > DIVERGE_DGDY * exp_(-0.5 * z * z) * _INV_SQRT_2PI:
                return _DIVERGED, z, g, q, recorded
            if recorded is not None and next_target < len(targets) and \
                    direction * (z - targets[next_target]) >= -1e-13:
                recorded.append((g, q))
                next_target += 1
            factor = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
        else:
            factor = max(0.2, 0.9 * err ** -0.2)
        hstep *= factor
        steps += 1
        if steps > 500_000:
            return _DIVERGED, z, g, q, recorded


@dataclass(frozen=True)
class GCurve:
    """Discretized kernel g on [epsilon, 1 - epsilon].

    Arrays are aligned: ys ascending, gs the values, dgs the derivatives in
    the y coordinate.  zs and gzs hold the same data in the quantile
    coordinate and feed the residual check.  Treat all arrays as immutable.
    """

    p: float
    ys: np.ndarray
    gs: np.ndarray
    dgs: np.ndarray
    epsilon: float
    zs: np.ndarray = field(repr=False, default=None)
    gzs: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.zs is None:
            z = std_normal_quantile(self.ys)
            object.__setattr__(self, "zs", z)
            object.__setattr__(self, "gzs", self.dgs * std_normal_pdf(z))

    @cached_property
    def _pchip(self):
        return PchipInterpolator(self.ys, self.gs, extrapolate=False)

    @cached_property
    def _pchip_deriv(self):
        return self._pchip.derivative()

    @cached_property
    def _value_coeffs(self):
        # Raw piecewise-cubic coefficients for the value-only fast path.
        c = self._pchip.c
        return c[0], c[1], c[2], c[3]

    @cached_property
    def _uniform_z_grid(self):
        # (z0, 1/dz) when the grid is uniform in the quantile coordinate,
        # letting callers map a z-score to its interval without a search.
        dz = np.diff(self.zs)
        if len(dz) and np.max(np.abs(dz - dz[0])) <= 1e-9 * abs(dz[0]):
            return float(self.zs[0]), 1.0 / float(dz[0])
        return None

    @property
    def left_residual(self):
        return abs(self.gs[0] - 1.0)

    @property
    def right_residual(self):
        return abs(self.gs[-1])


@dataclass(frozen=True)
class ShootingResult:
    """Calibrated midpoint data plus the full curve and boundary residuals."""

    g_mid: float
    gamma: float
    curve: GCurve
    left_residual: float
    right_residual: float
    ambiguous: bool = False
    candidate_brackets: tuple = ()


def _validate_inputs(p, g_mid, gamma, epsilon):
    if not (isinstance(p, (int, float)) and math.isfinite(p) and p > 1.0):
        raise DomainError("p must be a finite number > 1")
    if g_mid is not None and not (0.0 < g_mid < 1.0):
        raise DomainError("g_mid must lie strictly inside (0, 1)")
    if gamma is not None and not math.isfinite(gamma):
        raise DomainError("gamma must be finite")
    if not (0.0 < epsilon < 0.1):
        raise DomainError("epsilon must lie in (0, 0.1)")


def integrate_g(p, g_mid, gamma, epsilon=DEFAULT_EPSILON, *,
                atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL):
    """Integrate the midpoint value problem outward to both cutoffs.

    Returns a GCurve on a grid uniform in the quantile coordinate.  Raises
    RangeError when the solution leaves [-0.01, 1.01] (a bad shooting pair)
    and DivergenceError on numerical blow-up, both carrying the level at
    which integration stopped.  The left branch is integrated first.
    """
    _validate_inputs(p, g_mid, gamma, epsilon)
    z_edge = -std_normal_quantile(epsilon)
    n_half = max(2, round(z_edge / GRID_DZ))
    dz = z_edge / n_half
    q0 = gamma * _INV_SQRT_2PI

    branches = {}
    for branch, sign in (("left", -1.0), ("right", 1.0)):
        targets = [sign * dz * k for k in range(1, n_half + 1)]
        status, z_stop, *_rest, recorded = _propagate(
            p, sign * z_edge, g_mid, q0, atol, rtol, targets=targets)
        if status in (_LOW, _HIGH):
            raise RangeError(
                f"solution left [{RANGE_LO}, {RANGE_HI}] on the {branch} branch",
                y_fail=std_normal_cdf(z_stop), branch=branch, side=status)
        if status == _DIVERGED:
            raise DivergenceError(
                f"integration blew up on the {branch} branch",
                y_fail=std_normal_cdf(z_stop), branch=branch)
        if len(recorded) != n_half:
            raise DivergenceError(
                f"grid recording misaligned on the {branch} branch "
                f"({len(recorded)} of {n_half} nodes)",
                y_fail=std_normal_cdf(z_stop), branch=branch)
        branches[branch] = recorded

    zs = np.array([dz * k for k in range(-n_half, n_half + 1)])
    gz_pairs = ([branches["left"][k] for k in range(n_half - 1, -1, -1)]
                + [(g_mid, q0)]
                + branches["right"])
    gs = np.array([gg for gg, _ in gz_pairs])
    qs = np.array([qq for _, qq in gz_pairs])
    ys = std_normal_cdf(zs)
    dgs = qs / std_normal_pdf(zs)
    return GCurve(p=float(p), ys=ys, gs=gs, dgs=dgs, epsilon=float(epsilon),
                  zs=zs, gzs=qs)


def _snapped(curve):
    """Clamp sub-tolerance monotonicity wiggles so downstream sign contracts
    (derivative <= 0 everywhere, hence Z >= 0) hold exactly."""
    gs = np.minimum.accumulate(curve.gs)
    if np.max(curve.gs - gs) > 1e-9:
        raise CalibrationError("curve is not monotone within solver tolerance")
    dgs = np.minimum(curve.dgs, 0.0)
    if np.max(curve.dgs - dgs) > 1e-9:
        raise CalibrationError("curve derivative is not <= 0 within solver tolerance")
    return GCurve(p=curve.p, ys=curve.ys, gs=gs, dgs=dgs, epsilon=curve.epsilon,
                  zs=curve.zs, gzs=np.minimum(curve.gzs, 0.0))


def shoot(p, epsilon=DEFAULT_EPSILON, boundary_tol=DEFAULT_BOUNDARY_TOL, *,
          atol=DEFAULT_ATOL, rtol=DEFAULT_RTOL):
    """Calibrate (g_mid, gamma) so both boundary residuals meet boundary_tol.

    Nested bisection.  The inner loop adjusts the midpoint slope to match
    the right boundary: slopes whose trajectory crosses zero before the
    cutoff are too steep, trajectories that stay above the residual target
    are too shallow, and the admissible window in between is the decaying
    branch.  The outer loop adjusts the midpoint value to match the left
    boundary: trajectories that cross above 1 mean the midpoint is too
    high, trajectories whose slope flips sign (an interior maximum, so the
    curve falls away from 1 again) mean it is too low.  These structural
    classifiers keep the bisections on the monotone solution; plain
    endpoint-value matching admits spurious non-monotone shots.

    The outer bracket is ((1/2)^p, 1), from the pointwise lower bound
    (1 - y)^p; the slope bracket is [-10, 0].  Raises CalibrationError with
    diagnostics when no bracket exists or the residuals cannot be met.
    """
    _validate_inputs(p, None, None, epsilon)
    if not (0.0 < boundary_tol < 0.5):
        raise DomainError("boundary_tol must lie in (0, 0.5)")
    z_edge = -std_normal_quantile(epsilon)
    # The curve can meet the cutoff boundaries only to within its own tail
    # values there; accept windows are a decade below the residual budget.
    inner_tol = min(1e-6, 0.1 * boundary_tol)
    outer_tol = 0.1 * boundary_tol
    gamma_lo, gamma_hi = -10.0, 0.0

    def classify_right(g_mid, gamma):
        """-1: crossed zero (too steep); +1: above target at the cutoff
        (too shallow); 0: accept.  Second element is the cutoff value."""
        status, _z, g_end, q_end, _ = _propagate(
            p, z_edge, g_mid, gamma * _INV_SQRT_2PI, atol, rtol, lo=0.0)
        if status == _LOW:
            return -1, None
        if status == _HIGH:
            return 1, None
        if status == _DIVERGED:
            return (-1 if q_end < 0 else 1), None
        return (0 if g_end <= inner_tol else 1), g_end

    def solve_gamma(g_mid):
        """Returns (gamma, right_value) or (None, +-1) when the whole slope
        bracket classifies to one side."""
        c_hi, v_hi = classify_right(g_mid, gamma_hi)
        if c_hi == 0:
            return gamma_hi, v_hi
        if c_hi < 0:
            return None, -1  # flat start already crosses: midpoint too low
        c_lo, _ = classify_right(g_mid, gamma_lo)
        if c_lo > 0:
            return None, 1  # steepest slope still above target: midpoint too high
        lo, hi = gamma_lo, gamma_hi
        for _ in range(_MAX_BISECT):
            mid = 0.5 * (lo + hi)
            cls, val = classify_right(g_mid, mid)
            if cls == 0:
                return mid, val
            if cls < 0:
                lo = mid
            else:
                hi = mid
            if hi - lo < 1e-13:
                break
        # Window not hit: fall back to the non-crossing endpoint.
        cls, val = classify_right(g_mid, hi)
        return hi, (val if val is not None else 1.0)

    def classify_left(g_mid):
        """-1: midpoint too low; +1: too high; 0: accept.
        Returns (class, gamma, left_value)."""
        gamma, right_val = solve_gamma(g_mid)
        if gamma is None:
            return right_val, None, None
        status, _z, g_end, q_end, _ = _propagate(
            p, -z_edge, g_mid, gamma * _INV_SQRT_2PI, atol, rtol,
            lo=-1e-9, hi=1.0, peak_stop=True)
        if status == _HIGH:
            return 1, gamma, None
        if status in (_PEAK, _LOW):
            return -1, gamma, None
        if status == _DIVERGED:
            return (1 if q_end < 0 else -1), gamma, None
        if g_end >= 1.0 - outer_tol:
            return 0, gamma, g_end
        return -1, gamma, g_end

    mid_lo = 0.5 ** p + 1e-9
    mid_hi = 1.0 - 1e-9

    # Coarse scan: supplies the bisection bracket and flags ambiguity if the
    # outer classification switches low-to-high more than once (uniqueness
    # of the boundary-value solution is an open question).
    scan_points = [mid_lo + k * (mid_hi - mid_lo) / 8.0 for k in range(9)]
    scan_classes = [classify_left(gm)[0] for gm in scan_points]
    brackets = []
    last_low = None
    for gm, cls in zip(scan_points, scan_classes):
        if cls < 0:
            last_low = gm
        elif cls > 0 and last_low is not None:
            brackets.append((last_low, gm))
            last_low = None
    if not brackets:
        raise CalibrationError(
            "no admissible midpoint bracket found",
            diagnostics={"p": p, "scan_points": scan_points,
                         "scan_classes": scan_classes})

    best = None
    lo, hi = brackets[0]
    for _ in range(_MAX_BISECT):
        mid = 0.5 * (lo + hi)
        cls, gamma, _val = classify_left(mid)
        if cls == 0:
            best = (mid, gamma)
            break
        if cls < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-14:
            break
    if best is None:
        # Accept window never hit; take the closest non-overshooting side.
        cls, gamma, _val = classify_left(lo)
        if gamma is None:
            raise CalibrationError(
                "slope bracket [-10, 0] failed inside the midpoint bracket",
                diagnostics={"p": p, "g_mid": lo})
        best = (lo, gamma)

    g_mid, gamma = best
    curve = _snapped(integrate_g(p, g_mid, gamma, epsilon, atol=atol, rtol=rtol))
    left_res, right_res = curve.left_residual, curve.right_residual
    if left_res > boundary_tol or right_res > boundary_tol:
        raise CalibrationError(
            "boundary residuals exceed tolerance after bisection",
            diagnostics={"p": p, "g_mid": g_mid, "gamma": gamma,
                         "left_residual": left_res, "right_residual": right_res,
                         "boundary_tol": boundary_tol})
    return ShootingResult(
        g_mid=g_mid, gamma=gamma, curve=curve,
        left_residual=left_res, right_residual=right_res,
        ambiguous=len(brackets) > 1, candidate_brackets=tuple(brackets))


def eval_g(curve, y):
    """Value and derivative of the interpolated curve at level(s) y in (0, 1).

    Inside the stored range this is the monotone cubic (exact stored values
    and derivatives at the nodes); outside, a slope extrapolation from the
    nearest endpoint clamped into [0, 1] with the endpoint derivative.
    """
    arr = np.asarray(y, dtype=float)
    if np.any(~np.isfinite(arr)) or np.any(arr <= 0.0) or np.any(arr >= 1.0):
        raise DomainError("y must lie strictly inside (0, 1)")
    scalar = np.ndim(y) == 0
    arr = np.atleast_1d(arr)

    ys, gs, dgs = curve.ys, curve.gs, curve.dgs
    g_out = np.empty_like(arr)
    dg_out = np.empty_like(arr)

    below = arr < ys[0]
    above = arr > ys[-1]
    inside = ~(below | above)
    if np.any(inside):
        xi = arr[inside]
        g_out[inside] = curve._pchip(xi)
        dg_out[inside] = curve._pchip_deriv(xi)
        # Exact node hits return the stored derivative, not the interpolant's.
        idx = np.searchsorted(ys, xi)
        idx = np.clip(idx, 0, len(ys) - 1)
        at_node = ys[idx] == xi
        if np.any(at_node):
            g_out_in = g_out[inside]
            dg_out_in = dg_out[inside]
            g_out_in[at_node] = gs[idx[at_node]]
            dg_out_in[at_node] = dgs[idx[at_node]]
            g_out[inside] = g_out_in
            dg_out[inside] = dg_out_in
    if np.any(below):
        g_out[below] = np.minimum(1.0, gs[0] + dgs[0] * (arr[below] - ys[0]))
        dg_out[below] = dgs[0]
    if np.any(above):
        g_out[above] = np.maximum(0.0, gs[-1] + dgs[-1] * (arr[above] - ys[-1]))
        dg_out[above] = dgs[-1]

    if scalar:
        return float(g_out[0]), float(dg_out[0])
    return g_out, dg_out


def eval_g_value(curve, y):
    """Interpolated curve value only, vectorized; the simulator's hot path.

    Matches eval_g's value output (same cubic, same clamped extrapolation)
    while skipping derivative evaluation and per-call validation.  Returns
    a float for scalar input, an array otherwise.
    """
    scalar = np.ndim(y) == 0
    arr = np.atleast_1d(np.asarray(y, dtype=float))
    ys, gs, dgs = curve.ys, curve.gs, curve.dgs
    c0, c1, c2, c3 = curve._value_coeffs
    idx = np.searchsorted(ys, arr, side="right") - 1
    np.clip(idx, 0, len(ys) - 2, out=idx)
    t = arr - ys[idx]
    out = ((c0[idx] * t + c1[idx]) * t + c2[idx]) * t + c3[idx]
    below = arr < ys[0]
    above = arr > ys[-1]
    if np.any(below):
        out[below] = np.minimum(1.0, gs[0] + dgs[0] * (arr[below] - ys[0]))
    if np.any(above):
        out[above] = np.maximum(0.0, gs[-1] + dgs[-1] * (arr[above] - ys[-1]))
    return float(out[0]) if scalar else out


def value_function(curve, params):
    """(1-x)^p / T^{p-1} * g(cdf(c / sqrt(T))) for a calibrated curve."""
    if not isinstance(params, Params):
        params = Params(*params)
    if abs(params.p - curve.p) > 1e-12:
        raise UsageError(f"curve calibrated for p={curve.p}, got p={params.p}")
    if params.x == 1.0:
        return 0.0
    level = std_normal_cdf(params.c / math.sqrt(params.T))
    g_val, _ = eval_g(curve, level)
    return (1.0 - params.x) ** params.p / params.T ** (params.p - 1.0) * g_val


def ode_residuals(curve):
    """|h g'' + (p-1)(g - g^{p/(p-1)})| at interior collocation points.

    g'' comes from a five-point divided difference of the stored first
    derivative in the quantile coordinate, where h g'' equals
    (g_zz + z g_z) / 2; the nonlinear term uses the stored values.  The
    returned array covers nodes with a full stencil (two neighbors each
    side), which is the collocation set the residual contract refers to.
    """
    z, g, q = curve.zs, curve.gs, curve.gzs
    dz = np.diff(z)
    if np.max(np.abs(dz - dz[0])) > 1e-9 * np.abs(dz[0]):
        raise UsageError("residual check needs the uniform quantile grid")
    step = dz[0]
    g_zz = (-q[4:] + 8.0 * q[3:-1] - 8.0 * q[1:-3] + q[:-4]) / (12.0 * step)
    zi, gi = z[2:-2], g[2:-2]
    nonlinear = (curve.p - 1.0) * (gi - np.maximum(gi, 0.0) ** (curve.p / (curve.p - 1.0)))
    return np.abs(0.5 * (g_zz + zi * q[2:-2]) + nonlinear)


def curve_invariant_report(curve, *, concavity_tol=1e-6, lower_bound_tol=1e-6,
                           residual_tol=1e-7):
    """Check the curve contracts; returns a dict of name -> (ok, worst value)."""
    ys, gs, dgs = curve.ys, curve.gs, curve.dgs
    report = {}
    report["range"] = (bool(np.all((gs >= 0.0) & (gs <= 1.0))),
                       float(min(np.min(gs), 1.0 - np.max(gs))))
    mono = np.max(np.diff(gs)) if len(gs) > 1 else 0.0
    report["monotone"] = (bool(mono <= 1e-9 and np.max(dgs) <= 1e-9),
                          float(max(mono, np.max(dgs))))
    second = np.diff(gs, 2)
    report["concave"] = (bool(np.max(second) <= concavity_tol), float(np.max(second)))
    lb = np.min(gs - (1.0 - ys) ** curve.p)
    report["lower_bound"] = (bool(lb >= -lower_bound_tol), float(lb))
    res = ode_residuals(curve)
    report["ode_residual"] = (bool(np.max(res) <= residual_tol), float(np.max(res)))
    return report


def save_curve(curve, csv_path, sidecar_path, meta=None):
    """Write the grid as CSV (`y,g,dg`, 17 significant digits) plus a JSON
    sidecar with the calibration summary."""
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "g", "dg"])
        for y, g, dg in zip(curve.ys, curve.gs, curve.dgs):
            writer.writerow([f"{y:.17g}", f"{g:.17g}", f"{dg:.17g}"])
    sidecar = {"p": curve.p, "epsilon": curve.epsilon,
               "g_mid": None, "gamma": None,
               "left_residual": curve.left_residual,
               "right_residual": curve.right_residual}
    if meta:
        sidecar.update(meta)
    with open(sidecar_path, "w") as fh:
        json.dump(sidecar, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_curve(csv_path, sidecar_path):
    """Inverse of save_curve; returns (GCurve, sidecar dict)."""
    with open(sidecar_path) as fh:
        sidecar = json.load(fh)
    rows = []
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != ["y", "g", "dg"]:
            raise UsageError(f"unexpected curve CSV header: {header}")
        for row in reader:
            rows.append((float(row[0]), float(row[1]), float(row[2])))
    arr = np.array(rows)
    curve = GCurve(p=float(sidecar["p"]), ys=arr[:, 0], gs=arr[:, 1],
                   dgs=arr[:, 2], epsilon=float(sidecar["epsilon"]))
    return curve, sidecar
