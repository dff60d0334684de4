"""Brownian path simulation, the optimal feedback control, and the
pathwise verification of the associated backward equation.

Controls follow the feedback law u = gain * (1 - X) / (T - t) with gain
g(M)^{1/(p-1)} evaluated at the current conditional level M.  The state
update uses the exact solution of the linear step ODE with the gain frozen
over the step:  1 - X_{k+1} = (1 - X_k) * ((T - t_{k+1}) / (T - t_k))^gain.
The control blows up like 1/(T-t), and this frozen-gain step stays stable
where an explicit Euler update would not.  The final step closes the gap
exactly on paths where the terminal constraint binds (realized W_T > c,
known to the simulator, not to the controller: on those paths the feedback
gain tends to 1 anyway and the charged completion cost vanishes in
expectation as the grid refines).

Randomness: paths are grouped into fixed blocks of 4096; block b of master
seed s draws its increment matrix from Philox keyed by the counter pair
(s, b), and path i occupies row i mod 4096 of its block.  The block size is
a constant, so results never depend on thread layout, and any path can be
regenerated from (seed, index) alone.  Aggregation runs in path order with
exact summation.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError, UsageError
from .normals import Params, std_normal_cdf
from .ode import eval_g, eval_g_value

BLOCK = 4096  # paths per stream block; fixed so layout never affects results


def _block_rng(seed, block):
    key = np.array([np.uint64(seed & 0xFFFFFFFFFFFFFFFF), np.uint64(block)],
                   dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass
class SimPath:
    """One trajectory; M, u, X, cost stay None until a control is run.

    u[k] is the rate held on [t_k, t_{k+1}); the final entry repeats the
    last step's rate so the array aligns with the time grid.
    """

    n_steps: int
    times: np.ndarray
    dW: np.ndarray
    W: np.ndarray
    seed: int
    M: Optional[np.ndarray] = None
    u: Optional[np.ndarray] = None
    X: Optional[np.ndarray] = None
    cost: Optional[np.ndarray] = None


@dataclass(frozen=True)
class BsdeResidualStats:
    """Euler residuals of the backward pair over the window [0, T - delta]."""

    n_paths: int
    n_steps: int
    delta: float
    mean_residual: float
    stderr: float
    rms_residual: float
    z_min: float
    n_window_steps: int


def _block_increments(seed, block, rows, n_steps, sqrt_dt):
    """Increment rows for a whole stream block (leading rows of it)."""
    out = _block_rng(seed, block).standard_normal((rows, n_steps))
    out *= sqrt_dt
    return out


def _increments(seed, i0, i1, n_steps, sqrt_dt):
    """Increments for the path index range [i0, i1), block layout preserved."""
    pieces = []
    b0, b1 = i0 // BLOCK, (i1 - 1) // BLOCK
    for b in range(b0, b1 + 1):
        lo = max(i0, b * BLOCK) - b * BLOCK
        hi = min(i1, (b + 1) * BLOCK) - b * BLOCK
        rows = _block_increments(seed, b, hi, n_steps, sqrt_dt)
        pieces.append(rows[lo:hi])
    return np.concatenate(pieces) if len(pieces) > 1 else pieces[0]


def nth_path(T, n_steps, seed, index):
    """Skeleton of path `index` from the master seed's stream layout."""
    if not (isinstance(n_steps, (int, np.integer)) and n_steps >= 2):
        raise DomainError("n_steps must be an integer >= 2")
    if not (T > 0.0):
        raise DomainError("T must be > 0")
    if index < 0:
        raise DomainError("index must be >= 0")
    times = np.linspace(0.0, T, n_steps + 1)
    dW = _increments(seed, index, index + 1, n_steps, math.sqrt(T / n_steps))[0]
    W = np.empty(n_steps + 1)
    W[0] = 0.0
    np.cumsum(dW, out=W[1:])
    return SimPath(n_steps=int(n_steps), times=times, dW=dW, W=W, seed=int(seed))


def simulate_brownian(T, n_steps, seed):
    """Path skeleton: times, increments and the running Brownian values.

    Deterministic given the seed; the path carries the stream that the
    Monte Carlo loop assigns to path index 0 of the same master seed.
    """
    return nth_path(T, n_steps, seed, 0)


def _gain(curve, p, m, transform=None):
    gval = eval_g_value(curve, m)
    if transform is not None:
        gval = transform(m, gval)
    expo = 1.0 / (p - 1.0)
    return gval if expo == 1.0 else gval ** expo


def _level_and_gain(curve, p, zscore, transform=None):
    """Conditional level and feedback gain from the raw z-score.

    Same cubic and clamping as eval_g_value; the interval index comes from
    arithmetic on the z-score because the curve grid is uniform in the
    quantile coordinate, which avoids a binary search per step.
    """
    grid = curve._uniform_z_grid
    m = std_normal_cdf(zscore)
    if grid is None:
        return m, _gain(curve, p, m, transform)
    z0, inv_dz = grid
    ys, gs, dgs = curve.ys, curve.gs, curve.dgs
    c0, c1, c2, c3 = curve._value_coeffs
    idx = ((zscore - z0) * inv_dz).astype(np.intp)
    np.clip(idx, 0, len(ys) - 2, out=idx)
    t = m - ys[idx]
    gval = ((c0[idx] * t + c1[idx]) * t + c2[idx]) * t + c3[idx]
    below = m < ys[0]
    above = m > ys[-1]
    if np.any(below):
        gval[below] = np.minimum(1.0, gs[0] + dgs[0] * (m[below] - ys[0]))
    if np.any(above):
        gval[above] = np.maximum(0.0, gs[-1] + dgs[-1] * (m[above] - ys[-1]))
    if transform is not None:
        gval = transform(m, gval)
    expo = 1.0 / (p - 1.0)
    return m, (gval if expo == 1.0 else gval ** expo)


def _drive_block(curve, params, times, W, *, record=False, gain_transform=None,
                 include_final_step=True):
    """Run the feedback control on a block of paths (rows of W).

    Returns (cost, X_T, violations) plus, when record is set, the full
    (M, u, X, cost_running) arrays.
    """
    p, T, x, c = params.p, params.T, params.x, params.c
    n = len(times) - 1
    n_paths = W.shape[0]
    omx = np.full(n_paths, 1.0 - x)  # tracks 1 - X exactly
    cost = np.zeros(n_paths)
    if record:
        M_rec = np.empty((n_paths, n + 1))
        u_rec = np.empty((n_paths, n + 1))
        X_rec = np.empty((n_paths, n + 1))
        c_rec = np.empty((n_paths, n + 1))

    for k in range(n - 1):
        t_k, t_next = times[k], times[k + 1]
        tau = T - t_k
        zscore = (c - W[:, k]) / math.sqrt(tau)
        m, kappa = _level_and_gain(curve, p, zscore, gain_transform)
        u = kappa * omx / tau
        if record:
            M_rec[:, k] = m
            u_rec[:, k] = u
            X_rec[:, k] = 1.0 - omx
            c_rec[:, k] = cost
        cost += (u * u if p == 2.0 else u ** p) * (t_next - t_k)
        omx *= np.exp(kappa * math.log((T - t_next) / tau))

    # Final step [T - delta, T]: close the gap at constant speed on paths
    # where the realized terminal constraint binds, stand still otherwise.
    delta = times[n] - times[n - 1]
    bind = W[:, n] > c
    u_last = np.where(bind, omx / delta, 0.0)
    if record:
        t_k = times[n - 1]
        M_rec[:, n - 1] = std_normal_cdf((c - W[:, n - 1]) / math.sqrt(T - t_k))
        u_rec[:, n - 1] = u_last
        X_rec[:, n - 1] = 1.0 - omx
        c_rec[:, n - 1] = cost
    if include_final_step:
        cost += u_last ** p * delta
    X_T = np.where(bind, 1.0, 1.0 - omx)

    violations = int(np.sum((X_T + 1e-12 < bind.astype(float))
                            | (X_T > 1.0 + 1e-12)))
    if not record:
        return cost, X_T, violations, None
    M_rec[:, n] = (W[:, n] < c).astype(float)
    u_rec[:, n] = u_last
    X_rec[:, n] = X_T
    c_rec[:, n] = cost
    return cost, X_T, violations, (M_rec, u_rec, X_rec, c_rec)


def run_optimal_control(curve, params, path, *, gain_transform=None):
    """Fill a skeleton path with the feedback control, state and cost."""
    if not isinstance(params, Params):
        params = Params(*params)
    if abs(params.p - curve.p) > 1e-12:
        raise UsageError(f"curve calibrated for p={curve.p}, got p={params.p}")
    if abs(path.times[-1] - params.T) > 1e-12 * max(1.0, params.T):
        raise UsageError(
            f"path horizon {path.times[-1]} does not match params.T={params.T}")
    _, _, violations, rec = _drive_block(
        curve, params, path.times, path.W[None, :], record=True,
        gain_transform=gain_transform)
    M_rec, u_rec, X_rec, c_rec = rec
    path.M, path.u, path.X, path.cost = M_rec[0], u_rec[0], X_rec[0], c_rec[0]
    return path


def exponential_form_control(curve, params, path):
    """The closed-form representation of the same control along a fixed path:
    u_t = (1-x) * gain_t / (T-t) * exp(-integral of gain_s / (T-s) ds),
    with the integral accumulated per step at frozen gain (exact logs).
    Agrees with the feedback recursion up to floating-point roundoff.
    """
    p, T, x, c = params.p, params.T, params.x, params.c
    times, W = path.times, path.W
    n = len(times) - 1
    u = np.zeros(n)
    log_decay = 0.0
    for k in range(n - 1):
        tau = T - times[k]
        m = std_normal_cdf((c - W[k]) / math.sqrt(tau))
        kappa = _gain(curve, p, np.atleast_1d(m))[0]
        u[k] = (1.0 - x) * kappa / tau * math.exp(log_decay)
        log_decay += kappa * math.log((T - times[k + 1]) / tau)
    return u


def _block_ranges(n_paths):
    return [(i, min(i + BLOCK, n_paths)) for i in range(0, n_paths, BLOCK)]


def _run_blocks(worker, n_paths, threads):
    ranges = _block_ranges(n_paths)
    if threads is None or threads <= 1 or len(ranges) == 1:
        return [worker(i0, i1) for i0, i1 in ranges]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        futures = [pool.submit(worker, i0, i1) for i0, i1 in ranges]
        return [f.result() for f in futures]  # in submit order: path order


def mc_cost_estimate(curve, params, n_paths, n_steps, seed, *,
                     threads=None, include_final_step=True,
                     gain_transform=None, return_costs=False):
    """Sample mean and standard error of the per-path realized cost.

    Deterministic given the seed regardless of thread count: per-path
    streams are derived by counter and block results are reduced in path
    order with exact summation.
    Also returns the feasibility violation count as third element.
    """
    if not isinstance(params, Params):
        params = Params(*params)
    if abs(params.p - curve.p) > 1e-12:
        raise UsageError(f"curve calibrated for p={curve.p}, got p={params.p}")
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    times = np.linspace(0.0, params.T, n_steps + 1)
    sqrt_dt = math.sqrt(params.T / n_steps)

    def worker(i0, i1):
        dW = _increments(seed, i0, i1, n_steps, sqrt_dt)
        W = np.empty((i1 - i0, n_steps + 1))
        W[:, 0] = 0.0
        np.cumsum(dW, axis=1, out=W[:, 1:])
        cost, _xt, violations, _ = _drive_block(
            curve, params, times, W, gain_transform=gain_transform,
            include_final_step=include_final_step)
        return cost, violations

    results = _run_blocks(worker, n_paths, threads)
    costs = np.concatenate([r[0] for r in results])
    violations = sum(r[1] for r in results)
    mean = math.fsum(costs) / n_paths
    if n_paths > 1:
        var = math.fsum((costs - mean) ** 2) / (n_paths - 1)
        stderr = math.sqrt(var / n_paths)
    else:
        stderr = 0.0
    if return_costs:
        return mean, stderr, violations, costs
    return mean, stderr, violations


def bsde_residual(curve, p, T, c, n_paths, n_steps, delta, seed, *, threads=None):
    """Per-step Euler residuals of the explicit backward pair.

    Y_t = g(M_t) / (T-t)^{p-1} and Z_t from the curve derivative and the
    Gaussian factor; the residual on each step inside [0, T - delta] is
    r_k = dY_k - (p-1) Y_k^{p/(p-1)} dt - Z_k dW_k.  Reports the mean (with
    a per-path standard error), the root mean square, and the smallest Z.
    """
    if not (0.0 < delta < T / 2.0):
        raise DomainError("delta must lie in (0, T/2)")
    if abs(p - curve.p) > 1e-12:
        raise UsageError(f"curve calibrated for p={curve.p}, got p={p}")
    times = np.linspace(0.0, T, n_steps + 1)
    sqrt_dt = math.sqrt(T / n_steps)
    dt = T / n_steps
    # steps k with t_{k+1} <= T - delta
    k_end = int(np.searchsorted(times, T - delta + 1e-12)) - 1
    if k_end < 1:
        raise DomainError("window [0, T - delta] contains no full step")
    expo = p / (p - 1.0)
    z_norm = math.sqrt(2.0 * math.pi)

    def y_and_z(t, w_col):
        tau = T - t
        m = std_normal_cdf((c - w_col) / math.sqrt(tau))
        gval, dgval = eval_g(curve, m)
        y = gval / tau ** (p - 1.0)
        z = -dgval * np.exp(-((c - w_col) ** 2) / (2.0 * tau)) / (
            z_norm * tau ** (p - 0.5))
        return y, z

    def worker(i0, i1):
        dW = _increments(seed, i0, i1, n_steps, sqrt_dt)
        W = np.empty((i1 - i0, n_steps + 1))
        W[:, 0] = 0.0
        np.cumsum(dW, axis=1, out=W[:, 1:])
        path_sum = np.zeros(i1 - i0)
        sq_sum = 0.0
        z_min = math.inf
        y_k, z_k = y_and_z(times[0], W[:, 0])
        for k in range(k_end):
            y_next, z_next = y_and_z(times[k + 1], W[:, k + 1])
            r = (y_next - y_k) - (p - 1.0) * y_k ** expo * dt - z_k * dW[:, k]
            path_sum += r
            sq_sum += float(np.dot(r, r))
            z_min = min(z_min, float(np.min(z_k)))
            y_k, z_k = y_next, z_next
        return path_sum, sq_sum, z_min

    results = _run_blocks(worker, n_paths, threads)
    per_path_mean = np.concatenate([r[0] for r in results]) / k_end
    sq_total = math.fsum(r[1] for r in results)
    z_min = min(r[2] for r in results)
    mean = math.fsum(per_path_mean) / n_paths
    var = math.fsum((per_path_mean - mean) ** 2) / max(n_paths - 1, 1)
    stderr = math.sqrt(var / n_paths)
    rms = math.sqrt(sq_total / (n_paths * k_end))
    return BsdeResidualStats(
        n_paths=n_paths, n_steps=n_steps, delta=float(delta),
        mean_residual=mean, stderr=stderr, rms_residual=rms,
        z_min=z_min, n_window_steps=k_end)


def terminal_blowup_medians(curve, p, T, c, n_paths, n_steps, deltas, seed):
    """Median of Y at T - delta, separately on binding and non-binding paths.

    Documents the singular terminal behavior: the binding-class median grows
    without bound as delta shrinks while the other class stays bounded.
    """
    times = np.linspace(0.0, T, n_steps + 1)
    sqrt_dt = math.sqrt(T / n_steps)
    dW = _increments(seed, 0, n_paths, n_steps, sqrt_dt)
    W = np.empty((n_paths, n_steps + 1))
    W[:, 0] = 0.0
    np.cumsum(dW, axis=1, out=W[:, 1:])
    bind = W[:, -1] > c
    out = {}
    for delta in deltas:
        k = int(np.searchsorted(times, T - delta + 1e-12))
        k = min(max(k, 1), n_steps - 1)
        tau = T - times[k]
        m = std_normal_cdf((c - W[:, k]) / math.sqrt(tau))
        gval, _ = eval_g(curve, m)
        y = gval / tau ** (p - 1.0)
        out[float(delta)] = (float(np.median(y[bind])),
                            float(np.median(y[~bind])))
    return out


def dump_path_csv(path, fh):
    """Rows `t,W,M,u,X,cost_running`; requires a filled path."""
    if path.M is None:
        raise UsageError("path has no control attached; run the feedback first")
    fh.write("t,W,M,u,X,cost_running\n")
    for k in range(path.n_steps + 1):
        fh.write(f"{path.times[k]:.17g},{path.W[k]:.17g},{path.M[k]:.17g},"
                 f"{path.u[k]:.17g},{path.X[k]:.17g},{path.cost[k]:.17g}\n")
