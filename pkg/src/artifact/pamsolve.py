"""Parabolic Anderson model u_t = u_xx/2 + xi u on a moving window.

The field is stored max-normalised with the logarithm of the scale kept
separately, so ln u stays exact long after u itself would overflow.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .envgen import PotentialField
from .pdecore import (FrontTrace, GridConfig, InitialCondition, SolutionTrajectory,
                      WindowBreachError, breakpoint_from_snapshots, diffuse, front_from_snapshot,
                      front_index, interp_front)
from .seeding import rng_for

TINY = 1e-290


@njit(cache=True)
def _pam_kernel(u, ehalf, dt, r, n_steps, step0, n_ran, ln_a, log_off, i0, per, bp, stop_idx):
    n = u.shape[0]
    rhs = np.empty(n)
    cp = np.empty(n)
    dp = np.empty(n)
    first = (-i0) % per
    n_int = (n - 1 - first) // per + 1 if first < n else 0
    prev = np.empty(max(n_int, 1))
    K = bp.shape[0]
    for s in range(n_steps):
        step = step0 + s
        # ln u at integer sites before the step
        for q in range(n_int):
            j = first + q * per
            prev[q] = log_off + math.log(u[j]) if u[j] > 0.0 else -np.inf
        for j in range(n):
            u[j] *= ehalf[j]
        diffuse(u, rhs, cp, dp, dt, r, step < n_ran)
        m = 0.0
        for j in range(n):
            u[j] *= ehalf[j]
            if u[j] > m:
                m = u[j]
        inv = 1.0 / m
        for j in range(n):
            v = u[j] * inv
            u[j] = v if v > 1e-290 else 0.0
        log_off += math.log(m)
        t_new = (step + 1) * dt
        for q in range(n_int):
            j = first + q * per
            k = (i0 + j) // per
            if k < 0 or k >= K or not np.isnan(bp[k]):
                continue
            if u[j] <= 0.0:
                continue
            l = log_off + math.log(u[j])
            if l >= ln_a:
                lp = prev[q]
                if np.isfinite(lp) and lp < ln_a:
                    bp[k] = t_new - dt + dt * (ln_a - lp) / (l - lp)
                else:
                    bp[k] = t_new
        if stop_idx >= 0:
            fi = front_index(u, math.exp(ln_a - log_off))
            if fi >= stop_idx:
                return s + 1, log_off
    return n_steps, log_off


class _Window:
    """Bookkeeping for the moving window: global node offset i0 and potential."""

    def __init__(self, field: PotentialField, grid: GridConfig, rate_factor: float):
        self.field = field
        self.grid = grid
        self.dx = grid.dx
        self.n = int(round((grid.w_left + grid.w_right) / grid.dx)) + 1
        self.i0 = -int(round(grid.w_left / grid.dx))
        self.rate_factor = rate_factor
        self.xi = field.evaluate(self.x())
        self.expo = np.exp(self.xi * rate_factor)

    def x(self, i0: int | None = None, n: int | None = None) -> np.ndarray:
        i0 = self.i0 if i0 is None else i0
        n = self.n if n is None else n
        return (i0 + np.arange(n)) * self.dx

    @property
    def left(self) -> float:
        return self.i0 * self.dx

    def shift(self, u: np.ndarray, cells: int) -> np.ndarray:
        if cells <= 0:
            return u
        new_x = (self.i0 + self.n + np.arange(cells)) * self.dx
        new_xi = self.field.evaluate(new_x)
        self.xi = np.concatenate([self.xi[cells:], new_xi])
        self.expo = np.concatenate([self.expo[cells:], np.exp(new_xi * self.rate_factor)])
        self.i0 += cells
        return np.concatenate([u[cells:], np.zeros(cells)])


def _check_breach(fidx: int, n: int, grid: GridConfig, t: float):
    limit = n - 1 - int(round(grid.breach_margin / grid.dx))
    if fidx >= limit:
        raise WindowBreachError(
            f"front reached the right window edge at t={t:.4g}; enlarge W_R (w_right={grid.w_right})")


def solve_pam(field: PotentialField, ic: InitialCondition, grid: GridConfig, T: float,
              a: float = 0.5, x_max: float | None = None) -> SolutionTrajectory:
    """Solve the PAM up to time T, tracking the front at level a and T_x^{(a)}."""
    if T <= 0:
        raise ValueError("T must be positive")
    if a <= 0:
        raise ValueError("threshold a must be positive")
    if grid.recenter and grid.w_right <= grid.breach_margin + 1.0:
        raise WindowBreachError(f"w_right={grid.w_right} leaves no room ahead of the front; enlarge W_R")
    dt, dx = grid.dt, grid.dx
    win = _Window(field, grid, dt / 2.0)
    u = ic.cell_average(win.x(), dx)
    m0 = u.max()
    u = u / m0
    log_off = math.log(m0)
    n_total = int(round(T / dt))
    per = grid.per_unit
    es = field.spec.es
    if x_max is None:
        x_max = math.sqrt(2.0 * es) * T + grid.w_right + 10.0
    bp = np.full(int(math.ceil(x_max)) + 1, np.nan)
    ln_a = math.log(a)
    bp[_u0_point(ic, np.arange(bp.size, dtype=float)) >= a] = 0.0
    front_every = max(1, int(round(grid.front_dt / dt)))
    snap_every = max(1, int(round(grid.snapshot_dt / dt)))
    r = 0.5 / (dx * dx)
    stop_idx = int(round((grid.w_left + 1.0) / dx)) if grid.recenter else -1

    times, lefts, offs, vals = [0.0], [win.left], [log_off], [u.copy()]
    f_times, f_vals = [0.0], [interp_front(win.x(), log_off + _safe_log(u), ln_a)]
    step = 0
    while step < n_total:
        chunk = min(front_every - step % front_every, n_total - step)
        while chunk > 0:
            done, log_off = _pam_kernel(u, win.expo, dt, r, chunk, step, grid.n_rannacher, ln_a,
                                        log_off, win.i0, per, bp, stop_idx)
            step += done
            chunk -= done
            fidx = front_index(u, math.exp(ln_a - log_off))
            if grid.recenter and fidx >= stop_idx:
                cells = fidx - int(round(grid.w_left / dx))
                u = win.shift(u, cells)
                fidx -= cells
            _check_breach(fidx, win.n, grid, step * dt)
        if step % front_every == 0 or step == n_total:
            f_times.append(step * dt)
            f_vals.append(interp_front(win.x(), log_off + _safe_log(u), ln_a))
        if step % snap_every == 0 or step == n_total:
            times.append(step * dt)
            lefts.append(win.left)
            offs.append(log_off)
            vals.append(u.copy())
    ks = np.nonzero(~np.isnan(bp))[0]
    trace = FrontTrace(threshold=a, times=np.array(f_times), front=np.array(f_vals),
                       bp_x=ks.astype(float), bp_t=bp[ks])
    return SolutionTrajectory(kind="pam", times=np.array(times), window_left=np.array(lefts),
                              log_offset=np.array(offs), values=vals, dx=dx, dt=dt,
                              front_trace=trace, meta={"ic": ic.kind, "T": T, "a": a})


def _safe_log(u):
    with np.errstate(divide="ignore"):
        return np.log(u)


def front_pam(traj: SolutionTrajectory, a: float, t: float) -> float:
    """sup{x : u(t,x) >= a} at a snapshot time (or any traced time for the traced level)."""
    ft = traj.front_trace
    if ft is not None and a == ft.threshold:
        k = np.nonzero(np.abs(ft.times - t) < 1e-9 * max(1.0, t))[0]
        if k.size:
            return float(ft.front[k[0]])
    return front_from_snapshot(traj, a, t)


def breakpoint_inverse(traj: SolutionTrajectory, x: float, a: float) -> float:
    """T_x^{(a)} = inf{t : u(t,x) >= a}; +inf if not reached by the horizon."""
    ft = traj.front_trace
    if ft is not None and a == ft.threshold and float(x).is_integer() and x >= 0:
        try:
            return ft.breakpoint(int(x))
        except KeyError:
            return math.inf
    return breakpoint_from_snapshots(traj, x, a)


# -- Feynman-Kac Monte Carlo ---------------------------------------------------

def fk_mc_pam(field: PotentialField, t: float, x: float, ic: InitialCondition,
              n_paths: int = 100_000, dt_path: float = 0.002, seed: int = 0,
              batch: int = 20_000, return_paths: bool = False):
    """Monte Carlo of E_x[exp(int_0^t xi(B_s) ds) u0(B_t)] with trapezoidal path integrals."""
    n_steps = int(round(t / dt_path))
    h = t / n_steps
    rng = rng_for(seed, "fk_mc_pam")
    sums = []
    weights_all = []
    ends_all = []
    left = n_paths
    while left > 0:
        m = min(batch, left)
        left -= m
        pos = np.full(m, float(x))
        xi_prev = field.evaluate(pos)
        acc = np.zeros(m)
        for _ in range(n_steps):
            pos = pos + math.sqrt(h) * rng.standard_normal(m)
            xi_new = field.evaluate(pos)
            acc += 0.5 * h * (xi_prev + xi_new)
            xi_prev = xi_new
        w = np.exp(acc)
        sums.append(w * _u0_point(ic, pos))
        if return_paths:
            weights_all.append(w)
            ends_all.append(pos)
    vals = np.concatenate(sums)
    est = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(vals.size))
    if return_paths:
        return est, se, np.concatenate(weights_all), np.concatenate(ends_all)
    return est, se


def _u0_point(ic: InitialCondition, y: np.ndarray) -> np.ndarray:
    if ic.kind == "box":
        return np.where((y >= -ic.delta_prime) & (y <= 0.0), ic.delta_prime, 0.0)
    c = 1.0 if ic.kind == "heaviside" else ic.c_prime
    return np.where(y <= 0.0, c, 0.0)
