"""Randomized F-KPP equation w_t = w_xx/2 + xi F(w) and its nonlinearity toolkit."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np
from numba import njit

from .envgen import PotentialField
from .pamsolve import _Window, _check_breach, _u0_point
from .pdecore import (FrontTrace, GridConfig, InitialCondition, SolutionTrajectory, StabilityError,
                      WindowBreachError, breakpoint_from_snapshots, diffuse, front_from_snapshot,
                      front_index, interp_front)


class LawError(ValueError):
    pass


class PreconditionError(ValueError):
    pass


class NotFoundError(ValueError):
    pass


MODE_LOGISTIC = 0
MODE_POLY = 1
MODE_TABLE = 2


@dataclass(frozen=True)
class Nonlinearity:
    """F on [0,1].  Offspring-type F are stored as the law (k, p_k)."""
    kind: str
    ks: tuple = ()
    ps: tuple = ()
    n: int = 0
    table_w: tuple = ()
    table_f: tuple = ()
    table_df: tuple = ()

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "logistic":
            return w * (1.0 - w)
        if self.kind in ("offspring_generated", "gm_family"):
            return _poly_F(w, np.array(self.ks, dtype=np.int64), np.array(self.ps))
        return np.interp(w, self.table_w, self.table_f)

    def derivative(self, w):
        w = np.asarray(w, dtype=float)
        if self.kind == "logistic":
            return 1.0 - 2.0 * w
        if self.kind in ("offspring_generated", "gm_family"):
            ks = np.array(self.ks, dtype=float)
            ps = np.array(self.ps)
            q = 1.0 - w[..., None]
            return -1.0 + (ps * ks * q ** (ks - 1)).sum(axis=-1)
        if self.table_df:
            return np.interp(w, self.table_w, self.table_df)
        return np.gradient(np.interp(w, self.table_w, self.table_f), w)

    @property
    def mode(self) -> int:
        if self.kind == "logistic":
            return MODE_LOGISTIC
        if self.kind in ("offspring_generated", "gm_family"):
            return MODE_POLY
        return MODE_TABLE

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ks": list(self.ks), "ps": list(self.ps), "n": self.n}


def _poly_F(w, ks, ps):
    """1 - w - sum p_k (1-w)^k, via repeated multiplication of (1-w)."""
    q = 1.0 - np.asarray(w, dtype=float)
    kmax = int(ks.max())
    coef = np.zeros(kmax + 1)
    coef[ks] = ps
    acc = np.zeros_like(q)
    power = np.ones_like(q)
    for k in range(1, kmax + 1):
        power = power * q
        if coef[k]:
            acc = acc + coef[k] * power
    return q - acc


def logistic() -> Nonlinearity:
    return Nonlinearity(kind="logistic")


def custom_table(w, f, df=None) -> Nonlinearity:
    return Nonlinearity(kind="custom_table", table_w=tuple(map(float, w)), table_f=tuple(map(float, f)),
                        table_df=tuple(map(float, df)) if df is not None else ())


def offspring_to_F(p: dict) -> Nonlinearity:
    """F(u) = 1 - u - sum_k p_k (1-u)^k for an offspring law with mean 2."""
    ks = np.array(sorted(int(k) for k in p if p[k] > 0), dtype=np.int64)
    ps = np.array([float(p[k]) for k in sorted(p, key=int) if p[k] > 0])
    _check_law(ks, ps)
    return Nonlinearity(kind="offspring_generated", ks=tuple(int(k) for k in ks), ps=tuple(ps))


def _check_law(ks, ps):
    if np.any(ks < 0):
        raise LawError("offspring numbers must be non-negative")
    if np.any(ks == 0):
        raise LawError("p_0 must vanish")
    if abs(ps.sum() - 1.0) > 1e-12:
        raise LawError(f"probabilities sum to {ps.sum()}")
    if abs((ks * ps).sum() - 2.0) > 1e-12:
        raise LawError(f"mean offspring number {float((ks * ps).sum())} differs from 2")


def gm_family(n: int) -> Nonlinearity:
    """G_n(x) = (1-x)/n (1 - (1-x)^n), generated by p_1 = 1 - 1/n, p_{n+1} = 1/n."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n == 1:
        return Nonlinearity(kind="gm_family", ks=(2,), ps=(1.0,), n=1)
    return Nonlinearity(kind="gm_family", ks=(1, n + 1), ps=(1.0 - 1.0 / n, 1.0 / n), n=n)


def gm_closed_form(n: int, x):
    x = np.asarray(x, dtype=float)
    return (1.0 - x) / n * (1.0 - (1.0 - x) ** n)


@dataclass
class ScReport:
    f0: bool
    f1: bool
    positive: bool
    df0_is_one: bool
    sup_ratio_is_one: bool
    below_diagonal: bool
    df1_negative: bool
    limsup_finite: bool
    witnesses: dict = dfield(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all([self.f0, self.f1, self.positive, self.df0_is_one, self.sup_ratio_is_one,
                    self.below_diagonal, self.df1_negative, self.limsup_finite])


def check_sc(F: Nonlinearity, h: float = 1e-3, tol: float = 1e-6) -> ScReport:
    w = np.linspace(0.0, 1.0, int(round(1 / h)) + 1)
    f = F(w)
    df = F.derivative(w)
    inner = w[1:-1]
    ratio = f[1:-1] / inner
    small = np.logspace(-4, -2, 25)
    slope = (1.0 - F.derivative(small)) / small
    fit = np.polyfit(np.log(small), np.log(np.maximum(np.abs(slope), 1e-300)), 1)[0]
    return ScReport(
        f0=abs(f[0]) <= tol, f1=abs(f[-1]) <= tol,
        positive=bool(np.all(f[1:-1] > 0)),
        df0_is_one=abs(df[0] - 1.0) <= 1e-3,
        sup_ratio_is_one=abs(max(ratio.max(), df[0]) - 1.0) <= 1e-3,
        below_diagonal=bool(np.all(f <= w + tol)),
        df1_negative=bool(df[-1] < 0),
        limsup_finite=bool(np.all(np.isfinite(slope)) and fit > -0.5),
        witnesses={"F(0)": float(f[0]), "F(1)": float(f[-1]), "min_F_inner": float(f[1:-1].min()),
                   "F'(0)": float(df[0]), "F'(1)": float(df[-1]), "max_F_over_w": float(ratio.max()),
                   "max_F_minus_w": float((f - w).max()), "slope_loglog": float(fit),
                   "limsup_estimate": float(slope[0])})


def dominating_gm(F: Nonlinearity, n_max: int = 10**6, h: float = 1e-4) -> int:
    """Smallest M with G_M <= F on a grid; G_M is pointwise decreasing in M."""
    rep = check_sc(F)
    if not rep.passed:
        raise PreconditionError(f"nonlinearity fails the standard conditions: {rep.witnesses}")
    w = np.linspace(0.0, 1.0, int(round(1 / h)) + 1)
    f = F(w)

    def ok(m):
        return bool(np.all(gm_closed_form(m, w) <= f + 1e-12))
    if ok(1):
        return 1
    if not ok(n_max):
        viol = float((gm_closed_form(n_max, w) - f).max())
        raise NotFoundError(f"no G_M below F for M <= {n_max}; max violation {viol}")
    lo, hi = 1, n_max
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid
    return hi


# -- solver --------------------------------------------------------------------

@njit(cache=True)
def _f_poly(w, ks, ps):
    q = 1.0 - w
    acc = 0.0
    for i in range(ks.shape[0]):
        acc += ps[i] * q ** ks[i]
    return q - acc


@njit(cache=True)
def _f_table(w, tw, tf):
    n = tw.shape[0]
    if w <= tw[0]:
        return tf[0]
    if w >= tw[n - 1]:
        return tf[n - 1]
    j = int((w - tw[0]) / (tw[1] - tw[0]))
    if j >= n - 1:
        j = n - 2
    t = (w - tw[j]) / (tw[j + 1] - tw[j])
    return (1 - t) * tf[j] + t * tf[j + 1]


@njit(cache=True)
def _reaction(w, xi, expo, dt, mode, ks, ps, tw, tf):
    """Advance w' = xi F(w) by dt in place; returns the largest clamp correction."""
    n = w.shape[0]
    clamp = 0.0
    if mode == 0:
        for j in range(n):
            e = expo[j]
            w[j] = w[j] * e / (1.0 + w[j] * (e - 1.0))
    else:
        h = dt / 4.0
        for j in range(n):
            y = w[j]
            r = xi[j]
            if y == 0.0:
                continue
            for _ in range(4):
                if mode == 1:
                    k1 = r * _f_poly(y, ks, ps)
                    k2 = r * _f_poly(y + 0.5 * h * k1, ks, ps)
                    k3 = r * _f_poly(y + 0.5 * h * k2, ks, ps)
                    k4 = r * _f_poly(y + h * k3, ks, ps)
                else:
                    k1 = r * _f_table(y, tw, tf)
                    k2 = r * _f_table(y + 0.5 * h * k1, tw, tf)
                    k3 = r * _f_table(y + 0.5 * h * k2, tw, tf)
                    k4 = r * _f_table(y + h * k3, tw, tf)
                y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6.0
            w[j] = y
    for j in range(n):
        if w[j] > 1.0:
            if w[j] - 1.0 > clamp:
                clamp = w[j] - 1.0
            w[j] = 1.0
        elif w[j] < 0.0:
            if -w[j] > clamp:
                clamp = -w[j]
            w[j] = 0.0
        elif w[j] < 1e-290:
            w[j] = 0.0
    return clamp


@njit(cache=True)
def _kpp_kernel(w, xi, expo, dt, r, n_steps, step0, n_ran, level, stop_idx, mode, ks, ps, tw, tf):
    n = w.shape[0]
    rhs = np.empty(n)
    cp = np.empty(n)
    dp = np.empty(n)
    worst = 0.0
    for s in range(n_steps):
        step = step0 + s
        back = step < n_ran
        diffuse(w, rhs, cp, dp, dt / 2.0, r, back)
        c = _reaction(w, xi, expo, dt, mode, ks, ps, tw, tf)
        if c > worst:
            worst = c
        diffuse(w, rhs, cp, dp, dt / 2.0, r, back)
        for j in range(n):
            if w[j] > 1.0:
                if w[j] - 1.0 > worst:
                    worst = w[j] - 1.0
                w[j] = 1.0
            elif w[j] < 1e-290:
                if -w[j] > worst:
                    worst = -w[j]
                w[j] = 0.0
        if stop_idx >= 0:
            if front_index(w, level) >= stop_idx:
                return s + 1, worst
    return n_steps, worst


def solve_kpp(field: PotentialField, F: Nonlinearity, w0: InitialCondition, grid: GridConfig,
              T: float, eps: float = 0.5, clamp_tol: float = 1e-6, check: bool = True) -> SolutionTrajectory:
    """Solve the F-KPP equation up to time T, tracking the front at level eps."""
    if T <= 0:
        raise ValueError("T must be positive")
    if check:
        rep = check_sc(F)
        if not rep.passed:
            raise PreconditionError(f"nonlinearity fails the standard conditions: {rep.witnesses}")
    if w0.sup > 1:
        raise ValueError("F-KPP initial data must take values in [0,1]")
    if grid.recenter and grid.w_right <= grid.breach_margin + 1.0:
        raise WindowBreachError(f"w_right={grid.w_right} leaves no room ahead of the front; enlarge W_R")
    dt, dx = grid.dt, grid.dx
    win = _Window(field, grid, dt)
    w = w0.cell_average(win.x(), dx)
    ks = np.array(F.ks if F.ks else (2,), dtype=np.int64)
    ps = np.array(F.ps if F.ps else (1.0,), dtype=float)
    tw = np.array(F.table_w if F.table_w else (0.0, 1.0))
    tf = np.array(F.table_f if F.table_f else (0.0, 0.0))
    mode = F.mode
    n_total = int(round(T / dt))
    front_every = max(1, int(round(grid.front_dt / dt)))
    snap_every = max(1, int(round(grid.snapshot_dt / dt)))
    r = 0.5 / (dx * dx)
    stop_idx = int(round((grid.w_left + 1.0) / dx)) if grid.recenter else -1
    ln_e = math.log(eps)
    times, lefts, vals = [0.0], [win.left], [w.copy()]
    f_times, f_vals = [0.0], [_front_plain(win.x(), w, eps)]
    worst = 0.0
    step = 0
    while step < n_total:
        chunk = min(front_every - step % front_every, n_total - step)
        while chunk > 0:
            done, c = _kpp_kernel(w, win.xi, win.expo, dt, r, chunk, step, grid.n_rannacher,
                                  eps, stop_idx, mode, ks, ps, tw, tf)
            worst = max(worst, c)
            if worst > clamp_tol:
                raise StabilityError(f"clamp correction {worst:.3g} exceeds {clamp_tol}; reduce dt")
            step += done
            chunk -= done
            fidx = front_index(w, eps)
            if grid.recenter and fidx >= stop_idx:
                cells = fidx - int(round(grid.w_left / dx))
                w = _shift_fill(win, w, cells)
                fidx -= cells
            _check_breach(fidx, win.n, grid, step * dt)
        if step % front_every == 0 or step == n_total:
            f_times.append(step * dt)
            f_vals.append(_front_plain(win.x(), w, eps))
        if step % snap_every == 0 or step == n_total:
            times.append(step * dt)
            lefts.append(win.left)
            vals.append(w.copy())
    trace = FrontTrace(threshold=eps, times=np.array(f_times), front=np.array(f_vals),
                       bp_x=np.empty(0), bp_t=np.empty(0))
    return SolutionTrajectory(kind="kpp", times=np.array(times), window_left=np.array(lefts),
                              log_offset=np.zeros(len(times)), values=vals, dx=dx, dt=dt,
                              front_trace=trace, meta={"ic": w0.kind, "T": T, "eps": eps,
                                                        "max_clamp": worst, "F": F.to_dict()})


def _shift_fill(win: _Window, w: np.ndarray, cells: int) -> np.ndarray:
    return win.shift(w, cells)


def _front_plain(x, w, eps):
    with np.errstate(divide="ignore"):
        return interp_front(x, np.log(w), math.log(eps))


def front_kpp(traj: SolutionTrajectory, eps: float, t: float) -> float:
    ft = traj.front_trace
    if ft is not None and eps == ft.threshold:
        k = np.nonzero(np.abs(ft.times - t) < 1e-9 * max(1.0, t))[0]
        if k.size:
            return float(ft.front[k[0]])
    return front_from_snapshot(traj, eps, t)
