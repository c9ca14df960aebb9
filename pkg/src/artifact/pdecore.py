"""Shared moving-window machinery for the PAM and F-KPP solvers."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np
from numba import njit


class WindowBreachError(RuntimeError):
    pass


class StabilityError(RuntimeError):
    pass


@dataclass(frozen=True)
class GridConfig:
    dx: float = 0.05
    dt: float = 0.01
    w_left: float = 40.0
    w_right: float = 60.0
    snapshot_dt: float = 1.0
    front_dt: float = 0.1
    n_rannacher: int = 4
    recenter: bool = True
    breach_margin: float = 2.0

    def __post_init__(self):
        if self.dx <= 0 or self.dt <= 0:
            raise ValueError("dx and dt must be positive")
        n = 1.0 / self.dx
        if abs(n - round(n)) > 1e-9:
            raise ValueError("1/dx must be an integer so that integer sites are grid nodes")
        if self.w_left <= 0 or self.w_right <= 0:
            raise ValueError("window margins must be positive")

    @property
    def per_unit(self) -> int:
        return int(round(1.0 / self.dx))


@dataclass(frozen=True)
class InitialCondition:
    kind: str = "heaviside"
    delta_prime: float = 0.5
    c_prime: float = 2.0

    def __post_init__(self):
        if self.kind not in ("heaviside", "box", "scaled_heaviside"):
            raise ValueError(f"unknown initial condition {self.kind!r}")
        if not 0 < self.delta_prime < 1:
            raise ValueError("delta_prime must lie in (0,1)")
        if self.c_prime <= 1:
            raise ValueError("c_prime must exceed 1")

    def cell_average(self, x: np.ndarray, dx: float) -> np.ndarray:
        """Exact averages of u0 over [x - dx/2, x + dx/2]."""
        lo, hi = x - dx / 2, x + dx / 2
        if self.kind == "box":
            a, b, c = -self.delta_prime, 0.0, self.delta_prime
        else:
            a, b = -np.inf, 0.0
            c = 1.0 if self.kind == "heaviside" else self.c_prime
        overlap = np.minimum(hi, b) - np.maximum(lo, a)
        return c * np.clip(overlap / dx, 0.0, 1.0)

    @property
    def sup(self) -> float:
        return {"heaviside": 1.0, "box": self.delta_prime, "scaled_heaviside": self.c_prime}[self.kind]

    @property
    def right_edge(self) -> float:
        return 0.0


@njit(cache=True)
def tridiag_step(u, rhs, cp, dp, theta, tau, r):
    """Solve (I - theta tau A) u = rhs, A = r * second difference with a
    reflecting left end and a zero right end.  Overwrites u."""
    n = u.shape[0]
    off = -theta * tau * r
    diag = 1.0 + 2.0 * theta * tau * r
    # row 0: ghost node mirrors node 1, giving coefficient 2*off on u1
    cp[0] = 2.0 * off / diag
    dp[0] = rhs[0] / diag
    for j in range(1, n):
        den = diag - off * cp[j - 1]
        cp[j] = off / den
        dp[j] = (rhs[j] - off * dp[j - 1]) / den
    u[n - 1] = dp[n - 1]
    for j in range(n - 2, -1, -1):
        u[j] = dp[j] - cp[j] * u[j + 1]


@njit(cache=True)
def explicit_part(u, rhs, theta, tau, r):
    n = u.shape[0]
    w = (1.0 - theta) * tau * r
    for j in range(n):
        left = u[j - 1] if j > 0 else u[1]
        right = u[j + 1] if j < n - 1 else 0.0
        rhs[j] = u[j] + w * (left - 2.0 * u[j] + right)


@njit(cache=True)
def diffuse(u, rhs, cp, dp, tau, r, backward):
    """One theta-scheme step of u_t = u_xx / 2 over time tau; r = 1/(2 dx^2)."""
    if backward:
        for _ in range(2):
            explicit_part(u, rhs, 1.0, tau / 2.0, r)
            tridiag_step(u, rhs, cp, dp, 1.0, tau / 2.0, r)
    else:
        explicit_part(u, rhs, 0.5, tau, r)
        tridiag_step(u, rhs, cp, dp, 0.5, tau, r)


@njit(cache=True)
def front_index(u, level):
    """Largest index with u >= level, or -1."""
    for j in range(u.shape[0] - 1, -1, -1):
        if u[j] >= level:
            return j
    return -1


def interp_front(x: np.ndarray, logu: np.ndarray, ln_level: float) -> float:
    """Largest x with ln u >= ln_level, linearly refined in ln u."""
    idx = np.nonzero(logu >= ln_level)[0]
    if idx.size == 0:
        return -math.inf
    j = int(idx[-1])
    if j + 1 >= x.size:
        return float(x[j])
    l0, l1 = logu[j], logu[j + 1]
    if not np.isfinite(l1) or l0 == l1:
        return float(x[j])
    frac = (l0 - ln_level) / (l0 - l1)
    return float(x[j] + frac * (x[j + 1] - x[j]))


@dataclass
class FrontTrace:
    threshold: float
    times: np.ndarray
    front: np.ndarray
    bp_x: np.ndarray
    bp_t: np.ndarray

    def breakpoint(self, x: int) -> float:
        k = np.searchsorted(self.bp_x, x)
        if k < self.bp_x.size and self.bp_x[k] == x:
            return float(self.bp_t[k])
        raise KeyError(x)

    def to_csv(self, path, label: str = "m_bar") -> None:
        with open(path, "w") as fh:
            fh.write(f"t,{label},a\n")
            for t, m in zip(self.times, self.front):
                fh.write(f"{float(t)!r},{float(m)!r},{float(self.threshold)!r}\n")


@dataclass
class SolutionTrajectory:
    """Snapshots of a solution on its moving window.

    values are max-normalised for the PAM (log_offset carries ln of the
    scale) and raw for the F-KPP (log_offset identically 0)."""
    kind: str
    times: np.ndarray
    window_left: np.ndarray
    log_offset: np.ndarray
    values: list
    dx: float
    dt: float
    front_trace: FrontTrace | None = None
    meta: dict = dfield(default_factory=dict)

    def snapshot_index(self, t: float) -> int:
        k = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[k] - t) > 1e-9 * max(1.0, abs(t)):
            raise KeyError(f"time {t} is not a snapshot time")
        return k

    def grid(self, k: int) -> np.ndarray:
        return self.window_left[k] + self.dx * np.arange(self.values[k].size)

    def log_u(self, k: int) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return self.log_offset[k] + np.log(self.values[k])

    def log_u_at(self, t: float, x) -> np.ndarray:
        """ln u at snapshot time t, linearly interpolated in x; -inf outside support."""
        k = self.snapshot_index(t)
        xs = self.grid(k)
        lu = self.log_u(k)
        xq = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.full(xq.shape, -np.inf)
        left_edge = xq < xs[0]
        # left of the window: reflecting boundary, value flat
        out[left_edge] = lu[0]
        inside = (xq >= xs[0]) & (xq <= xs[-1])
        j = np.clip(((xq[inside] - xs[0]) / self.dx).astype(np.int64), 0, xs.size - 2)
        w = (xq[inside] - xs[j]) / self.dx
        a, b = lu[j], lu[j + 1]
        both = np.isfinite(a) & np.isfinite(b)
        val = np.where(w < 0.5, a, b)
        val[both] = (1 - w[both]) * a[both] + w[both] * b[both]
        out[inside] = val
        return out if np.ndim(x) else out[0]

    def u_at(self, t: float, x):
        return np.exp(self.log_u_at(t, x))

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("t,x,ln_u\n")
            for k, t in enumerate(self.times):
                xs = self.grid(k)
                lu = self.log_u(k)
                for x, l in zip(xs, lu):
                    if np.isfinite(l):
                        fh.write(f"{float(t)!r},{float(x)!r},{float(l)!r}\n")


def front_from_snapshot(traj: SolutionTrajectory, level: float, t: float) -> float:
    k = traj.snapshot_index(t)
    return interp_front(traj.grid(k), traj.log_u(k), math.log(level))


def breakpoint_from_snapshots(traj: SolutionTrajectory, x: float, level: float) -> float:
    """First snapshot time with u(t, x) >= level, interpolated in ln u."""
    ln_a = math.log(level)
    prev_t, prev_l = None, None
    for k, t in enumerate(traj.times):
        l = float(traj.log_u_at(t, x))
        if l >= ln_a:
            if prev_t is None or not np.isfinite(prev_l):
                return float(t)
            return float(prev_t + (ln_a - prev_l) / (l - prev_l) * (t - prev_t))
        prev_t, prev_l = t, l
    return math.inf
