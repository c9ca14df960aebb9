"""Hitting-time log-moment generating functions via the decaying ODE solution.

For a potential zeta <= 0 and eta < 0 the function
    phi(y) = E_y[exp(int_0^{H_0} (zeta(B_s) + eta) ds)]
is the decaying solution of phi'' = g phi with g = -2(zeta + eta) > 0.
Unit log-MGFs are log ratios phi(i) / phi(i-1), so a single backward sweep over
[0, n + margin] yields L_1, ..., L_n for a whole block of eta values at once.

The sweep is a Numerov (fourth order) discretisation written as a ratio
recursion rho_j = phi_j / phi_{j-1}, which is stable for the decaying branch
and needs no linear solve.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from .envgen import PotentialField

ETA_MIN = -20.0
ETA_MAX = -1e-3


class DomainError(ValueError):
    pass


class WindowError(ValueError):
    pass


@dataclass(frozen=True)
class BvpConfig:
    dx: float = 0.01
    right_margin: float = 30.0
    eta_fd_step: float = 5e-3

    def __post_init__(self):
        if self.dx <= 0:
            raise ValueError("dx must be positive")
        if self.right_margin < 10:
            raise ValueError("right_margin must be at least 10")
        if not 0 < self.eta_fd_step < 1e-2:
            raise ValueError("eta_fd_step must lie in (0, 1e-2)")

    @property
    def per_unit(self) -> int:
        return max(1, int(round(1.0 / self.dx)))


@dataclass(frozen=True)
class UnitLogMgf:
    index: int
    eta: float
    value: float
    d1: float
    d2: float


@njit(cache=True)
def _log_ratios(zeta, etas, h):
    """ln(phi_j / phi_{j-1}) for j = 1..N-1, one column per eta."""
    n = zeta.shape[0]
    m = etas.shape[0]
    out = np.empty((n - 1, m))
    c = h * h / 12.0
    for col in range(m):
        eta = etas[col]
        gN = -2.0 * (zeta[n - 1] + eta)
        A = 1.0 - c * gN
        B = 2.0 * (1.0 + 5.0 * c * gN)
        rho = (B - math.sqrt(B * B - 4.0 * A * A)) / (2.0 * A)
        a_next = A
        a_here = A
        for j in range(n - 1, 0, -1):
            gj = -2.0 * (zeta[j] + eta)
            gp = -2.0 * (zeta[j - 1] + eta)
            a_here = 1.0 - c * gj
            a_prev = 1.0 - c * gp
            b_here = 2.0 * (1.0 + 5.0 * c * gj)
            if j < n - 1:
                rho = a_prev / (b_here - a_next * rho)
            out[j - 1, col] = math.log(rho)
            a_next = a_here
    return out


@njit(cache=True)
def _log_ratios_d(zeta, etas, h):
    """As _log_ratios, plus exact first and second eta-derivatives of the
    discrete log ratios (forward-mode differentiation of the recursion)."""
    n = zeta.shape[0]
    m = etas.shape[0]
    v0 = np.empty((n - 1, m))
    v1 = np.empty((n - 1, m))
    v2 = np.empty((n - 1, m))
    c = h * h / 12.0
    da = 2.0 * c
    db = -20.0 * c
    for col in range(m):
        eta = etas[col]
        gN = -2.0 * (zeta[n - 1] + eta)
        A = 1.0 - c * gN
        B = 2.0 * (1.0 + 5.0 * c * gN)
        rho = (B - math.sqrt(B * B - 4.0 * A * A)) / (2.0 * A)
        den = 2.0 * A * rho - B
        r1 = -(da * rho * rho - db * rho + da) / den
        r2 = -(4.0 * da * rho * r1 + 2.0 * A * r1 * r1 - 2.0 * db * r1) / den
        a_next = A
        for j in range(n - 1, 0, -1):
            gj = -2.0 * (zeta[j] + eta)
            gp = -2.0 * (zeta[j - 1] + eta)
            a_here = 1.0 - c * gj
            a_prev = 1.0 - c * gp
            b_here = 2.0 * (1.0 + 5.0 * c * gj)
            if j < n - 1:
                D = b_here - a_next * rho
                D1 = db - da * rho - a_next * r1
                D2 = -2.0 * da * r1 - a_next * r2
                rho_new = a_prev / D
                r1_new = (da * D - a_prev * D1) / (D * D)
                r2_new = -a_prev * D2 / (D * D) - 2.0 * D1 * r1_new / D
                rho, r1, r2 = rho_new, r1_new, r2_new
            q = r1 / rho
            v0[j - 1, col] = math.log(rho)
            v1[j - 1, col] = q
            v2[j - 1, col] = r2 / rho - q * q
            a_next = a_here
    return v0, v1, v2


def _check_eta(eta, allow_zero=False):
    e = np.atleast_1d(np.asarray(eta, dtype=float))
    if allow_zero:
        if np.any(e > 0):
            raise DomainError("eta must be <= 0")
    elif np.any(e >= 0):
        raise DomainError("tilting defined for eta<0 only")
    return e


def zeta_grid(field: PotentialField, x0: float, length: float, cfg: BvpConfig):
    n_per = cfg.per_unit
    h = 1.0 / n_per
    n = int(round(length * n_per)) + 1
    y = x0 + h * np.arange(n)
    return y, field.evaluate_zeta(y), h


def unit_table(field: PotentialField, n_units: int, etas, cfg: BvpConfig = BvpConfig(),
               start: int = 1, allow_zero: bool = False) -> np.ndarray:
    """Array (n_units, len(etas)) of L_i(eta) for i = start..start+n_units-1."""
    e = _check_eta(etas, allow_zero)
    length = n_units + cfg.right_margin
    y, z, h = zeta_grid(field, float(start - 1), length, cfg)
    lr = _log_ratios(z, e, h)
    n_per = cfg.per_unit
    core = lr[: n_units * n_per].reshape(n_units, n_per, e.size)
    return core.sum(axis=1)


def log_mgf_unit(field: PotentialField, i: int, eta: float, cfg: BvpConfig = BvpConfig()) -> float:
    if eta >= 0:
        raise DomainError("tilting defined for eta<0 only")
    val = float(unit_table(field, 1, [eta], cfg, start=int(i))[0, 0])
    if not np.isfinite(val):
        raise FloatingPointError(f"non-finite log-MGF at unit {i}, eta={eta}")
    return val


def _log_phi_profile(field, left: float, length: float, eta: float, cfg: BvpConfig):
    y, z, h = zeta_grid(field, left, length, cfg)
    lr = _log_ratios(z, np.array([float(eta)]), h)[:, 0]
    return y, np.concatenate([[0.0], np.cumsum(lr)])


def log_mgf_partial(field: PotentialField, x: float, eta: float, cfg: BvpConfig = BvpConfig()) -> float:
    """ln E_x[exp int_0^{H_{ceil(x)-1}} (zeta + eta)] for non-integer x."""
    if eta >= 0:
        raise DomainError("tilting defined for eta<0 only")
    left = math.ceil(x) - 1.0
    if x == math.ceil(x):
        return log_mgf_unit(field, int(x), eta, cfg)
    y, lphi = _log_phi_profile(field, left, (x - left) + cfg.right_margin, eta, cfg)
    return float(_cubic_at(y, lphi, x))


def _cubic_at(y, f, x):
    h = y[1] - y[0]
    j = int(math.floor((x - y[0]) / h))
    j = min(max(j, 1), y.size - 3)
    t = (x - y[j]) / h
    if abs(t) < 1e-12:
        return f[j]
    f0, f1, f2, f3 = f[j - 1], f[j], f[j + 1], f[j + 2]
    # Lagrange cubic on nodes -1, 0, 1, 2
    return (-t * (t - 1) * (t - 2) / 6.0 * f0 + (t + 1) * (t - 1) * (t - 2) / 2.0 * f1
            - (t + 1) * t * (t - 2) / 2.0 * f2 + (t + 1) * t * (t - 1) / 6.0 * f3)


def log_mgf_avg(field: PotentialField, x: float, eta: float, cfg: BvpConfig = BvpConfig()) -> float:
    if x < 1:
        raise ValueError("x must be >= 1")
    if eta >= 0:
        raise DomainError("tilting defined for eta<0 only")
    n = int(math.floor(x))
    total = float(unit_table(field, n, [eta], cfg)[:, 0].sum())
    if x > n:
        total += log_mgf_partial(field, x, eta, cfg)
    return total / x


def fd_etas(eta, cfg: BvpConfig = BvpConfig()):
    """Stencil eta values (eta, eta+-h, eta+-h/2) for Richardson differences."""
    e = np.atleast_1d(np.asarray(eta, dtype=float))
    h = cfg.eta_fd_step * np.maximum(np.abs(e), 1e-3)
    return np.stack([e, e + h, e - h, e + h / 2, e - h / 2], axis=-1), h


def fd_combine(vals, h):
    """Richardson-extrapolated first and second derivatives from stencil values."""
    f0, fp, fm, fp2, fm2 = (vals[..., k] for k in range(5))
    d1h = (fp - fm) / (2 * h)
    d1h2 = (fp2 - fm2) / h
    d1 = (4 * d1h2 - d1h) / 3
    d2h = (fp - 2 * f0 + fm) / (h * h)
    d2h2 = (fp2 - 2 * f0 + fm2) / (h * h / 4)
    d2 = (4 * d2h2 - d2h) / 3
    return d1, d2


def unit_table_with_derivs(field: PotentialField, n_units: int, etas, cfg: BvpConfig = BvpConfig(),
                           start: int = 1, method: str = "fd", allow_zero: bool = False):
    """Values, first and second eta-derivatives of L_i for all units and etas.

    method="fd" uses Richardson-extrapolated central differences in eta;
    method="exact" differentiates the discrete recursion itself.
    """
    e = np.atleast_1d(np.asarray(etas, dtype=float))
    if method == "exact":
        _check_eta(e, allow_zero)
        y, z, hh = zeta_grid(field, float(start - 1), n_units + cfg.right_margin, cfg)
        n_per = cfg.per_unit
        outs = []
        for arr in _log_ratios_d(z, e, hh):
            outs.append(arr[: n_units * n_per].reshape(n_units, n_per, e.size).sum(axis=1))
        return tuple(outs)
    if method != "fd":
        raise ValueError("method must be 'fd' or 'exact'")
    st, h = fd_etas(e, cfg)
    if np.any(st >= 0):
        raise DomainError("finite-difference stencil crosses eta=0")
    tab = unit_table(field, n_units, st.ravel(), cfg, start=start).reshape(n_units, e.size, 5)
    d1, d2 = fd_combine(tab, h[None, :])
    return tab[..., 0], d1, d2


def d_log_mgf(field: PotentialField, i: int, eta: float, order: int, cfg: BvpConfig = BvpConfig(),
              method: str = "fd") -> float:
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    st, h = fd_etas(eta, cfg)
    if np.any(st >= 0):
        raise DomainError("finite-difference stencil crosses eta=0")
    v, d1, d2 = unit_table_with_derivs(field, 1, [eta], cfg, start=int(i), method=method)
    return float(d1[0, 0] if order == 1 else d2[0, 0])


def unit_log_mgf(field: PotentialField, i: int, eta: float, cfg: BvpConfig = BvpConfig()) -> UnitLogMgf:
    v, d1, d2 = unit_table_with_derivs(field, 1, [eta], cfg, start=int(i))
    return UnitLogMgf(int(i), float(eta), float(v[0, 0]), float(d1[0, 0]), float(d2[0, 0]))


# ---------------------------------------------------------------------------
# time-constrained hitting functional


@njit(cache=True)
def _killed_heat(zeta, h, dt, n_steps, n_rannacher, record_steps, record_idx, lam, mu):
    """Solve q_t = q_yy/2 + lam q_y + (zeta + lam^2/2 - mu) q, q(s,0) = exp(-mu s),
    q(0,.) = 0, q = 0 at the far end.

    With lam = mu = 0 this is g_t = g_yy/2 + zeta g with g(.,0) = 1, and in
    general g(t,y) = exp(lam y + mu t) q(t,y), which keeps q of order one
    along the ray y = v t when (lam, mu) are matched to v.
    zeta holds interior nodes y_1..y_M; returns q at record_idx after each of
    the requested step counts (record_steps ascending).
    """
    M = zeta.shape[0]
    g = np.zeros(M)
    out = np.zeros((record_steps.shape[0], record_idx.shape[0]))
    r = 0.5 / (h * h)
    adv = lam / (2.0 * h)
    lo_c = r - adv
    up_c = r + adv
    pot = np.empty(M)
    for j in range(M):
        pot[j] = zeta[j] + 0.5 * lam * lam - mu
    cp = np.empty(M)
    dp = np.empty(M)
    rhs = np.empty(M)
    k = 0
    step = 0
    t_now = 0.0
    while k < record_steps.shape[0] and record_steps[k] == 0:
        for q in range(record_idx.shape[0]):
            out[k, q] = g[record_idx[q]]
        k += 1
    while step < n_steps:
        if step < n_rannacher:
            sub = 2
            theta = 1.0
        else:
            sub = 1
            theta = 0.5
        tau = dt / sub
        for _ in range(sub):
            b_old = math.exp(-mu * t_now)
            b_new = math.exp(-mu * (t_now + tau))
            for j in range(M):
                left = g[j - 1] if j > 0 else b_old
                right = g[j + 1] if j < M - 1 else 0.0
                ag = lo_c * left - 2.0 * r * g[j] + up_c * right + pot[j] * g[j]
                rhs[j] = g[j] + (1.0 - theta) * tau * ag
            rhs[0] += theta * tau * lo_c * b_new
            lo_off = -theta * tau * lo_c
            up_off = -theta * tau * up_c
            for j in range(M):
                diag = 1.0 - theta * tau * (-2.0 * r + pot[j])
                if j == 0:
                    cp[j] = up_off / diag
                    dp[j] = rhs[j] / diag
                else:
                    den = diag - lo_off * cp[j - 1]
                    cp[j] = up_off / den
                    dp[j] = (rhs[j] - lo_off * dp[j - 1]) / den
            g[M - 1] = dp[M - 1]
            for j in range(M - 2, -1, -1):
                g[j] = dp[j] - cp[j] * g[j + 1]
            for j in range(M):
                if g[j] < 1e-300:
                    g[j] = 0.0
            t_now += tau
        step += 1
        while k < record_steps.shape[0] and record_steps[k] == step:
            for q in range(record_idx.shape[0]):
                out[k, q] = g[record_idx[q]]
            k += 1
    return out


@dataclass(frozen=True)
class ParabolicConfig:
    dy: float = 0.025
    dt: float = 0.01
    margin: float = 30.0
    n_rannacher: int = 4


def hitting_time_profile(field: PotentialField, xs, ts, pcfg: ParabolicConfig = ParabolicConfig(),
                         lam: float = 0.0, mu: float = 0.0, log: bool = False):
    """g(t_k, x_k) = E_x[exp(int_0^{H_0} zeta); H_0 <= t] for paired (x_k, t_k).

    With log=True returns ln g, computed through the rescaled unknown
    q = g exp(-lam y - mu t); choose lam = L(eta), mu = -eta for the tilt eta
    matched to the ratio x/t to avoid under- and overflow."""
    xs = np.atleast_1d(np.asarray(xs, dtype=float))
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if xs.shape != ts.shape:
        raise ValueError("xs and ts must pair up")
    if np.any(ts < 0) or np.any(xs <= 0):
        raise ValueError("need x > 0 and t >= 0")
    h = pcfg.dy
    M = int(math.ceil((xs.max() + pcfg.margin) / h))
    y = h * np.arange(1, M + 1)
    z = field.evaluate_zeta(y)
    steps = np.rint(ts / pcfg.dt).astype(np.int64)
    order = np.argsort(steps, kind="stable")
    idx_all = np.rint(xs / h).astype(np.int64) - 1
    # record every node of interest at every requested step, then pick pairs
    uniq_steps, inv = np.unique(steps[order], return_inverse=True)
    uniq_idx, inv_idx = np.unique(idx_all, return_inverse=True)
    tab = _killed_heat(z, h, pcfg.dt, int(uniq_steps.max()), pcfg.n_rannacher,
                       uniq_steps.astype(np.int64), uniq_idx.astype(np.int64), float(lam), float(mu))
    res = np.empty(xs.size)
    res[order] = tab[inv, inv_idx[order]]
    if log:
        with np.errstate(divide="ignore"):
            return np.log(res) + lam * xs + mu * steps * pcfg.dt
    if lam or mu:
        return res * np.exp(lam * xs + mu * steps * pcfg.dt)
    return res


def hitting_time_functional(field: PotentialField, x: float, t: float, k_win: float = 1.0,
                            pcfg: ParabolicConfig = ParabolicConfig()):
    """Return (g(t, x), g(t - k_win, x)).

    Y^approx = g(t,x) - g(t-k_win,x) and Y^> = g(t-k_win,x).
    """
    if t <= k_win:
        raise WindowError("t must exceed the window width k_win")
    if x <= 0 or t <= 0:
        raise ValueError("need x, t > 0")
    vals = hitting_time_profile(field, [x, x], [t, t - k_win], pcfg)
    return float(vals[0]), float(vals[1])
