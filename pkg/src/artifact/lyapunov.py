"""Annealed log-MGF L(eta), its Legendre transform, the Lyapunov exponent and
the front velocities v0 and v_c, plus the variance constants of the CLTs."""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.optimize import brentq, minimize_scalar

from .envgen import PotentialField, PotentialSpec
from .hitting import (BvpConfig, DomainError, ETA_MAX, ETA_MIN, _log_ratios_d,
                      unit_table_with_derivs, zeta_grid)
from .seeding import derive_seed


class NoRootError(ValueError):
    pass


class RangeError(ValueError):
    pass


class InconsistencyError(ValueError):
    pass


class DegenerateError(ValueError):
    pass


def default_eta_grid(n: int = 400, lo: float = ETA_MIN, hi: float = ETA_MAX) -> np.ndarray:
    """Descending log-spaced grid from -|hi| down to lo."""
    return -np.logspace(math.log10(-hi), math.log10(-lo), n)


def env_fields(spec: PotentialSpec, n_env: int):
    if spec.homogeneous:
        return [PotentialField(spec)] * n_env
    return [PotentialField(spec.with_seed(derive_seed(spec.seed, "environment", k)))
            for k in range(n_env)]


@dataclass
class LyapunovProfile:
    spec: PotentialSpec
    eta_grid: np.ndarray
    L_table: np.ndarray
    dL_table: np.ndarray
    d2L_table: np.ndarray
    L_se: np.ndarray
    dL_se: np.ndarray
    n_env: int
    n_units: int
    L0: float = 0.0
    dL0: float = math.inf
    L0_se: float = 0.0
    dL0_se: float = 0.0
    vc: float = 0.0
    vc_direct: float = 0.0
    v0: float = float("nan")
    v0_var: float = float("nan")
    v_grid: np.ndarray = dfield(default_factory=lambda: np.empty(0))
    eta_bar_table: np.ndarray = dfield(default_factory=lambda: np.empty(0))
    legendre_table: np.ndarray = dfield(default_factory=lambda: np.empty(0))
    lambda_table: np.ndarray = dfield(default_factory=lambda: np.empty(0))
    sigma2: np.ndarray = dfield(default_factory=lambda: np.empty(0))
    sigma2_se: np.ndarray = dfield(default_factory=lambda: np.empty(0))
    sigma_tilde2: float = float("nan")
    sigma_tilde2_se: float = float("nan")
    fields: list = dfield(default_factory=list, repr=False)
    cfg: BvpConfig = dfield(default_factory=BvpConfig)

    def __post_init__(self):
        # interpolation in s = ln(-eta), ascending in s
        s = np.log(-self.eta_grid)
        order = np.argsort(s)
        self._s = s[order]
        eta = self.eta_grid[order]
        self._L = CubicHermiteSpline(self._s, self.L_table[order], self.dL_table[order] * eta)
        self._dL = CubicHermiteSpline(self._s, self.dL_table[order], self.d2L_table[order] * eta)

    # -- interpolants -------------------------------------------------------
    @property
    def eta_lo(self) -> float:
        return float(self.eta_grid.min())

    @property
    def eta_hi(self) -> float:
        return float(self.eta_grid.max())

    def L(self, eta):
        return self._L(np.log(-np.asarray(eta, dtype=float)))

    def dL(self, eta):
        return self._dL(np.log(-np.asarray(eta, dtype=float)))

    @property
    def vel(self) -> bool:
        return bool(self.v0 > self.vc)

    @property
    def v_range(self) -> tuple[float, float]:
        """Velocities whose tilt lies inside the eta grid."""
        lo = 1.0 / float(self.dL(self.eta_hi))
        hi = 1.0 / float(self.dL(self.eta_lo))
        return max(lo, self.vc), hi

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "n_env": self.n_env, "n_units": self.n_units,
            "eta_grid": self.eta_grid.tolist(), "L": self.L_table.tolist(),
            "dL": self.dL_table.tolist(), "d2L": self.d2L_table.tolist(),
            "L_se": self.L_se.tolist(), "dL_se": self.dL_se.tolist(),
            "L0": self.L0, "dL0": self.dL0 if math.isfinite(self.dL0) else None,
            "vc": self.vc, "vc_direct": self.vc_direct,
            "v0": self.v0, "v0_variational": self.v0_var, "vel": self.vel,
            "v_grid": self.v_grid.tolist(), "eta_bar": self.eta_bar_table.tolist(),
            "legendre": self.legendre_table.tolist(), "lambda": self.lambda_table.tolist(),
            "sigma2": self.sigma2.tolist(), "sigma2_se": self.sigma2_se.tolist(),
            "sigma_tilde2": self.sigma_tilde2, "sigma_tilde2_se": self.sigma_tilde2_se,
        }


def _env_tables(f: PotentialField, n_units: int, etas: np.ndarray, cfg: BvpConfig):
    return unit_table_with_derivs(f, n_units, etas, cfg, method="exact")


def _origin_values(f: PotentialField, n_units: int, cfg: BvpConfig):
    """Per-unit L_i(0) and L_i'(0-) evaluated directly at eta = 0."""
    _, z, h = zeta_grid(f, 0.0, n_units + cfg.right_margin, cfg)
    if np.all(z == 0.0):
        return np.zeros(n_units), np.full(n_units, np.inf)
    v0, v1, _ = _log_ratios_d(z, np.array([0.0]), h)
    n_per = cfg.per_unit
    L0 = v0[: n_units * n_per, 0].reshape(n_units, n_per).sum(axis=1)
    d0 = v1[: n_units * n_per, 0].reshape(n_units, n_per).sum(axis=1)
    return L0, d0


def build_profile(spec: PotentialSpec, n_env: int = 8, n_units: int = 100,
                  eta_grid: np.ndarray | None = None, cfg: BvpConfig = BvpConfig(),
                  n_v: int = 60, lag_cutoff: int | None = None,
                  keep_units: bool = False) -> LyapunovProfile:
    eta = default_eta_grid() if eta_grid is None else np.asarray(eta_grid, dtype=float)
    if np.any(eta >= 0):
        raise DomainError("eta grid must be negative")
    fields = env_fields(spec, 1 if spec.homogeneous else n_env)
    Ls, dLs, d2Ls, origin = [], [], [], []
    for f in fields:
        v, d1, d2 = _env_tables(f, n_units, eta, cfg)
        Ls.append(v.mean(axis=0))
        dLs.append(d1.mean(axis=0))
        d2Ls.append(d2.mean(axis=0))
        origin.append(tuple(a.mean() for a in _origin_values(f, n_units, cfg)))
    Ls, dLs, d2Ls = np.array(Ls), np.array(dLs), np.array(d2Ls)
    ne = len(fields)
    se = (lambda a: a.std(axis=0, ddof=1) / math.sqrt(ne)) if ne > 1 else (lambda a: np.zeros(a.shape[1]))
    org = np.array(origin)
    prof = LyapunovProfile(spec=spec, eta_grid=eta, L_table=Ls.mean(axis=0),
                           dL_table=dLs.mean(axis=0), d2L_table=d2Ls.mean(axis=0),
                           L_se=se(Ls), dL_se=se(dLs), n_env=ne, n_units=n_units, cfg=cfg)
    prof.L0 = float(org[:, 0].mean())
    prof.dL0 = float(org[:, 1].mean())
    if ne > 1:
        prof.L0_se = float(org[:, 0].std(ddof=1) / math.sqrt(ne))
        prof.dL0_se = float(org[:, 1].std(ddof=1) / math.sqrt(ne)) if math.isfinite(prof.dL0) else 0.0
    prof.vc = v_c(prof)
    prof.vc_direct = 0.0 if not math.isfinite(prof.dL0) else 1.0 / prof.dL0
    prof.v0 = v0(prof)
    prof.v0_var = v0_variational(prof)
    lo, hi = prof.v_range
    v_start = max(lo, 0.5 * prof.v0) * (1 + 1e-7)
    v_end = min(hi, max(1.5 * prof.v0, 1.5 * v_start))
    prof.v_grid = np.linspace(v_start, v_end, n_v)
    prof.eta_bar_table = np.array([eta_bar(prof, v) for v in prof.v_grid])
    prof.legendre_table = np.array([legendre_star(prof, v) for v in prof.v_grid])
    prof.lambda_table = np.array([lyapunov_exponent(prof, v) for v in prof.v_grid])
    if keep_units or not spec.homogeneous:
        prof.fields = fields
    if spec.homogeneous:
        prof.sigma2 = np.zeros(n_v)
        prof.sigma2_se = np.zeros(n_v)
        prof.sigma_tilde2, prof.sigma_tilde2_se = 0.0, 0.0
    else:
        vs = list(prof.v_grid)
        if prof.vel:
            vs.append(prof.v0)
        res = sigma_v2_fields(prof, vs, fields, n_units, lag_cutoff)
        prof.sigma2 = np.array([r[0] for r in res[:n_v]])
        prof.sigma2_se = np.array([r[1] for r in res[:n_v]])
        if prof.vel:
            s2, s2se = res[-1]
            prof.sigma_tilde2 = sigma_tilde2_from(prof, s2)
            prof.sigma_tilde2_se = sigma_tilde2_from(prof, s2se)
    return prof


def _extrapolate_to_zero(prof: LyapunovProfile, table: np.ndarray) -> float:
    """Quadratic extrapolation to eta = 0 from the three grid points nearest 0."""
    idx = np.argsort(-prof.eta_grid)[:3]
    x = prof.eta_grid[idx]
    y = table[idx]
    c = np.polyfit(x, y, 2)
    return float(np.polyval(c, 0.0))


def v_c(prof: LyapunovProfile, slope_threshold: float = -0.25) -> float:
    """1 / L'(0-); zero when the slope of L' diverges at the origin."""
    idx = np.argsort(-prof.eta_grid)[:3]
    x = -prof.eta_grid[idx]
    y = prof.dL_table[idx]
    slope = np.polyfit(np.log(x), np.log(y), 1)[0]
    if slope < slope_threshold:
        return 0.0
    d0 = _extrapolate_to_zero(prof, prof.dL_table)
    if not math.isfinite(d0) or d0 <= 0:
        return 0.0
    return 1.0 / d0


def eta_bar(prof: LyapunovProfile, v: float) -> float:
    """Unique eta < 0 with L'(eta) = 1/v."""
    if v <= prof.vc:
        raise NoRootError("below critical velocity")
    target = 1.0 / v
    lo, hi = prof.eta_lo, prof.eta_hi
    flo = float(prof.dL(lo)) - target
    fhi = float(prof.dL(hi)) - target
    if flo > 0 or fhi < 0:
        raise NoRootError(f"velocity {v} outside the tabulated eta range")
    r = brentq(lambda e: float(prof.dL(e)) - target, lo, hi, xtol=1e-15, rtol=1e-15, maxiter=500)
    return float(r)


def legendre_star(prof: LyapunovProfile, v: float) -> float:
    e = eta_bar(prof, v)
    return float(e / v - prof.L(e))


def legendre_sup(prof: LyapunovProfile, v: float) -> float:
    """sup over the grid of eta/v - L(eta), refined by a bounded 1-d search."""
    vals = prof.eta_grid / v - prof.L_table
    k = int(np.argmax(vals))
    lo = prof.eta_grid[min(k + 1, prof.eta_grid.size - 1)]
    hi = prof.eta_grid[max(k - 1, 0)]
    lo, hi = min(lo, hi), max(lo, hi)
    res = minimize_scalar(lambda e: -(e / v - float(prof.L(e))), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-12})
    return float(max(vals[k], -res.fun))


def lyapunov_exponent(prof: LyapunovProfile, v: float) -> float:
    es = prof.spec.es
    if v < 0:
        raise ValueError("v must be non-negative")
    if v == 0:
        return float(es)
    if prof.vc > 0 and v <= prof.vc:
        return float(es + v * prof.L0)
    v_lo = 1.0 / float(prof.dL(prof.eta_hi))
    if v < v_lo:
        # tilt beyond the grid end: chord between (0, es) and (v_lo, Lambda(v_lo))
        lam_lo = es - v_lo * legendre_star(prof, v_lo * (1 + 1e-12))
        return float(es + (lam_lo - es) * v / v_lo)
    return float(es - v * legendre_star(prof, v))


def v0(prof: LyapunovProfile, v_max: float | None = None) -> float:
    es = prof.spec.es
    hi = 1.0 / float(prof.dL(prof.eta_lo)) if v_max is None else v_max
    f_hi = lyapunov_exponent(prof, hi)
    if f_hi > 0:
        raise RangeError("Lambda does not change sign on [0, v_max]; extend the eta grid")
    r = brentq(lambda v: lyapunov_exponent(prof, v), 1e-12, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    if abs(lyapunov_exponent(prof, r)) > 1e-6 * es:
        raise RangeError("root residual too large")
    return float(r)


def v0_variational(prof: LyapunovProfile) -> float:
    """inf over eta <= 0 of (eta - es) / L(eta), including the endpoint eta = 0."""
    es = prof.spec.es
    vals = (prof.eta_grid - es) / prof.L_table
    k = int(np.argmin(vals))
    lo = prof.eta_grid[min(k + 1, prof.eta_grid.size - 1)]
    hi = prof.eta_grid[max(k - 1, 0)]
    lo, hi = min(lo, hi), max(lo, hi)
    res = minimize_scalar(lambda e: (e - es) / float(prof.L(e)), bounds=(lo, hi),
                          method="bounded", options={"xatol": 1e-13})
    best = min(float(vals[k]), float(res.fun))
    if prof.L0 < 0:
        best = min(best, -es / prof.L0)
    return float(best)


def v0_variational_direct(spec: PotentialSpec, n_env: int = 8, n_units: int = 100,
                          cfg: BvpConfig = BvpConfig(), xatol: float = 1e-6) -> float:
    """inf over eta <= 0 of (eta - es) / L(eta) with L evaluated afresh at every
    trial eta by averaging the boundary-value solutions (no tables, no splines)."""
    es = spec.es
    fields = env_fields(spec, 1 if spec.homogeneous else n_env)

    def L_at(eta):
        return float(np.mean([_unit_values_at(f, n_units, eta, cfg).mean() for f in fields]))

    res = minimize_scalar(lambda e: (e - es) / L_at(e), bounds=(ETA_MIN, ETA_MAX),
                          method="bounded", options={"xatol": xatol})
    best = float(res.fun)
    L0 = float(np.mean([_origin_values(f, n_units, cfg)[0].mean() for f in fields]))
    if L0 < 0:
        best = min(best, -es / L0)
    return best


# -- variance constants ------------------------------------------------------

def _unit_values_at(f: PotentialField, n_units: int, eta: float, cfg: BvpConfig) -> np.ndarray:
    v, _, _ = unit_table_with_derivs(f, n_units, [eta], cfg, method="exact")
    return v[:, 0]


def sigma_v2_fields(prof: LyapunovProfile, v, fields, n_units: int,
                    lag_cutoff: int | None = None):
    """Long-run variance of V_i = eta_bar/v - L_i(eta_bar) for one v or a list of v."""
    scalar = np.ndim(v) == 0
    vs = np.atleast_1d(np.asarray(v, dtype=float))
    es = np.array([eta_bar(prof, vv) for vv in vs])
    if lag_cutoff is None:
        lag_cutoff = default_lag_cutoff(prof.spec)
    tabs = [unit_table_with_derivs(f, n_units, es, prof.cfg, method="exact")[0] for f in fields]
    out = []
    for k, vv in enumerate(vs):
        series = np.array([es[k] / vv - t[:, k] for t in tabs])
        out.append(sigma2_from_series(series, lag_cutoff))
    return out[0] if scalar else out


def default_lag_cutoff(spec: PotentialSpec) -> int:
    return int(math.ceil(4 * max(spec.dependence_range, 1.0)))


def sigma2_from_series(series: np.ndarray, lag_cutoff: int):
    """Long-run variance of rows of a stationary series with a pooled mean."""
    series = np.atleast_2d(series)
    mu = series.mean()
    c = series - mu
    n = c.shape[1]
    if lag_cutoff >= n:
        raise ValueError("lag_cutoff must be smaller than the series length")
    per = []
    for row in c:
        s = np.dot(row, row) / n
        for k in range(1, lag_cutoff + 1):
            s += 2.0 * np.dot(row[:-k], row[k:]) / (n - k)
        per.append(s)
    per = np.array(per)
    est = float(per.mean())
    se = float(per.std(ddof=1) / math.sqrt(per.size)) if per.size > 1 else 0.0
    if est < -3 * se and est < -1e-12:
        raise InconsistencyError(f"negative variance estimate {est} (se {se})")
    return est, se


def sigma_v2(spec: PotentialSpec, v: float, n_units: int = 200, lag_cutoff: int | None = None,
             n_env: int = 8, prof: LyapunovProfile | None = None):
    if spec.homogeneous:
        return 0.0, 0.0
    if prof is None:
        prof = build_profile(spec, n_env=n_env, n_units=n_units)
    return sigma_v2_fields(prof, float(v), env_fields(spec, n_env), n_units, lag_cutoff)


def sigma_tilde2_from(prof: LyapunovProfile, s2: float) -> float:
    Lb = float(prof.L(eta_bar(prof, prof.v0)))
    if abs(Lb) < 1e-6:
        raise DegenerateError("L(eta_bar(v0)) vanishes")
    return float(s2 * prof.v0 / Lb ** 2)


def sigma_tilde2(prof: LyapunovProfile) -> float:
    return prof.sigma_tilde2


def expected_log_mgf(spec: PotentialSpec, eta: float, n_env: int = 8, n_units: int = 100,
                     cfg: BvpConfig = BvpConfig()):
    if eta >= 0:
        raise DomainError("tilting defined for eta<0 only")
    fields = env_fields(spec, 1 if spec.homogeneous else n_env)
    means = np.array([_unit_values_at(f, n_units, eta, cfg).mean() for f in fields])
    if means.size == 1:
        return float(means[0]), 0.0
    return float(means.mean()), float(means.std(ddof=1) / math.sqrt(means.size))


# -- empirical tilt -----------------------------------------------------------

@dataclass(frozen=True)
class TiltSolution:
    x: float
    v: float
    eta_x: float
    found: bool


class EmpiricalLogMgf:
    """Cumulative per-unit log-MGF data of one environment, for L-bar_n with integer n."""

    def __init__(self, field: PotentialField, n_max: int, cfg: BvpConfig = BvpConfig()):
        self.field = field
        self.n_max = int(n_max)
        self.cfg = cfg
        _, self._z, self._h = zeta_grid(field, 0.0, self.n_max + cfg.right_margin, cfg)

    def at(self, n: int, etas):
        """(L-bar_n, L-bar_n', L-bar_n'') at the given etas."""
        e = np.atleast_1d(np.asarray(etas, dtype=float))
        return self.all_n(e, [n])[0]

    def all_n(self, etas, ns):
        e = np.atleast_1d(np.asarray(etas, dtype=float))
        arrs = _log_ratios_d(self._z, e, self._h)
        n_per = self.cfg.per_unit
        out = []
        cums = [np.cumsum(a[: self.n_max * n_per], axis=0) for a in arrs]
        for n in ns:
            k = int(n) * n_per - 1
            out.append(tuple(c[k] / n for c in cums))
        return out

    def tilt(self, n: int, v: float, tol: float = 1e-12) -> TiltSolution:
        target = 1.0 / v
        f = lambda e: float(self.at(n, [e])[1][0]) - target
        if f(ETA_MAX) < 0:
            return TiltSolution(float(n), float(v), 0.0, False)
        if f(ETA_MIN) > 0:
            return TiltSolution(float(n), float(v), ETA_MIN, False)
        r = brentq(f, ETA_MIN, ETA_MAX, xtol=tol, rtol=1e-14, maxiter=300)
        return TiltSolution(float(n), float(v), float(r), True)


def empirical_tilt(field: PotentialField, x: int, v: float, cfg: BvpConfig = BvpConfig()) -> TiltSolution:
    if x < 1 or v <= 0:
        raise ValueError("need x >= 1 and v > 0")
    if int(x) != x:
        raise ValueError("empirical tilt is implemented for integer x")
    return EmpiricalLogMgf(field, int(x), cfg).tilt(int(x), v)


def empirical_legendre(emp: EmpiricalLogMgf, n: int, v: float):
    """(L-bar_n)*(1/v) and the tilt; None when no negative root exists."""
    t = emp.tilt(n, v)
    if not t.found:
        return None, t
    Lb = float(emp.at(n, [t.eta_x])[0][0])
    return t.eta_x / v - Lb, t


def empirical_legendre_process(field: PotentialField, v: float, x: int, prof: LyapunovProfile,
                               cfg: BvpConfig = BvpConfig()):
    """W_x^v(1) = sqrt(x) ((L-bar_x)*(1/v) - L*(1/v)); (nan, False) if no tilt."""
    emp = EmpiricalLogMgf(field, int(x), cfg)
    lstar_x, t = empirical_legendre(emp, int(x), v)
    if lstar_x is None:
        return float("nan"), False
    return float(math.sqrt(x) * (lstar_x - legendre_star(prof, v))), True
