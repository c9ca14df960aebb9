"""Executable acceptance suite: one function per numbered criterion.

Each function returns a CriterionResult whose checks carry the measured value
and the pre-registered threshold.  The cli `verify` command and
tests/test_acceptance.py both call these.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield
from typing import Callable

import numpy as np

from .bbmre import OffspringLaw, estimate_both, tube_moments
from .envgen import PotentialField, PotentialSpec
from .experiments import (RANDOM_MEDIUM, run_exact_ld_diag, run_front_clt, run_homogeneous_baseline,
                          run_log_gap, run_tilt_concentration, run_vc_scan)
from .hitting import unit_table
from .kppsolve import check_sc, dominating_gm, gm_family, offspring_to_F, solve_kpp
from .lyapunov import (build_profile, eta_bar, legendre_star, lyapunov_exponent, v0_variational_direct)
from .pamsolve import fk_mc_pam, solve_pam
from .pdecore import GridConfig, InitialCondition
from .seeding import derive_seed


@dataclass
class Check:
    name: str
    passed: bool
    value: object = None
    threshold: str = ""


@dataclass
class CriterionResult:
    cid: int
    title: str
    checks: list = dfield(default_factory=list)
    note: str = ""

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def add(self, name: str, passed, value=None, threshold: str = "") -> None:
        self.checks.append(Check(name, bool(passed), value, threshold))

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        failed = [c.name for c in self.checks if not c.passed]
        tail = f" (failed: {'; '.join(failed)})" if failed else ""
        return f"criterion {self.cid:2d} {tag}: {self.title}{tail}"


def _rel(a, b) -> float:
    return abs(a - b) / abs(b)


# -- 1: closed forms -------------------------------------------------------------

def criterion_1(es_values=(1.0, 2.0)) -> CriterionResult:
    res = CriterionResult(1, "closed-form Lyapunov suite for constant potentials")
    etas = -np.linspace(0.05, 5.0, 40)
    for es in es_values:
        spec = PotentialSpec.constant(es)
        field = PotentialField(spec)
        L = unit_table(field, 4, etas).mean(axis=0)
        exact = -np.sqrt(-2.0 * etas)
        res.add(f"L(eta), es={es}", np.max(np.abs(L / exact - 1)) <= 1e-4, float(np.max(np.abs(L / exact - 1))), "<= 1e-4")
        prof = build_profile(spec, n_units=20)
        v0 = math.sqrt(2 * es)
        worst = 0.0
        for v in np.linspace(0.5 * v0, 1.4 * v0, 7):
            worst = max(worst, _rel(eta_bar(prof, v), -v * v / 2), _rel(legendre_star(prof, v), v / 2),
                        abs(lyapunov_exponent(prof, v) - (es - v * v / 2)) / es)
        res.add(f"eta_bar, L*, Lambda, es={es}", worst <= 1e-3, worst, "<= 1e-3")
        res.add(f"v0, es={es}", _rel(prof.v0, v0) <= 1e-3, prof.v0, f"{v0} within 1e-3")
        res.add(f"v_c = 0, es={es}", prof.vc == 0.0, prof.vc, "== 0")
        res.add(f"sigma^2 = 0, es={es}", bool(np.all(prof.sigma2 == 0.0)), float(np.max(np.abs(prof.sigma2))), "== 0")
    return res


# -- 2: two routes to v0 -----------------------------------------------------------

def criterion_2(n_seeds: int = 10, n_env: int = 8, n_units: int = 100, base_seed: int = 2) -> CriterionResult:
    res = CriterionResult(2, "v0: root of Lambda vs variational formula on matern seeds")
    base = PotentialSpec.from_dict(RANDOM_MEDIUM)
    for i in range(n_seeds):
        spec = base.with_seed(derive_seed(base_seed, "v0_cross", i))
        prof = build_profile(spec, n_env=n_env, n_units=n_units)
        var = v0_variational_direct(spec, n_env=n_env, n_units=n_units)
        r = _rel(prof.v0, var)
        res.add(f"seed {i}", r <= 0.01, r, "<= 0.01")
    return res


# -- 3, 4: moment formulas against PDEs ------------------------------------------------

FINE_GRID = GridConfig(dx=0.02, dt=0.001, w_left=20.0, w_right=30.0, recenter=False)
PROBE_X = (0.0, 1.0, 2.0)
PROBE_T = (1.0, 2.0)


def validation_fields(base_seed: int = 3):
    """(label, field, law) pairs used by the representation checks."""
    binary = OffspringLaw((2,), (1.0,))
    split = OffspringLaw((1, 3), (0.5, 0.5))
    return [("xi=1, p2=1", PotentialField(PotentialSpec.constant(1.0)), binary),
            ("matern(1, 0.5, 0.5), p1=p3=1/2",
             PotentialField(PotentialSpec.matern(a=1.0, ei=0.5, epsilon=0.5, seed=derive_seed(base_seed, "validation"))),
             split)]


def representation_table(n_reps: int = 100_000, seed: int = 4, grid: GridConfig = FINE_GRID) -> list:
    """Per probe: MC survival and mean count next to the F-KPP and PAM values."""
    rows = []
    ic = InitialCondition("heaviside")
    for label, field, law in validation_fields():
        T = max(PROBE_T)
        pam = solve_pam(field, ic, grid, T)
        kpp = solve_kpp(field, offspring_to_F(law.to_dict()), ic, grid, T)
        for t in PROBE_T:
            for x in PROBE_X:
                w, w_se, m, m_se = estimate_both(field, law, x, t, n_reps, seed=derive_seed(seed, label, int(10 * t + x)))
                rows.append({"field": label, "x": x, "t": t, "mc_w": w, "mc_w_se": w_se,
                             "pde_w": float(kpp.u_at(t, x)), "mc_mean": m, "mc_mean_se": m_se,
                             "pde_u": float(pam.u_at(t, x))})
    return rows


def criterion_3(rows: list) -> CriterionResult:
    res = CriterionResult(3, "many-to-one: BBMRE mean count vs PAM")
    for r in rows:
        z = abs(r["mc_mean"] - r["pde_u"]) / r["mc_mean_se"]
        res.add(f"{r['field']} x={r['x']} t={r['t']}", z <= 3, z, "|diff| <= 3 SE")
    return res


def criterion_4(rows: list) -> CriterionResult:
    res = CriterionResult(4, "McKean: BBMRE survival probability vs F-KPP")
    for r in rows:
        z = abs(r["mc_w"] - r["pde_w"]) / r["mc_w_se"]
        res.add(f"{r['field']} x={r['x']} t={r['t']}", z <= 3, z, "|diff| <= 3 SE")
    return res


# -- 5: second moment in a tube -------------------------------------------------------

def criterion_5(n_reps: int = 100_000, seed: int = 5) -> CriterionResult:
    res = CriterionResult(5, "many-to-two: tube second moment vs quadrature")
    law = OffspringLaw((2,), (1.0,))
    field = validation_fields()[1][1]
    for lo, hi in ((-1.0, 1.0), (-math.inf, math.inf)):
        for t in (1.0, 2.0):
            mc1, mc2, fk1, fk2, se1, se2 = tube_moments(field, law, 0.0, t, lo, hi, n_reps,
                                                        seed=derive_seed(seed, f"{lo},{hi}", int(t)))
            z = abs(mc2 - fk2) / se2
            res.add(f"barriers ({lo}, {hi}) t={t}", z <= 3, z, "|diff| <= 3 SE")
    return res


# -- 6: Feynman-Kac Monte Carlo ----------------------------------------------------------

def criterion_6(n_paths: int = 100_000, seed: int = 6) -> CriterionResult:
    res = CriterionResult(6, "Feynman-Kac Monte Carlo vs PAM solver at t=2")
    field = validation_fields()[1][1]
    ic = InitialCondition("heaviside")
    traj = solve_pam(field, ic, FINE_GRID, 2.0)
    for x in (1.0,):
        est, se = fk_mc_pam(field, 2.0, x, ic, n_paths=n_paths, dt_path=0.002, seed=seed)
        pde = float(traj.u_at(2.0, x))
        z = abs(est - pde) / se
        res.add(f"x={x}", z <= 3, z, "|diff| <= 3 SE")
    return res


# -- 7: homogeneous fronts -----------------------------------------------------------------

def criterion_7(report=None) -> CriterionResult:
    rep = report or run_homogeneous_baseline()
    res = CriterionResult(7, "homogeneous fronts, ln-corrections and gap slope")
    for v in rep.verdicts_for("7"):
        res.add(v.check, v.passed, v.value, v.threshold)
    return res


# -- 8, 9: random medium fronts and log-gap ---------------------------------------------------

def random_gap_report(n_seeds: int = 10, jobs: int = 1):
    return run_log_gap({"potential": RANDOM_MEDIUM, "n_seeds": n_seeds, "T": 300.0, "t_fit": [20.0, 300.0]},
                       jobs=jobs)


def criterion_8(report) -> CriterionResult:
    res = CriterionResult(8, "random-medium front speed vs v0 at t=200")
    for v in report.verdicts_for("8"):
        res.add(v.check, v.passed, v.value, v.threshold)
    return res


def criterion_9(report) -> CriterionResult:
    res = CriterionResult(9, "log-gap: non-negative gap, no t-linear trend")
    for v in report.verdicts_for("9"):
        res.add(v.check, v.passed, v.value, v.threshold)
    return res


def _from_report(cid: int, title: str, rep) -> CriterionResult:
    res = CriterionResult(cid, title)
    for v in rep.verdicts_for(str(cid)):
        res.add(v.check, v.passed, v.value, v.threshold)
    return res


def criterion_10(jobs: int = 1) -> CriterionResult:
    return _from_report(10, "tilt concentration scaling", run_tilt_concentration(jobs=jobs))


def criterion_11(jobs: int = 1) -> CriterionResult:
    return _from_report(11, "front CLT at n=200", run_front_clt(jobs=jobs))


def criterion_12(jobs: int = 1) -> CriterionResult:
    return _from_report(12, "exact large-deviation sandwich", run_exact_ld_diag(jobs=jobs))


def criterion_13(jobs: int = 1) -> CriterionResult:
    return _from_report(13, "v_c > v0 regime and its reversal", run_vc_scan(jobs=jobs))


# -- 14: invariants ---------------------------------------------------------------------------

def invariant_suite(seed: int = 14) -> CriterionResult:
    with np.errstate(invalid="ignore"):  # -inf - -inf far ahead of the front; filtered below
        return _invariant_suite(seed)


def _invariant_suite(seed: int) -> CriterionResult:
    res = CriterionResult(14, "solver invariants")
    spec = PotentialSpec.matern(a=1.0, ei=0.5, epsilon=0.5, seed=derive_seed(seed, "invariants"))
    field = PotentialField(spec)
    grid = GridConfig(w_left=20.0, w_right=30.0)
    T = 10.0
    heav, box = InitialCondition("heaviside"), InitialCondition("box", delta_prime=0.5)
    scaled = InitialCondition("scaled_heaviside", c_prime=2.0)
    pam_h = solve_pam(field, heav, grid, T)
    pam_b = solve_pam(field, box, grid, T)
    # linearity is checked on a fixed window: recentering places the two windows differently
    fixed = GridConfig(w_left=20.0, w_right=30.0, recenter=False)
    pam_s = solve_pam(field, scaled, fixed, T)
    pam_hf = solve_pam(field, heav, fixed, T)
    split = offspring_to_F({1: 0.5, 3: 0.5})
    kpp_h = solve_kpp(field, split, heav, grid, T)
    kpp_b = solve_kpp(field, split, box, grid, T)
    M = dominating_gm(split)
    kpp_g = solve_kpp(field, gm_family(M), heav, grid, T)

    lo = min(float(np.min(v)) for v in kpp_h.values)
    hi = max(float(np.max(v)) for v in kpp_h.values)
    res.add("0 <= w <= 1", lo >= 0.0 and hi <= 1.0, [lo, hi], "[0, 1]")

    def worst(a, b, log=False):
        # max over common snapshot nodes of a - b (or ln a - ln b)
        out = -math.inf
        for k, t in enumerate(a.times):
            xs = a.grid(k)
            if log:
                d = a.log_u(k) - b.log_u_at(t, xs)
            else:
                d = a.values[k] - b.u_at(t, xs) if b.kind == "kpp" else a.values[k] - np.exp(b.log_u_at(t, xs))
            d = d[np.isfinite(d)]
            if d.size:
                out = max(out, float(d.max()))
        return out

    g = worst(kpp_g, kpp_h)
    res.add(f"comparison in F: w^G_{M} <= w^F", g <= 1e-8, g, "<= 1e-8")
    g = worst(kpp_b, kpp_h)
    res.add("monotone in data: box <= heaviside (F-KPP)", g <= 1e-8, g, "<= 1e-8")
    d = -math.inf
    for k, t in enumerate(kpp_h.times):
        xs = kpp_h.grid(k)
        diff = kpp_h.values[k] - np.exp(pam_h.log_u_at(t, xs))
        d = max(d, float(diff.max()))
    res.add("domination u >= w", d <= 1e-8, d, "<= 1e-8")
    g = worst(pam_b, pam_h, log=True)
    res.add("sandwich: u^box <= delta' u^heaviside", g <= math.log(box.delta_prime) + 1e-9, g,
            f"<= ln {box.delta_prime}")
    ratio = 0.0
    for k in range(len(pam_s.times)):
        a, b = pam_s.log_u(k), pam_hf.log_u(k)
        both = np.isfinite(a) & np.isfinite(b)
        if np.any(np.isfinite(a) != np.isfinite(b)):
            ratio = math.inf
        ratio = max(ratio, float(np.max(np.abs(a[both] - b[both] - math.log(2.0)))))
    res.add("linearity: u^{C' heaviside} = C' u^heaviside", ratio <= 1e-9, ratio, "<= 1e-9")

    # growth monotonicity on integer snapshots
    worst_growth = -math.inf
    probe = np.linspace(-10.0, 10.0, 41)
    lu = np.array([pam_h.log_u_at(t, probe) for t in pam_h.times])
    for i in range(len(pam_h.times)):
        for j in range(i, len(pam_h.times)):
            d = lu[i] - lu[j] - math.log(2.0)
            d = d[np.isfinite(d)]
            if d.size:
                worst_growth = max(worst_growth, float(d.max()))
    res.add("growth monotonicity u(s) <= 2 u(t)", worst_growth <= 1e-9, worst_growth, "<= 0")

    c_h = spec.es + 0.5 * math.log(2.0 / math.e)
    worst_h = -math.inf
    for k in range(len(pam_h.times) - 1):
        t = pam_h.times[k]
        for y in np.arange(-8.0, 9.0, 1.0):
            nb = pam_h.log_u_at(t + 1, np.linspace(y - 1, y + 1, 41))
            worst_h = max(worst_h, float(pam_h.log_u_at(t, y) - (c_h + nb.min())))
    res.add("Harnack bound", worst_h <= 1e-9, worst_h, "<= 0 in log form")

    fine = GridConfig(dx=0.025, dt=0.005, w_left=20.0, w_right=30.0)
    pam_f = solve_pam(field, heav, fine, 2.0)
    pam_c = solve_pam(field, heav, grid, 2.0)
    xs = np.array([-1.0, 0.5, 1.0, 2.0, 3.0])
    dev = float(np.max(np.abs(pam_f.log_u_at(2.0, xs) - pam_c.log_u_at(2.0, xs))))
    res.add("grid convergence: halving dx, dt moves ln u by < 1e-3", dev < 1e-3, dev, "< 1e-3")
    sc = check_sc(split)
    res.add("offspring nonlinearity passes the standard conditions", sc.passed, None, "")
    return res



def run_all(selected=None, jobs: int = 1, echo: Callable | None = print) -> list:
    """Run the selected criteria (default all) and return their results in order."""
    sel = sorted(set(selected or range(1, 15)))
    out = []
    rows = None
    gap = None

    def emit(r):
        out.append(r)
        if echo:
            echo(r.line())

    for cid in sel:
        if cid == 1:
            emit(criterion_1())
        elif cid == 2:
            emit(criterion_2())
        elif cid in (3, 4):
            rows = rows or representation_table()
            emit(criterion_3(rows) if cid == 3 else criterion_4(rows))
        elif cid == 5:
            emit(criterion_5())
        elif cid == 6:
            emit(criterion_6())
        elif cid == 7:
            emit(criterion_7())
        elif cid in (8, 9):
            gap = gap or random_gap_report(jobs=jobs)
            emit(criterion_8(gap) if cid == 8 else criterion_9(gap))
        elif cid == 10:
            emit(criterion_10(jobs))
        elif cid == 11:
            emit(criterion_11(jobs))
        elif cid == 12:
            emit(criterion_12(jobs))
        elif cid == 13:
            emit(criterion_13(jobs))
        elif cid == 14:
            emit(invariant_suite())
        else:
            raise ValueError(f"no criterion {cid}")
    return out
