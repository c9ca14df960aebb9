"""Branching Brownian motion in a random environment: exact simulation and
moment formulas.

Branching events are generated by thinning a rate-es Poisson clock, so no
time discretisation enters; between events positions are exact Gaussians.
Barrier killing uses the exact probability that a Brownian bridge stays in
an interval.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dfield

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .envgen import PotentialField
from .seeding import derive_seed

BLOCK = 2000


class CapError(RuntimeError):
    pass


class ReliabilityError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class OffspringLaw:
    ks: tuple
    ps: tuple

    def __post_init__(self):
        ks = np.array(self.ks)
        ps = np.array(self.ps, dtype=float)
        if np.any(ks < 1):
            raise ValueError("p_0 must vanish and offspring numbers be positive")
        if abs(ps.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        if abs((ks * ps).sum() - 2.0) > 1e-12:
            raise ValueError("mean offspring number must equal 2")

    @classmethod
    def from_dict(cls, p: dict) -> "OffspringLaw":
        items = sorted((int(k), float(v)) for k, v in p.items() if float(v) > 0)
        return cls(tuple(k for k, _ in items), tuple(v for _, v in items))

    @property
    def mean(self) -> float:
        return float(np.dot(self.ks, self.ps))

    @property
    def m2(self) -> float:
        return float(np.dot(np.square(self.ks), self.ps))

    def to_dict(self) -> dict:
        return {int(k): float(p) for k, p in zip(self.ks, self.ps)}


BINARY = OffspringLaw((2,), (1.0,))


def degenerate_law() -> OffspringLaw:
    """p_1 = 1 formally violates mean 2; used only as a no-branching control."""
    obj = object.__new__(OffspringLaw)
    object.__setattr__(obj, "ks", (1,))
    object.__setattr__(obj, "ps", (1.0,))
    return obj


@dataclass
class ParticleSystem:
    time: float
    positions: np.ndarray
    lineage: np.ndarray
    cap: int
    cap_hit: bool = False


def bridge_stay_prob(a, b, dt, lo: float, hi: float, n_terms: int = 6):
    """P(Brownian bridge from a to b over time dt stays inside (lo, hi))."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    dt = np.asarray(dt, dtype=float)
    inside = (a > lo) & (a < hi) & (b > lo) & (b < hi)
    out = np.zeros(np.broadcast(a, b, dt).shape)
    if not np.any(inside):
        return out
    dts = np.maximum(dt, 1e-300)
    if math.isinf(lo) and math.isinf(hi):
        return inside.astype(float)
    if math.isinf(hi):
        p = 1.0 - np.exp(-2.0 * (a - lo) * (b - lo) / dts)
    elif math.isinf(lo):
        p = 1.0 - np.exp(-2.0 * (hi - a) * (hi - b) / dts)
    else:
        w = hi - lo
        x = a - lo
        y = b - lo
        p = np.zeros_like(out)
        for k in range(-n_terms, n_terms + 1):
            p = p + np.exp(-2.0 * k * w * (k * w + y - x) / dts) - np.exp(-2.0 * (x + k * w) * (y + k * w) / dts)
    return np.where(inside, np.clip(p, 0.0, 1.0), 0.0)


def _sample_offspring(rng, law: OffspringLaw, n: int) -> np.ndarray:
    if len(law.ks) == 1:
        return np.full(n, law.ks[0], dtype=np.int64)
    return rng.choice(np.array(law.ks, dtype=np.int64), size=n, p=np.array(law.ps))


def _run_block(field: PotentialField, law: OffspringLaw, x0: float, T: float, n_reps: int,
               cap: int, rng: np.random.Generator, lo: float = -math.inf, hi: float = math.inf):
    """Simulate n_reps independent replicas; returns final (positions, replica), cap flags."""
    es = field.spec.es
    pos = np.full(n_reps, float(x0))
    tcur = np.zeros(n_reps)
    rep = np.arange(n_reps)
    if not (lo < x0 < hi):
        return np.empty(0), np.empty(0, dtype=np.int64), np.zeros(n_reps, dtype=bool)
    out_pos, out_rep = [], []
    cap_hit = np.zeros(n_reps, dtype=bool)
    done_count = np.zeros(n_reps, dtype=np.int64)
    tubed = not (math.isinf(lo) and math.isinf(hi))
    while pos.size:
        n = pos.size
        E = rng.exponential(1.0 / es, n)
        fin = tcur + E >= T
        step = np.where(fin, T - tcur, E)
        new = pos + np.sqrt(step) * rng.standard_normal(n)
        u_kill = rng.random(n) if tubed else None
        u_acc = rng.random(n)
        if tubed:
            keep = u_kill < bridge_stay_prob(pos, new, step, lo, hi)
        else:
            keep = np.ones(n, dtype=bool)
        # finished particles
        f = fin & keep
        if np.any(f):
            out_pos.append(new[f])
            out_rep.append(rep[f])
            done_count += np.bincount(rep[f], minlength=n_reps)
        go = (~fin) & keep
        pos, tcur, rep, u_acc = new[go], tcur[go] + E[go], rep[go], u_acc[go]
        accept = u_acc < field.evaluate(pos) / es
        k = np.ones(pos.size, dtype=np.int64)
        if np.any(accept):
            k[accept] = _sample_offspring(rng, law, int(accept.sum()))
        pos = np.repeat(pos, k)
        tcur = np.repeat(tcur, k)
        rep = np.repeat(rep, k)
        pop = done_count + np.bincount(rep, minlength=n_reps)
        over = pop > cap
        if np.any(over):
            cap_hit |= over
            m = ~over[rep]
            pos, tcur, rep = pos[m], tcur[m], rep[m]
    if out_pos:
        P = np.concatenate(out_pos)
        R = np.concatenate(out_rep)
    else:
        P, R = np.empty(0), np.empty(0, dtype=np.int64)
    bad = cap_hit[R]
    return P[~bad], R[~bad], cap_hit


def simulate(field: PotentialField, law: OffspringLaw, x0: float, T: float, cap: int = 10**6,
             seed: int = 0) -> ParticleSystem:
    if T <= 0 or cap < 1:
        raise ValueError("need T > 0 and cap >= 1")
    rng = np.random.default_rng(derive_seed(seed, "bbmre-single"))
    P, _, hit = _run_block(field, law, x0, T, 1, cap, rng)
    return ParticleSystem(time=T, positions=np.sort(P), lineage=np.arange(P.size),
                          cap=cap, cap_hit=bool(hit[0]))


def count_leq(psys: ParticleSystem, y: float) -> int:
    if psys.cap_hit:
        raise CapError("run hit the population cap and is excluded from counting")
    return int(np.searchsorted(psys.positions, y, side="right"))


@dataclass
class ReplicaSummary:
    population: np.ndarray
    count_leq: np.ndarray
    cap_hit: np.ndarray
    y: float

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("replica,population,count_leq,cap_hit\n")
            for i, (p, c, h) in enumerate(zip(self.population, self.count_leq, self.cap_hit)):
                fh.write(f"{i},{int(p)},{int(c)},{int(bool(h))}\n")


def replicas(field: PotentialField, law: OffspringLaw, x: float, t: float, n_reps: int,
             seed: int = 0, cap: int = 10**6, y: float = 0.0, lo: float = -math.inf,
             hi: float = math.inf) -> ReplicaSummary:
    """Population and N^<=(t, y) per replica; replicas run in fixed blocks of streams."""
    pops, cnts, hits = [], [], []
    for b in range(int(math.ceil(n_reps / BLOCK))):
        m = min(BLOCK, n_reps - b * BLOCK)
        rng = np.random.default_rng(derive_seed(seed, "bbmre", b))
        P, R, hit = _run_block(field, law, x, t, m, cap, rng, lo, hi)
        pops.append(np.bincount(R, minlength=m))
        cnts.append(np.bincount(R[P <= y], minlength=m))
        hits.append(hit)
    return ReplicaSummary(np.concatenate(pops), np.concatenate(cnts), np.concatenate(hits), y)


def _check_caps(s: ReplicaSummary):
    frac = s.cap_hit.mean()
    if frac > 0.01:
        raise ReliabilityError(f"{100 * frac:.2f}% of replicas hit the population cap")
    return ~s.cap_hit


def estimate_w(field: PotentialField, law: OffspringLaw, x: float, t: float, n_reps: int,
               seed: int = 0, cap: int = 10**6):
    """P_x(N^<=(t,0) >= 1) with a Wilson-score standard error."""
    s = replicas(field, law, x, t, n_reps, seed, cap)
    ok = _check_caps(s)
    hits = (s.count_leq[ok] >= 1)
    n = hits.size
    p = hits.mean()
    se = math.sqrt(p * (1 - p) / n + 1.0 / (4 * n * n)) / (1 + 1.0 / n)
    return float(p), float(se)


def estimate_mean_count(field: PotentialField, law: OffspringLaw, x: float, t: float, n_reps: int,
                        seed: int = 0, cap: int = 10**6):
    s = replicas(field, law, x, t, n_reps, seed, cap)
    ok = _check_caps(s)
    c = s.count_leq[ok].astype(float)
    return float(c.mean()), float(c.std(ddof=1) / math.sqrt(c.size))


def estimate_both(field: PotentialField, law: OffspringLaw, x: float, t: float, n_reps: int,
                  seed: int = 0, cap: int = 10**6):
    """(w, se_w, mean count, se_mean) from one set of replicas."""
    s = replicas(field, law, x, t, n_reps, seed, cap)
    ok = _check_caps(s)
    c = s.count_leq[ok].astype(float)
    n = c.size
    p = float((c >= 1).mean())
    se_p = math.sqrt(p * (1 - p) / n + 1.0 / (4 * n * n)) / (1 + 1.0 / n)
    return p, se_p, float(c.mean()), float(c.std(ddof=1) / math.sqrt(n))


# -- moment formulas inside a tube --------------------------------------------------

class KilledGenerator:
    """Spectral form of A = (1/2) d^2/dy^2 + xi on (lo, hi) with Dirichlet ends."""

    def __init__(self, field: PotentialField, lo: float, hi: float, h: float = 0.01):
        n = int(round((hi - lo) / h))
        self.h = (hi - lo) / n
        self.y = lo + self.h * np.arange(1, n)
        self.xi = field.evaluate(self.y)
        r = 0.5 / self.h ** 2
        self.lam, self.V = eigh_tridiagonal(self.xi - 2 * r, np.full(n - 2, r))

    def apply_exp(self, s: float, f: np.ndarray) -> np.ndarray:
        """exp(s A) f."""
        return self.V @ (np.exp(s * self.lam) * (self.V.T @ f))

    def node(self, x: float) -> int:
        j = int(round((x - self.y[0]) / self.h))
        if abs(self.y[j] - x) > 1e-9:
            raise ValueError("starting point must be a grid node")
        return j


def fk1_value(gen: KilledGenerator, x: float, t: float) -> float:
    return float(gen.apply_exp(t, np.ones(gen.y.size))[gen.node(x)])


def fk2_value(gen: KilledGenerator, law: OffspringLaw, x: float, t: float, n_nodes: int = 64):
    """Second moment of the in-tube count via the many-to-two formula.

    Returns (value, relative quadrature residual)."""
    j = gen.node(x)
    ones = np.ones(gen.y.size)
    first = float(gen.apply_exp(t, ones)[j])
    # project once: c(r) = V^T g(r), g(r) = exp(rA) 1
    c1 = gen.V.T @ ones

    def integrand(s):
        g = gen.V @ (np.exp((t - s) * gen.lam) * c1)
        return float(gen.apply_exp(s, gen.xi * g * g)[j])

    def simpson(m):
        s = np.linspace(0.0, t, 2 * m + 1)
        f = np.array([integrand(v) for v in s])
        hh = t / (2 * m)
        return hh / 3 * (f[0] + f[-1] + 4 * f[1:-1:2].sum() + 2 * f[2:-1:2].sum())
    coarse = simpson(n_nodes // 2)
    fine = simpson(n_nodes)
    resid = abs(fine - coarse) / max(abs(fine), 1e-300)
    if resid > 0.01:
        raise QuadratureError(f"quadrature residual {resid:.3g} exceeds 1%")
    return first + (law.m2 - 2.0) * fine, resid


def tube_moments(field: PotentialField, law: OffspringLaw, x: float, t: float,
                 barrier_lo: float, barrier_hi: float, n_reps: int, seed: int = 0,
                 h: float = 0.01, sentinel: float = 15.0, cap: int = 10**6):
    """(mc_first, mc_second, fk1, fk2, se_first, se_second) for the in-tube count."""
    if not barrier_lo < x < barrier_hi:
        raise ValueError("need barrier_lo < x < barrier_hi")
    s = replicas(field, law, x, t, n_reps, seed, cap, y=math.inf, lo=barrier_lo, hi=barrier_hi)
    ok = _check_caps(s)
    c = s.population[ok].astype(float)
    lo = barrier_lo if math.isfinite(barrier_lo) else x - sentinel
    hi = barrier_hi if math.isfinite(barrier_hi) else x + sentinel
    gen = KilledGenerator(field, lo, hi, h)
    fk1 = fk1_value(gen, x, t)
    fk2, _ = fk2_value(gen, law, x, t)
    n = c.size
    return (float(c.mean()), float((c * c).mean()), fk1, fk2,
            float(c.std(ddof=1) / math.sqrt(n)), float((c * c).std(ddof=1) / math.sqrt(n)))
