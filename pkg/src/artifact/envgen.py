"""Random potentials: constant, smoothed block, and Poisson-Matern mollified bumps.

Every cell of the real line owns an independent random stream keyed on
(seed, cell index), so a value at x never depends on which other points
were evaluated before it.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field, asdict, replace
from typing import Iterable

import numpy as np

KINDS = ("constant", "smoothed_block", "matern_bump")
HARDCORE_DISTANCE = 1.0

# stream tags keep the per-cell streams of different constructions apart
_TAG_POINTS = 1
_TAG_BLOCK = 2
_TAG_PHASE = 3


@dataclass(frozen=True)
class PotentialSpec:
    kind: str = "constant"
    ei: float = 1.0
    es: float = 1.0
    a: float | None = None
    epsilon: float = 0.5
    kernel_radius: float = 1.0
    cell_size: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if not (self.ei > 0 and self.es > 0):
            raise ValueError("ei and es must be positive")
        if self.ei > self.es:
            raise ValueError("need ei <= es")
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.cell_size <= 0:
            raise ValueError("cell_size must be positive")
        if self.kind == "matern_bump":
            a = self.es - self.ei if self.a is None else float(self.a)
            if a <= 0:
                raise ValueError("matern_bump needs a > 0")
            if self.es != self.ei + a:
                raise ValueError("matern_bump needs es == ei + a exactly")
            object.__setattr__(self, "a", a)
        if self.kind == "smoothed_block" and self.kernel_radius < self.cell_size:
            raise ValueError("smoothed_block needs kernel_radius >= cell_size")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @classmethod
    def matern(cls, a: float, ei: float, epsilon: float, seed: int = 0,
               cell_size: float = 0.5) -> "PotentialSpec":
        return cls(kind="matern_bump", ei=ei, es=ei + a, a=a, epsilon=epsilon,
                   cell_size=cell_size, seed=seed)

    @classmethod
    def constant(cls, value: float, es: float | None = None) -> "PotentialSpec":
        """xi == value; es defaults to value so that zeta == 0."""
        return cls(kind="constant", ei=value, es=value if es is None else es)

    def with_seed(self, seed: int) -> "PotentialSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seed"] = int(d["seed"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "PotentialSpec":
        known = {"kind", "ei", "es", "a", "epsilon", "kernel_radius", "cell_size", "seed"}
        extra = set(d) - known
        if extra:
            raise KeyError(f"unknown potential keys: {sorted(extra)}")
        return cls(**d)

    @property
    def homogeneous(self) -> bool:
        return self.kind == "constant"

    @property
    def dependence_range(self) -> float:
        """Distance beyond which values are independent."""
        if self.kind == "constant":
            return 0.0
        if self.kind == "smoothed_block":
            return 2.0 * self.kernel_radius
        return 2.0 * (HARDCORE_DISTANCE + self.epsilon)


def _zigzag(k: int) -> int:
    return 2 * k if k >= 0 else -2 * k - 1


def _cell_rng(seed: int, tag: int, k: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(tag, _zigzag(int(k))))
    return np.random.Generator(np.random.PCG64(ss))


def mollifier_value(x, eps: float):
    """Smooth bump of support [-eps/2, eps/2] with peak 1."""
    u = 2.0 * np.asarray(x, dtype=float) / eps
    out = np.zeros_like(u)
    inside = np.abs(u) < 1.0
    ui = u[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - ui * ui))
    if np.ndim(x) == 0:
        return float(out)
    return out


def mollifier_slope_bound() -> float:
    """sup |d/du phi(u)| for the unit-width bump phi(u) = exp(1 - 1/(1-(2u)^2))."""
    s = np.linspace(0.0, 0.999999, 200001)
    # phi(s/2) derivative in u = s/2 is 2 * d/ds exp(1 - 1/(1-s^2))
    g = np.exp(1.0 - 1.0 / (1.0 - s * s)) * 2.0 * s / (1.0 - s * s) ** 2
    return 2.0 * float(g.max()) * 1.0001


def _block_kernel(u):
    w = 1.0 - u * u
    return np.where(np.abs(u) < 1.0, w * w * w, 0.0)


def simultaneous_deletion(points: np.ndarray, dist: float = HARDCORE_DISTANCE) -> np.ndarray:
    """Brute-force hardcore thinning: drop every point with a neighbour within dist."""
    p = np.sort(np.asarray(points, dtype=float))
    if p.size < 2:
        return p
    d = np.abs(p[:, None] - p[None, :])
    np.fill_diagonal(d, np.inf)
    return p[d.min(axis=1) > dist]


class PotentialField:
    """Lazily generated realisation of a potential, with a pure memo cache."""

    def __init__(self, spec: PotentialSpec, shift_offset: float = 0.0,
                 _cache: dict | None = None):
        self.spec = spec
        self.shift_offset = float(shift_offset)
        self.cell_cache: dict = {} if _cache is None else _cache
        self._lock = threading.Lock()
        if spec.kind == "smoothed_block":
            self._phase = float(_cell_rng(spec.seed, _TAG_PHASE, 0).random())
        else:
            self._phase = 0.0

    # -- cell data -------------------------------------------------------
    def _cached(self, key, make):
        val = self.cell_cache.get(key)
        if val is None:
            val = make()
            self.cell_cache.setdefault(key, val)
        return val

    def raw_points(self, k: int) -> np.ndarray:
        """Unit-rate Poisson points inside cell k."""
        spec = self.spec

        def make():
            rng = _cell_rng(spec.seed, _TAG_POINTS, k)
            n = rng.poisson(spec.cell_size)
            pts = (k + rng.random(n)) * spec.cell_size
            pts.sort()
            return pts
        return self._cached(("raw", int(k)), make)

    def retained_points(self, k: int) -> np.ndarray:
        """Raw points of cell k that survive simultaneous hardcore deletion."""
        cs = self.spec.cell_size

        def make():
            own = self.raw_points(k)
            if own.size == 0:
                return own
            reach = int(math.ceil(HARDCORE_DISTANCE / cs))
            nb = np.concatenate([self.raw_points(j) for j in range(k - reach, k + reach + 1)])
            d = np.abs(own[:, None] - nb[None, :])
            # exclude self-distance via exact equality of identical entries
            d[d == 0.0] = np.inf
            keep = d.min(axis=1) > HARDCORE_DISTANCE
            return own[keep]
        return self._cached(("ret", int(k)), make)

    def block_coefficient(self, k: int) -> float:
        spec = self.spec
        return self._cached(("blk", int(k)),
                            lambda: float(_cell_rng(spec.seed, _TAG_BLOCK, k).random()))

    def cells_for(self, x: float) -> set:
        """Cache keys whose data determine the value at x (absolute coordinate)."""
        spec = self.spec
        y = float(x) + self.shift_offset
        cs = spec.cell_size
        if spec.kind == "constant":
            return set()
        if spec.kind == "smoothed_block":
            R = spec.kernel_radius
            lo = int(math.floor((y - R) / cs - self._phase))
            hi = int(math.ceil((y + R) / cs - self._phase))
            return {("blk", k) for k in range(lo, hi + 1)
                    if abs(y - (k + self._phase) * cs) < R}
        half = spec.epsilon / 2.0
        lo = int(math.floor((y - half - HARDCORE_DISTANCE) / cs))
        hi = int(math.floor((y + half + HARDCORE_DISTANCE) / cs))
        return {("raw", k) for k in range(lo, hi + 1)}

    # -- evaluation -------------------------------------------------------
    def matern_points(self, lo: float, hi: float) -> np.ndarray:
        cs = self.spec.cell_size
        k0 = int(math.floor(lo / cs))
        k1 = int(math.floor(hi / cs))
        pts = np.concatenate([self.retained_points(k) for k in range(k0, k1 + 1)])
        return pts[(pts >= lo) & (pts <= hi)]

    def _eval_abs(self, y: np.ndarray) -> np.ndarray:
        spec = self.spec
        if spec.kind == "constant":
            return np.full(y.shape, float(spec.ei))
        if y.size == 0:
            return np.empty(0)
        lo, hi = float(y.min()), float(y.max())
        if spec.kind == "matern_bump":
            half = spec.epsilon / 2.0
            pts = self.matern_points(lo - half - 1e-12, hi + half + 1e-12)
            out = np.full(y.shape, float(spec.ei))
            if pts.size == 0:
                return out
            if pts.size > 1 and np.min(np.diff(pts)) <= HARDCORE_DISTANCE:
                raise AssertionError("retained points closer than the hardcore distance")
            j = np.searchsorted(pts, y)
            left = pts[np.clip(j - 1, 0, pts.size - 1)]
            right = pts[np.clip(j, 0, pts.size - 1)]
            near = np.where(np.abs(y - left) <= np.abs(right - y), left, right)
            bump = mollifier_value(y - near, spec.epsilon)
            out = spec.ei + spec.a * bump
            return np.clip(out, spec.ei, spec.es)
        # smoothed block
        cs, R, ph = spec.cell_size, spec.kernel_radius, self._phase
        k0 = int(math.floor((lo - R) / cs - ph)) - 1
        k1 = int(math.ceil((hi + R) / cs - ph)) + 1
        ks = np.arange(k0, k1 + 1)
        centers = (ks + ph) * cs
        coef = np.array([self.block_coefficient(int(k)) for k in ks])
        m = int(math.ceil(R / cs)) + 1
        # position of y relative to the lattice; only 2m+1 neighbours matter
        base = np.floor(y / cs - ph).astype(np.int64) - k0
        num = np.zeros(y.shape)
        den = np.zeros(y.shape)
        for off in range(-m, m + 2):
            idx = np.clip(base + off, 0, ks.size - 1)
            w = _block_kernel((y - centers[idx]) / R)
            # clipped duplicates would double count; drop them
            valid = (base + off >= 0) & (base + off < ks.size)
            w = np.where(valid, w, 0.0)
            num += w * coef[idx]
            den += w
        frac = num / den
        out = spec.ei + (spec.es - spec.ei) * frac
        return np.clip(out, spec.ei, spec.es)

    def evaluate(self, x):
        y = np.asarray(x, dtype=float) + self.shift_offset
        vals = self._eval_abs(np.atleast_1d(y).ravel()).reshape(np.shape(y))
        if np.ndim(x) == 0:
            return float(vals)
        return vals

    def evaluate_zeta(self, x):
        v = self.evaluate(x)
        return v - self.spec.es

    def shift(self, h: float) -> "PotentialField":
        g = PotentialField(self.spec, self.shift_offset + float(h), self.cell_cache)
        return g

    def sample_grid(self, x0: float, dx: float, n: int) -> np.ndarray:
        if dx <= 0:
            raise ValueError("dx must be positive")
        return self.evaluate(x0 + dx * np.arange(int(n)))

    def lipschitz_bound(self) -> float:
        spec = self.spec
        if spec.kind == "constant":
            return 0.0
        if spec.kind == "matern_bump":
            return spec.a * mollifier_slope_bound() / spec.epsilon
        R, cs = spec.kernel_radius, spec.cell_size
        kprime = 6.0 / math.sqrt(5.0) * (0.8 ** 2)
        kmin = 0.75 ** 3
        return (spec.es - spec.ei) * 2.0 * (2.0 * R / cs + 2.0) * kprime / (R * kmin)


def make_field(spec: PotentialSpec) -> PotentialField:
    return PotentialField(spec)


# functional API ---------------------------------------------------------

def evaluate(field: PotentialField, x):
    return field.evaluate(x)


def evaluate_zeta(field: PotentialField, x):
    return field.evaluate_zeta(x)


def shift(field: PotentialField, h: float) -> PotentialField:
    return field.shift(h)


def sample_grid(field: PotentialField, x0: float, dx: float, n: int) -> np.ndarray:
    return field.sample_grid(x0, dx, n)


def matern_points(spec: PotentialSpec, window: tuple[float, float]) -> np.ndarray:
    if spec.kind != "matern_bump":
        raise ValueError("matern_points needs a matern_bump spec")
    return PotentialField(spec).matern_points(float(window[0]), float(window[1]))


def write_grid_csv(path, xs: Iterable[float], vals: Iterable[float]) -> None:
    with open(path, "w") as fh:
        fh.write("x,xi\n")
        for x, v in zip(xs, vals):
            fh.write(f"{float(x)!r},{float(v)!r}\n")
