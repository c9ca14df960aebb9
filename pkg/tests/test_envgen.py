import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.envgen import (PotentialField, PotentialSpec, evaluate, evaluate_zeta, make_field,
                             matern_points, mollifier_value, sample_grid, shift,
                             simultaneous_deletion)

MATERN = PotentialSpec.matern(a=2.0, ei=0.5, epsilon=0.5, seed=3)
BLOCK = PotentialSpec(kind="smoothed_block", ei=0.5, es=2.0, kernel_radius=1.0, cell_size=0.5, seed=5)


def test_constant_evaluates_to_one():
    f = make_field(PotentialSpec.constant(1.0))
    assert evaluate(f, 3.7) == 1.0
    assert evaluate_zeta(f, -2.0) == 0.0


def test_spec_validation():
    with pytest.raises(ValueError):
        PotentialSpec(kind="matern_bump", ei=1.0, es=2.0, a=0.5)
    with pytest.raises(ValueError):
        PotentialSpec(kind="constant", ei=2.0, es=1.0)
    with pytest.raises(ValueError):
        PotentialSpec.matern(a=1.0, ei=1.0, epsilon=1.0)
    with pytest.raises(ValueError):
        PotentialSpec(kind="smoothed_block", ei=1, es=2, kernel_radius=0.2, cell_size=0.5)
    assert PotentialSpec.from_dict(MATERN.to_dict()) == MATERN


def test_matern_off_and_on_bumps():
    f = make_field(MATERN)
    pts = f.matern_points(0.0, 200.0)
    assert pts.size > 5
    # isolated retained point: peak value es
    for p in pts[:5]:
        assert evaluate(f, p) == pytest.approx(MATERN.es, abs=1e-12)
    # far from every point: ei, zeta = -a
    xs = np.linspace(1.0, 199.0, 20001)
    d = np.min(np.abs(xs[:, None] - pts[None, :]), axis=1)
    far = xs[d > MATERN.epsilon / 2 + 1e-9]
    assert np.all(evaluate(f, far) == MATERN.ei)
    assert np.all(evaluate_zeta(f, far) == -MATERN.a)


def test_simultaneous_deletion_examples():
    assert list(simultaneous_deletion(np.array([0.0, 0.4, 3.0]))) == [3.0]
    assert list(simultaneous_deletion(np.array([0.0, 2.0, 4.0]))) == [0.0, 2.0, 4.0]


def test_lazy_thinning_matches_bruteforce_oracle():
    f = make_field(MATERN)
    cs = MATERN.cell_size
    lo_k, hi_k = -10, 2010
    raw = np.concatenate([f.raw_points(k) for k in range(lo_k, hi_k)])
    oracle = simultaneous_deletion(raw)
    lo, hi = 0.0, 1000.0
    oracle = oracle[(oracle >= lo) & (oracle <= hi)]
    lazy = matern_points(MATERN, (lo, hi))
    assert lazy.size == oracle.size
    assert np.max(np.abs(lazy - oracle)) < 1e-12
    assert hi_k * cs > hi + 2


def test_mollifier_examples():
    assert mollifier_value(0.0, 0.3) == 1.0
    assert mollifier_value(0.6 * 0.7, 0.7) == 0.0
    assert mollifier_value(-0.1, 1.0) == mollifier_value(0.1, 1.0)


@pytest.mark.parametrize("spec", [PotentialSpec.constant(1.0), MATERN, BLOCK])
def test_sample_grid_examples(spec):
    f = make_field(spec)
    g = sample_grid(f, -3.0, 0.1, 50)
    assert np.array_equal(g, evaluate(f, -3.0 + 0.1 * np.arange(50)))
    assert sample_grid(f, 1.3, 0.1, 1)[0] == evaluate(f, 1.3)
    h = 0.7
    assert np.array_equal(sample_grid(shift(f, h), -3.0, 0.1, 50), evaluate(f, (-3.0 + 0.1 * np.arange(50)) + h))
    if spec.homogeneous:
        assert np.all(g == 1.0)


@pytest.mark.parametrize("spec", [MATERN, BLOCK])
def test_shift_identities(spec):
    f = make_field(spec)
    xs = np.linspace(-5, 5, 101)
    assert np.array_equal(evaluate(shift(f, 0.0), xs), evaluate(f, xs))
    assert evaluate(shift(f, 2.5), 0.0) == evaluate(f, 2.5)
    assert np.array_equal(evaluate(shift(shift(f, 1.25), 2.5), xs), evaluate(shift(f, 3.75), xs))


@pytest.mark.parametrize("spec", [MATERN, BLOCK])
def test_bounds_on_random_points(spec):
    f = make_field(spec)
    xs = np.random.default_rng(0).uniform(-2000, 2000, 10**6)
    v = evaluate(f, xs)
    assert v.min() >= spec.ei and v.max() <= spec.es


@pytest.mark.parametrize("spec", [MATERN, BLOCK])
def test_order_independent_evaluation(spec):
    xs = np.random.default_rng(1).uniform(-50, 50, 500)
    f1, f2 = PotentialField(spec), PotentialField(spec)
    a = evaluate(f1, xs)
    b = np.array([evaluate(f2, x) for x in xs[::-1]])[::-1]
    assert np.array_equal(a, b)


@pytest.mark.parametrize("spec", [MATERN, BLOCK])
def test_finite_range_cell_sets_disjoint(spec):
    f = make_field(spec)
    sep = spec.dependence_range + 1e-6
    for x in np.linspace(-10, 10, 41):
        assert f.cells_for(x).isdisjoint(f.cells_for(x + sep))


@pytest.mark.parametrize("spec", [MATERN, BLOCK])
def test_lipschitz_bound(spec):
    f = make_field(spec)
    dx = 1e-3
    v = sample_grid(f, -100.0, dx, 200001)
    assert np.max(np.abs(np.diff(v))) / dx <= f.lipschitz_bound()


def test_stationarity_of_marginals():
    vals0, vals1 = [], []
    for s in range(500):
        f = make_field(MATERN.with_seed(s))
        vals0.append(evaluate(f, 0.0))
        vals1.append(evaluate(f, 17.3))
    a, b = np.array(vals0), np.array(vals1)
    se = math.sqrt(a.var() / a.size + b.var() / b.size)
    assert abs(a.mean() - b.mean()) < 4 * se + 1e-12
    # variance: compare via squared deviations
    da, db = (a - a.mean()) ** 2, (b - b.mean()) ** 2
    se2 = math.sqrt(da.var() / da.size + db.var() / db.size)
    assert abs(da.mean() - db.mean()) < 4 * se2 + 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**63), x=st.floats(-1e4, 1e4), h=st.floats(-100, 100))
def test_shift_property(seed, x, h):
    f = make_field(MATERN.with_seed(seed))
    assert evaluate(shift(f, h), x) == evaluate(f, x + h)
    v = evaluate(f, x)
    assert MATERN.ei <= v <= MATERN.es
    assert evaluate_zeta(f, x) == v - MATERN.es


@settings(max_examples=50, deadline=None)
@given(pts=st.lists(st.floats(0, 20, allow_nan=False), min_size=0, max_size=30, unique=True))
def test_deletion_property(pts):
    kept = simultaneous_deletion(np.array(pts))
    if kept.size > 1:
        assert np.min(np.diff(kept)) > 1.0
    arr = np.array(pts)
    for p in kept:
        others = arr[arr != p]
        assert others.size == 0 or np.min(np.abs(others - p)) > 1.0
