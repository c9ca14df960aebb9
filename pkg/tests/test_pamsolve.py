import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import norm

from artifact.envgen import PotentialSpec, make_field
from artifact.pamsolve import breakpoint_inverse, fk_mc_pam, front_pam, solve_pam
from artifact.pdecore import GridConfig, InitialCondition, WindowBreachError

ONE = make_field(PotentialSpec.constant(1.0))
MATERN = make_field(PotentialSpec.matern(a=1.0, ei=0.5, epsilon=0.5, seed=4))
HEAVI = InitialCondition("heaviside")
FIXED = GridConfig(dx=0.02, dt=0.002, w_left=20.0, w_right=30.0, recenter=False)


@pytest.fixture(scope="module")
def flat_traj():
    return solve_pam(ONE, HEAVI, FIXED, 4.0)


def test_closed_form_values(flat_traj):
    assert flat_traj.u_at(1.0, 0.0) == pytest.approx(math.e / 2, abs=1e-3)
    assert flat_traj.u_at(4.0, 2.0) == pytest.approx(math.exp(4) * norm.cdf(-1.0), abs=1e-2)


def test_normalisation_bookkeeping(flat_traj):
    for k in range(len(flat_traj.times)):
        v = flat_traj.values[k]
        assert v.max() == pytest.approx(1.0) and v.min() >= 0.0


def test_linearity():
    g = GridConfig(dx=0.05, dt=0.01, w_left=20.0, w_right=30.0, recenter=False)
    base = solve_pam(MATERN, HEAVI, g, 5.0)
    scaled = solve_pam(MATERN, InitialCondition("scaled_heaviside", c_prime=3.0), g, 5.0)
    for k in range(len(base.times)):
        assert scaled.log_offset[k] - base.log_offset[k] == pytest.approx(math.log(3.0), abs=1e-10)
        np.testing.assert_allclose(scaled.values[k], base.values[k], rtol=1e-10, atol=0)


def test_front_examples(flat_traj):
    assert front_pam(flat_traj, math.e / 2, 1.0) == pytest.approx(0.0, abs=FIXED.dx)
    assert front_pam(flat_traj, 0.1, 3.0) >= front_pam(flat_traj, 0.5, 3.0) >= front_pam(flat_traj, 2.0, 3.0)


def test_front_log_correction():
    traj = solve_pam(ONE, HEAVI, GridConfig(), 100.0, a=0.5)
    assert abs(front_pam(traj, 0.5, 100.0) - 139.79) < 3


def test_breakpoint_examples():
    traj = solve_pam(ONE, HEAVI, GridConfig(), 110.0, a=0.5)
    assert breakpoint_inverse(traj, -3.0, 0.5) == 0.0
    assert breakpoint_inverse(traj, 0.0, 0.5) == 0.0
    assert breakpoint_inverse(traj, 100.0, 0.5) / 100.0 == pytest.approx(1 / math.sqrt(2), rel=0.05)
    # T at the front lies within a bounded lag of t
    lags = []
    for t in (30.0, 60.0, 90.0):
        m = math.floor(front_pam(traj, 0.5, t))
        lags.append(t - breakpoint_inverse(traj, float(m), 0.5))
    assert all(0 <= lag <= 2.0 for lag in lags)
    T = [breakpoint_inverse(traj, float(x), 0.5) for x in range(0, 101)]
    assert np.all(np.diff(T) >= -GridConfig().dt)


def test_window_breach():
    g = GridConfig(w_right=5.0, recenter=False)
    with pytest.raises(WindowBreachError, match="W_R"):
        solve_pam(ONE, HEAVI, g, 10.0)


def test_fk_mc_closed_form():
    est, se = fk_mc_pam(ONE, 1.0, 0.0, HEAVI, n_paths=100_000, seed=3)
    assert abs(est - math.e / 2) < 3 * se


def test_fk_mc_vs_pde_random_field():
    traj = solve_pam(MATERN, HEAVI, FIXED, 2.0)
    est, se = fk_mc_pam(MATERN, 2.0, 1.0, HEAVI, n_paths=100_000, seed=9)
    assert abs(est - traj.u_at(2.0, 1.0)) < 3 * se


def test_fk_mc_box_below_heaviside():
    box = InitialCondition("box", delta_prime=0.5)
    a, _ = fk_mc_pam(MATERN, 1.0, 0.5, box, n_paths=20_000, seed=1)
    b, _ = fk_mc_pam(MATERN, 1.0, 0.5, HEAVI, n_paths=20_000, seed=1)
    assert a <= b


@pytest.fixture(scope="module")
def sandwich():
    g = GridConfig(dx=0.05, dt=0.01, w_left=20.0, w_right=30.0, recenter=False)
    out = {}
    for kind in ("heaviside", "box", "scaled_heaviside"):
        out[kind] = solve_pam(MATERN, InitialCondition(kind, 0.5, 2.0), g, 6.0)
    return out


def test_sandwich(sandwich):
    h, b, s = sandwich["heaviside"], sandwich["box"], sandwich["scaled_heaviside"]
    for k in range(len(h.times)):
        x = h.grid(k)
        lh, lb, ls = h.log_u(k), b.log_u(k), s.log_u(k)
        ok = np.isfinite(lb)
        assert np.all(lb[ok] <= lh[ok] + 1e-9)
        assert np.all(lh <= ls + 1e-9)
        assert np.array_equal(x, s.grid(k))


def test_growth_monotonicity_and_harnack(sandwich):
    tr = sandwich["heaviside"]
    es = MATERN.spec.es
    lu = [tr.log_u(k) for k in range(len(tr.times))]
    x = tr.grid(0)
    for i in range(len(lu)):
        for j in range(i, len(lu)):
            assert np.all(lu[i] <= lu[j] + math.log(2) + 1e-9)
    n1 = int(round(1 / 0.05))
    c = es + 0.5 * math.log(2 / math.e)
    for k in range(len(lu) - 1):
        nxt = lu[k + 1]
        inner = slice(n1, x.size - n1)
        mins = np.array([nxt[i - n1:i + n1 + 1].min() for i in range(x.size)[inner]])
        assert np.all(lu[k][inner] <= c + mins + 1e-9)


def test_grid_convergence():
    g1 = GridConfig(dx=0.05, dt=0.01, w_left=20.0, w_right=30.0, recenter=False)
    g2 = GridConfig(dx=0.025, dt=0.005, w_left=20.0, w_right=30.0, recenter=False)
    a, b = solve_pam(MATERN, HEAVI, g1, 3.0), solve_pam(MATERN, HEAVI, g2, 3.0)
    for x in (-1.0, 0.0, 1.0, 2.0):
        assert abs(float(a.log_u_at(3.0, x)) - float(b.log_u_at(3.0, x))) < 1e-3


def test_threshold_robustness():
    spec = PotentialSpec.matern(a=4.0, ei=4.0, epsilon=0.99, seed=5)
    g = GridConfig(dx=0.05, dt=0.01)
    lo = solve_pam(make_field(spec), HEAVI, g, 300.0, a=0.1)
    hi = solve_pam(make_field(spec), HEAVI, g, 300.0, a=2.0)
    ts = np.arange(50.0, 301.0, 10.0)
    diff = np.array([front_pam(lo, 0.1, t) - front_pam(hi, 2.0, t) for t in ts])
    assert np.all(diff >= 0)
    assert np.polyfit(ts, diff, 1)[0] <= 0.01


def test_deterministic_rerun():
    g = GridConfig(dx=0.05, dt=0.01)
    a = solve_pam(MATERN, HEAVI, g, 8.0)
    b = solve_pam(make_field(MATERN.spec), HEAVI, g, 8.0)
    for k in range(len(a.times)):
        assert np.array_equal(a.values[k], b.values[k])


@settings(max_examples=8, deadline=None)
@given(seed=st.integers(0, 10**6), a1=st.floats(0.05, 5.0), a2=st.floats(0.05, 5.0))
def test_front_nesting_property(seed, a1, a2):
    f = make_field(PotentialSpec.matern(a=1.0, ei=0.5, epsilon=0.5, seed=seed))
    tr = solve_pam(f, HEAVI, GridConfig(dx=0.05, dt=0.01, w_left=20, w_right=30), 5.0)
    lo, hi = sorted((a1, a2))
    assert front_pam(tr, lo, 5.0) >= front_pam(tr, hi, 5.0)
