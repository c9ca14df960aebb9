import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.envgen import PotentialSpec, make_field
from artifact.kppsolve import (LawError, PreconditionError, check_sc, custom_table, dominating_gm,
                               front_kpp, gm_closed_form, gm_family, logistic, offspring_to_F, solve_kpp)
from artifact.pamsolve import front_pam, solve_pam
from artifact.pdecore import GridConfig, InitialCondition, StabilityError

ONE = make_field(PotentialSpec.constant(1.0))
MATERN = make_field(PotentialSpec.matern(a=1.0, ei=0.5, epsilon=0.5, seed=4))
HEAVI = InitialCondition("heaviside")
W = np.linspace(0, 1, 1001)


def test_check_sc_examples():
    rep = check_sc(logistic())
    assert rep.passed
    assert rep.witnesses["F'(0)"] == pytest.approx(1.0)
    assert rep.witnesses["F'(1)"] == pytest.approx(-1.0)
    assert check_sc(gm_family(3)).passed
    f = W * (1 - W)
    f[500] = -0.1
    bad = check_sc(custom_table(W, f))
    assert not bad.positive and not bad.passed


def test_gm_family_examples():
    np.testing.assert_allclose(gm_family(1)(W), W * (1 - W), atol=1e-15)
    for n in range(1, 8):
        assert np.all(gm_closed_form(n + 1, W) <= gm_closed_form(n, W) + 1e-15)
        assert gm_closed_form(n, 1.0) == 0.0
    n = 4
    np.testing.assert_allclose(gm_family(n)(W), offspring_to_F({1: 1 - 1 / n, n + 1: 1 / n})(W), atol=1e-14)


def test_dominating_gm_examples():
    assert dominating_gm(logistic()) == 1
    assert dominating_gm(gm_family(5)) == 5
    g = W * (1 - W) * (1 + W) / 1.2
    with pytest.raises(PreconditionError):
        dominating_gm(custom_table(W, g))


def test_offspring_examples():
    np.testing.assert_allclose(offspring_to_F({2: 1.0})(W), W * (1 - W), atol=1e-15)
    F = offspring_to_F({1: 0.5, 3: 0.5})
    np.testing.assert_allclose(F(W), 1 - W - (1 - W) / 2 - (1 - W) ** 3 / 2, atol=1e-14)
    assert float(F.derivative(0.0)) == pytest.approx(1.0)
    with pytest.raises(LawError):
        offspring_to_F({2: 0.5, 3: 0.5})


@settings(max_examples=40, deadline=None)
@given(q=st.floats(0.0, 1.0), k=st.integers(3, 8))
def test_offspring_property(q, k):
    # mix of binary and (1, k) laws with mean 2
    p1 = (1 - q) * (1 - 1 / (k - 1))
    pk = (1 - q) / (k - 1)
    law = {kk: v for kk, v in {1: p1, 2: q, k: pk}.items() if v > 0}
    F = offspring_to_F(law)
    assert abs(float(F(0.0))) < 1e-14 and abs(float(F(1.0))) < 1e-14
    assert check_sc(F).passed


def test_homogeneous_behind_front():
    tr = solve_kpp(ONE, logistic(), HEAVI, GridConfig(), 10.0)
    assert float(tr.u_at(10.0, 0.0)) > 0.95
    for k in range(len(tr.times)):
        v = tr.values[k]
        assert v.min() >= 0.0 and v.max() <= 1.0


def test_front_examples():
    tr = solve_kpp(ONE, logistic(), HEAVI, GridConfig(), 100.0, eps=0.5)
    assert abs(front_kpp(tr, 0.5, 100.0) - 136.54) < 4
    assert front_kpp(tr, 0.5, 0.0) == pytest.approx(0.0, abs=GridConfig().dx)
    assert front_kpp(tr, 0.1, 50.0) >= front_kpp(tr, 0.5, 50.0) >= front_kpp(tr, 0.9, 50.0)


@pytest.mark.xfail(strict=True, reason="grid-converged m(150)/150 = 1.369: the O(1) front constant "
                   "puts the homogeneous front 3.2% below sqrt(2) at t=150")
def test_speed_at_150():
    tr = solve_kpp(ONE, logistic(), HEAVI, GridConfig(), 150.0, eps=0.5)
    assert front_kpp(tr, 0.5, 150.0) / 150.0 == pytest.approx(math.sqrt(2), rel=0.03)


def test_speed_converges_to_sqrt2():
    # increments of the front approach sqrt(2) - (3 / (2 sqrt 2)) d(ln t) / dt
    tr = solve_kpp(ONE, logistic(), HEAVI, GridConfig(), 150.0, eps=0.5)
    inc = (front_kpp(tr, 0.5, 150.0) - front_kpp(tr, 0.5, 100.0)) / 50.0
    pred = math.sqrt(2) - 3 / (2 * math.sqrt(2)) * math.log(1.5) / 50.0
    assert inc == pytest.approx(pred, rel=0.01)


FIX = GridConfig(dx=0.05, dt=0.01, w_left=20.0, w_right=40.0, recenter=False)


@pytest.fixture(scope="module")
def pair():
    F = offspring_to_F({1: 0.5, 3: 0.5})
    M = dominating_gm(F)
    return (solve_kpp(MATERN, F, HEAVI, FIX, 10.0), solve_kpp(MATERN, gm_family(M), HEAVI, FIX, 10.0),
            solve_kpp(MATERN, logistic(), HEAVI, FIX, 10.0), M)


def test_comparison_in_F(pair):
    wF, wG, wlog, M = pair
    assert M >= 1
    for k in range(len(wF.times)):
        assert np.all(wF.values[k] >= wG.values[k] - 1e-8)
        # logistic is G_1, which dominates every G_M
        assert np.all(wlog.values[k] >= wG.values[k] - 1e-8)


def test_monotone_in_data():
    a = solve_kpp(MATERN, logistic(), HEAVI, FIX, 8.0)
    b = solve_kpp(MATERN, logistic(), InitialCondition("box", 0.5), FIX, 8.0)
    for k in range(len(a.times)):
        assert np.all(a.values[k] >= b.values[k] - 1e-10)


def test_pam_dominates_kpp():
    w = solve_kpp(MATERN, logistic(), HEAVI, FIX, 8.0)
    u = solve_pam(MATERN, HEAVI, FIX, 8.0)
    for k in range(len(w.times)):
        pos = w.values[k] > 0
        assert np.all(np.log(w.values[k][pos]) <= u.log_u(k)[pos] + 1e-9)
    for t in (2.0, 5.0, 8.0):
        assert front_pam(u, 0.5, t) >= front_kpp(w, 0.5, t)


def test_total_variation_monotone_data():
    w = solve_kpp(MATERN, logistic(), HEAVI, FIX, 8.0)
    for k in range(len(w.times)):
        tv = np.sum(np.abs(np.diff(w.values[k])))
        assert tv == pytest.approx(1.0, abs=1e-3)


def test_general_F_matches_logistic_route():
    # offspring p2=1 is logistic; the RK4 route must agree with the exact logistic update
    F = offspring_to_F({2: 1.0})
    a = solve_kpp(MATERN, logistic(), HEAVI, FIX, 5.0)
    b = solve_kpp(MATERN, custom_table(W, W * (1 - W), 1 - 2 * W), HEAVI, FIX, 5.0)
    c = solve_kpp(MATERN, F, HEAVI, FIX, 5.0)
    assert np.max(np.abs(a.values[-1] - c.values[-1])) < 1e-4
    assert np.max(np.abs(a.values[-1] - b.values[-1])) < 1e-4


def test_stability_error_on_huge_step():
    F = offspring_to_F({1: 0.5, 3: 0.5})
    hot = make_field(PotentialSpec.constant(200.0))
    with pytest.raises(StabilityError):
        solve_kpp(hot, F, HEAVI, GridConfig(dx=0.05, dt=0.5, recenter=False), 5.0)
