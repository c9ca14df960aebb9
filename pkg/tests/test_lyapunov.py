import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from artifact.envgen import PotentialSpec, make_field
from artifact.lyapunov import (DegenerateError, NoRootError, build_profile, empirical_legendre_process,
                               empirical_tilt, eta_bar, expected_log_mgf, legendre_star, legendre_sup,
                               lyapunov_exponent, sigma2_from_series, sigma_tilde2, sigma_tilde2_from,
                               sigma_v2_fields,
                               sigma_v2, v0, v0_variational, v0_variational_direct, v_c)

MATERN = PotentialSpec.matern(a=4.0, ei=4.0, epsilon=0.99, seed=21)  # VEL holds
NO_VEL = PotentialSpec.matern(a=2.0, ei=0.5, epsilon=0.5, seed=21)   # v0 < vc


@pytest.fixture(scope="module")
def flat():
    return build_profile(PotentialSpec.constant(1.0))


@pytest.fixture(scope="module")
def matern_prof():
    return build_profile(MATERN, n_env=8, n_units=100)


def test_expected_log_mgf_examples():
    assert expected_log_mgf(PotentialSpec.constant(1.0), -0.5) == pytest.approx((-1.0, 0.0), rel=1e-6)
    m, se = expected_log_mgf(MATERN, -0.5, n_env=8, n_units=50)
    assert -math.sqrt(2 * (4.0 + 0.5)) <= m <= -math.sqrt(1.0)
    assert se > 0


def test_std_error_shrinks():
    _, se1 = expected_log_mgf(MATERN, -0.5, n_env=4, n_units=25)
    _, se2 = expected_log_mgf(MATERN, -0.5, n_env=16, n_units=100)
    # i.i.d. block scaling predicts a factor 4; allow for estimation noise
    assert se2 < se1 / 2


def test_flat_closed_forms(flat):
    for v, eb, ls in [(math.sqrt(2), -1.0, math.sqrt(2) / 2), (2.0, -2.0, 1.0)]:
        assert eta_bar(flat, v) == pytest.approx(eb, rel=1e-4)
        assert legendre_star(flat, v) == pytest.approx(ls, rel=1e-4)
    assert lyapunov_exponent(flat, 1.0) == pytest.approx(0.5, rel=1e-4)
    assert lyapunov_exponent(flat, 0.0) == 1.0
    assert abs(lyapunov_exponent(flat, math.sqrt(2))) < 1e-4
    assert flat.v0 == pytest.approx(math.sqrt(2), abs=1e-6)
    assert v0(flat) == pytest.approx(math.sqrt(2), abs=1e-6)
    assert v0_variational(flat) == pytest.approx(math.sqrt(2), rel=1e-6)
    assert flat.vc == 0.0 and v_c(flat) == 0.0
    assert sigma_tilde2(flat) == 0.0


def test_scaled_constant():
    es = 2.5
    p = build_profile(PotentialSpec.constant(es))
    assert p.v0 == pytest.approx(math.sqrt(2 * es), rel=1e-6)


def test_negative_constant_vc():
    a = 1.5
    p = build_profile(PotentialSpec.constant(1.0, es=1.0 + a))
    assert p.vc == pytest.approx(math.sqrt(2 * a), rel=1e-3)
    with pytest.raises(NoRootError):
        eta_bar(p, 0.5 * p.vc)
    # linear segment below v_c joins continuously
    below = lyapunov_exponent(p, p.vc * (1 - 1e-9))
    above = lyapunov_exponent(p, p.vc * (1 + 1e-6))
    assert below == pytest.approx(above, abs=1e-4)


def test_profile_invariants(matern_prof):
    p = matern_prof
    order = np.argsort(p.eta_grid)
    assert np.all(np.diff(p.L_table[order]) > 0)
    assert np.all(np.diff(p.dL_table[order]) > 0)
    assert np.all(np.diff(p.eta_bar_table) < 0)
    lam = p.lambda_table
    assert np.all(np.diff(lam, 2) <= 1e-6)
    assert lyapunov_exponent(p, 0.0) == p.spec.es
    assert abs(lyapunov_exponent(p, p.v0)) < 1e-6 * p.spec.es
    for v in p.v_grid[::10]:
        e = eta_bar(p, v)
        assert abs(float(p.dL(e)) * v - 1) < 1e-8
    assert np.all(p.sigma2 >= -3 * p.sigma2_se)
    assert math.sqrt(2 * p.spec.ei) < p.v0 < math.sqrt(2 * p.spec.es)
    assert abs(p.v0 - p.v0_var) / p.v0 < 1e-2
    assert v0_variational(p) >= max(0.0, p.vc)


def test_legendre_duality(matern_prof):
    p = matern_prof
    for v in p.v_grid[::7]:
        ls = legendre_star(p, v)
        assert np.all(ls >= p.eta_grid / v - p.L_table - 1e-9)
        assert legendre_sup(p, v) == pytest.approx(ls, abs=1e-6)


def test_no_vel_regime():
    p = build_profile(NO_VEL, n_env=4, n_units=100)
    assert not p.vel
    # Lambda is the linear segment below v_c, so v0 = -es / L(0)
    assert p.v0 == pytest.approx(-NO_VEL.es / p.L0, rel=1e-6)
    assert p.v0_var == pytest.approx(p.v0, rel=1e-6)
    assert math.sqrt(2 * NO_VEL.ei) < p.v0 < math.sqrt(2 * NO_VEL.es)


def test_v0_direct_route(matern_prof):
    direct = v0_variational_direct(MATERN, n_env=8, n_units=100)
    assert direct == pytest.approx(matern_prof.v0, rel=1e-6)


def test_vc_regime():
    p = build_profile(PotentialSpec.matern(a=5.0, ei=0.5, epsilon=0.05, seed=2), n_env=4, n_units=100)
    assert p.vc > 0


def test_empirical_tilt():
    flat_field = make_field(PotentialSpec.constant(1.0))
    for x, v in [(3, 1.0), (10, 1.7)]:
        t = empirical_tilt(flat_field, x, v)
        assert t.found and t.eta_x == pytest.approx(-v * v / 2, rel=1e-5)
    neg = make_field(PotentialSpec.constant(1.0, es=3.0))  # empirical critical speed 2
    t = empirical_tilt(neg, 5, 1.0)
    assert not t.found and t.eta_x == 0.0


def test_tilt_concentration_trend(matern_prof):
    p = matern_prof
    v = p.v0
    eb = eta_bar(p, v)
    devs = {n: [] for n in (10, 160)}
    for s in range(20):
        f = make_field(MATERN.with_seed(1000 + s))
        for n in devs:
            devs[n].append(abs(empirical_tilt(f, n, v).eta_x - eb))
    assert np.mean(devs[160]) < np.mean(devs[10])


def test_sigma_examples(matern_prof):
    assert sigma_v2(PotentialSpec.constant(1.0), 1.0) == (0.0, 0.0)
    fields = matern_prof.fields
    v = matern_prof.v0
    s1, se1 = sigma_v2_fields(matern_prof, v, fields, 100, lag_cutoff=8)
    s2, se2 = sigma_v2_fields(matern_prof, v, fields, 100, lag_cutoff=16)
    assert abs(s1 - s2) < 2 * max(se1, se2)
    assert s1 >= -3 * se1
    assert matern_prof.sigma_tilde2 > 3 * matern_prof.sigma_tilde2_se


def test_sigma_tilde_degenerate(monkeypatch):
    import artifact.lyapunov as ly

    class Flat:
        v0 = 1.0
        L = staticmethod(lambda e: 0.0)
    monkeypatch.setattr(ly, "eta_bar", lambda p, v: -1.0)
    with pytest.raises(DegenerateError):
        sigma_tilde2_from(Flat(), 1.0)


def test_sigma_tilde_deterministic():
    a = build_profile(MATERN, n_env=4, n_units=60)
    b = build_profile(MATERN, n_env=4, n_units=60)
    assert a.sigma_tilde2 == b.sigma_tilde2


def test_empirical_legendre_process(flat, matern_prof):
    w, ok = empirical_legendre_process(make_field(PotentialSpec.constant(1.0)), 1.5, 20, flat)
    assert ok and abs(w) < 1e-6
    f = make_field(MATERN.with_seed(5))
    w20, _ = empirical_legendre_process(f, matern_prof.v0, 20, matern_prof)
    w40, _ = empirical_legendre_process(f, matern_prof.v0, 40, matern_prof)
    assert np.isfinite(w20) and np.isfinite(w40)


def test_sigma2_series_reference():
    rng = np.random.default_rng(0)
    e = rng.standard_normal((8, 20001))
    x = e[:, 1:] + 0.5 * e[:, :-1]  # MA(1): long-run variance (1 + 0.5)^2
    est, se = sigma2_from_series(x, 4)
    assert abs(est - 2.25) < 4 * se


@settings(max_examples=20, deadline=None)
@given(v=st.floats(0.3, 6.0))
def test_flat_lambda_property(flat, v):
    if v > 1.0 / float(flat.dL(flat.eta_lo)):
        return
    assert lyapunov_exponent(flat, v) == pytest.approx(1 - v * v / 2, abs=1e-3)
