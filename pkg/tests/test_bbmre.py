import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import kstest, norm

from artifact.bbmre import (BINARY, CapError, OffspringLaw, ReliabilityError, bridge_stay_prob, count_leq,
                            degenerate_law, estimate_both, estimate_mean_count, estimate_w, replicas,
                            simulate, tube_moments)
from artifact.envgen import PotentialSpec, make_field
from artifact.kppsolve import logistic, solve_kpp
from artifact.pdecore import GridConfig, InitialCondition

ONE = make_field(PotentialSpec.constant(1.0))
MATERN = make_field(PotentialSpec.matern(a=1.0, ei=0.5, epsilon=0.5, seed=4))


def test_law_validation():
    with pytest.raises(ValueError):
        OffspringLaw((0, 2), (0.5, 0.5))
    with pytest.raises(ValueError):
        OffspringLaw((2, 3), (0.5, 0.5))
    law = OffspringLaw.from_dict({1: 0.5, 3: 0.5})
    assert law.mean == 2.0 and law.m2 == 5.0
    assert OffspringLaw.from_dict(law.to_dict()) == law


def test_no_branching_is_brownian():
    x0, T = 0.7, 2.0
    pos = np.array([simulate(MATERN, degenerate_law(), x0, T, seed=s).positions[0] for s in range(2000)])
    s = replicas(MATERN, degenerate_law(), x0, T, 10_000, seed=1, y=math.inf)
    assert np.all(s.population == 1)
    assert kstest(pos, norm(loc=x0, scale=math.sqrt(T)).cdf).pvalue > 0.01


def test_no_branching_positions_from_blocks():
    # positions of the block sampler, recovered from the count below a grid of levels
    x0, T = 0.0, 1.0
    levels = np.linspace(-2, 2, 9)
    fr = [replicas(ONE, degenerate_law(), x0, T, 10_000, seed=2, y=float(y)).count_leq.mean() for y in levels]
    se = np.sqrt(np.array(fr) * (1 - np.array(fr)) / 10_000)
    assert np.all(np.abs(np.array(fr) - norm.cdf(levels / math.sqrt(T))) < 4 * se + 1e-12)


def test_yule_mean():
    s = replicas(ONE, BINARY, 0.0, 1.0, 10_000, seed=3, y=math.inf)
    m, se = s.population.mean(), s.population.std(ddof=1) / 100
    assert abs(m - math.e) < 3 * se


def test_population_between_constant_rate_bounds():
    t = 1.5
    s = replicas(MATERN, BINARY, 0.0, t, 10_000, seed=4, y=math.inf)
    m, se = s.population.mean(), s.population.std(ddof=1) / 100
    spec = MATERN.spec
    assert math.exp(spec.ei * t) - 3 * se <= m <= math.exp(spec.es * t) + 3 * se


def test_monotone_in_potential():
    # xi_matern <= es pointwise, so the constant-es field has the larger mean population
    hot = make_field(PotentialSpec.constant(MATERN.spec.es))
    a = replicas(MATERN, BINARY, 0.0, 1.0, 10_000, seed=5, y=math.inf).population
    b = replicas(hot, BINARY, 0.0, 1.0, 10_000, seed=5, y=math.inf).population
    se = math.sqrt(a.var() / a.size + b.var() / b.size)
    assert a.mean() <= b.mean() + 3 * se


def test_count_leq_examples():
    ps = simulate(ONE, BINARY, 0.0, 2.0, seed=11)
    assert count_leq(ps, math.inf) == ps.positions.size
    assert count_leq(ps, ps.positions.min() - 1) == 0
    ys = np.linspace(-5, 5, 41)
    c = [count_leq(ps, y) for y in ys]
    assert all(np.diff(c) >= 0)
    capped = simulate(ONE, BINARY, 0.0, 30.0, cap=50, seed=1)
    assert capped.cap_hit
    with pytest.raises(CapError):
        count_leq(capped, 0.0)


def test_cap_reliability_error():
    with pytest.raises(ReliabilityError):
        estimate_w(ONE, BINARY, 0.0, 10.0, 200, cap=20)


def test_estimate_w_near_origin():
    p, se = estimate_w(ONE, BINARY, -1.0, 0.01, 2000)
    assert p > 0.99


def test_mean_count_closed_form():
    m, se = estimate_mean_count(ONE, BINARY, 0.0, 1.0, 20_000, seed=6)
    assert abs(m - math.e / 2) < 3 * se


def test_mean_dominates_probability():
    w, _, m, _ = estimate_both(MATERN, BINARY, 1.0, 2.0, 5000, seed=7)
    assert m >= w


def test_mckean_small():
    w, se, _, _ = estimate_both(ONE, BINARY, 2.0, 2.0, 20_000, seed=8)
    g = GridConfig(dx=0.02, dt=0.001, w_left=20, w_right=30, recenter=False)
    pde = float(solve_kpp(ONE, logistic(), InitialCondition(), g, 2.0).u_at(2.0, 2.0))
    assert abs(w - pde) < 3 * se


def test_deterministic_replicas():
    a = replicas(MATERN, BINARY, 0.5, 1.0, 3000, seed=9)
    b = replicas(MATERN, BINARY, 0.5, 1.0, 3000, seed=9)
    assert np.array_equal(a.population, b.population) and np.array_equal(a.count_leq, b.count_leq)


def test_tube_degenerate_law():
    mc1, mc2, *_ = tube_moments(MATERN, degenerate_law(), 0.0, 1.0, -1.0, 1.0, 5000)
    assert mc1 == mc2 and 0.0 < mc1 < 1.0


def test_tube_first_moment_tight():
    mc1, _, fk1, _, se1, _ = tube_moments(ONE, BINARY, 0.0, 1.0, -1.0, 1.0, 20_000, seed=2)
    assert abs(mc1 - fk1) < 3 * se1


def test_bridge_probability_limits():
    assert float(bridge_stay_prob(0.0, 0.0, 1e-6, -1.0, 1.0)) == pytest.approx(1.0)
    p = bridge_stay_prob(0.0, 0.0, 1.0, -math.inf, 1.0)
    assert float(p) == pytest.approx(1 - math.exp(-2.0), abs=1e-12)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(-2, 2), b=st.floats(-2, 2), dt=st.floats(0.01, 3.0))
def test_bridge_probability_property(a, b, dt):
    p = float(bridge_stay_prob(a, b, dt, -2.5, 2.5))
    assert 0.0 <= p <= 1.0
    assert p <= float(bridge_stay_prob(a, b, dt, -3.0, 3.0)) + 1e-12
