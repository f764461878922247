import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from attrib_audit.errors import ConfigurationError
from attrib_audit.querytest import (
    SEC5_PRESET,
    PyramidBump,
    QueryPlan,
    adversary_detection,
    empirical_rates,
    rates_table,
    rows_to_csv,
    run_query_test,
    theoretical_rates,
)


def zero(X):
    return np.zeros(len(X))


def one(X):
    return np.ones(len(X))


def test_zero_model_never_rejected_without_coin():
    plan = QueryPlan(1.0, 2, 10, 0.0, 0.1, 1.0)
    assert all(run_query_test(plan, zero, t) == 0 for t in range(50))


def test_positive_model_always_rejected():
    plan = QueryPlan(1.0, 2, 1, 0.0, 0.1, 1.0)
    assert all(run_query_test(plan, one, t) == 1 for t in range(50))


def test_coin_rate_matches_tau():
    from attrib_audit.querytest import _rejection_rate

    plan = QueryPlan(1.0, 1, 3, 0.3, 0.1, 1.0, rng_seed=5)
    assert abs(_rejection_rate(plan, zero, 100_000, stream=0) - 0.3) <= 0.005


def test_run_is_deterministic_per_trial():
    plan = QueryPlan(1.0, 2, 4, 0.5, 0.2, 1.0, rng_seed=9)
    bump = PyramidBump.hardest(plan)
    assert [run_query_test(plan, bump, t) for t in range(30)] == [run_query_test(plan, bump, t) for t in range(30)]


def test_theoretical_rates_examples():
    # p=1, delta=1, eps=0.25, L=1: hit probability 0.5 per query
    assert theoretical_rates(QueryPlan(1.0, 1, 1, 0.0, 0.25, 1.0)) == pytest.approx((1.0, 0.5))
    assert theoretical_rates(QueryPlan(1.0, 1, 2, 0.0, 0.25, 1.0))[1] == pytest.approx(0.75)
    assert theoretical_rates(QueryPlan(1.0, 2, 1, 0.5, 0.25, 1.0)) == pytest.approx((0.5, 1 - 0.5 * 0.75))


def _hit_fraction_mc(plan, samples=400_000, seed=0):
    """Independent estimate of P(one uniform query sees the hardest bump positive)."""
    rng = np.random.default_rng(seed)
    side = 2 * plan.epsilon / plan.lipschitz_L
    pts = rng.uniform(0, plan.delta, size=(samples, plan.p))
    return float(np.mean(np.all(pts < side, axis=1)))


@pytest.mark.parametrize("plan", [QueryPlan(1.0, 1, 5, 0.1, 0.1, 1.0), QueryPlan(0.5, 2, 5, 0.0, 0.1, 1.5)])
def test_theoretical_sensitivity_against_independent_hit_probability(plan):
    q = _hit_fraction_mc(plan)
    sens = 1 - (1 - plan.tau) * (1 - q) ** plan.n
    assert theoretical_rates(plan)[1] == pytest.approx(sens, abs=0.01)


def test_spec_is_one_minus_tau_over_grid():
    for tau in np.linspace(0, 1, 21):
        assert theoretical_rates(QueryPlan(1.0, 3, 7, float(tau), 0.2, 1.0))[0] == pytest.approx(1 - tau)


plan_args = st.tuples(st.floats(0.2, 2.0), st.integers(1, 4), st.integers(0, 50),
                      st.floats(0.0, 1.0), st.floats(0.01, 0.05), st.floats(1.0, 3.0))


@given(plan_args, st.integers(1, 20))
def test_sensitivity_monotone_in_n(args, extra):
    d, p, n, tau, eps, L = args
    a, b = QueryPlan(d, p, n, tau, eps, L), QueryPlan(d, p, n + extra, tau, eps, L)
    assert theoretical_rates(b)[1] >= theoretical_rates(a)[1]


@given(plan_args)
def test_sensitivity_monotone_in_epsilon_l_delta(args):
    d, p, n, tau, eps, L = args
    base = theoretical_rates(QueryPlan(d, p, n, tau, eps, L))[1]
    assert theoretical_rates(QueryPlan(d, p, n, tau, eps * 1.5, L))[1] >= base
    assert theoretical_rates(QueryPlan(d, p, n, tau, eps, L * 1.5))[1] <= base
    assert theoretical_rates(QueryPlan(d * 1.5, p, n, tau, eps, L))[1] <= base


@given(plan_args)
def test_rates_are_probabilities(args):
    spec, sens = theoretical_rates(QueryPlan(*args))
    assert 0 <= spec <= 1 and 0 <= sens <= 1
    assert spec + sens >= 1 - 1e-12  # tau cancels: sens >= tau = 1 - spec


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        QueryPlan(0.1, 1, 5, 0.0, 0.1, 1.0)  # 2 eps > L delta
    with pytest.raises(ConfigurationError):
        QueryPlan(1.0, 0, 5, 0.0, 0.1, 1.0)
    with pytest.raises(ConfigurationError):
        QueryPlan(1.0, 1, -1, 0.0, 0.1, 1.0)
    with pytest.raises(ConfigurationError):
        QueryPlan(1.0, 1, 1, 1.5, 0.1, 1.0)
    QueryPlan(1.0, 1, 0, 0.0, 0.1, 1.0)  # n = 0 allowed


def test_r_rounding_guard():
    assert QueryPlan(0.3, 1, 1, 0.0, 0.05, 1.0).r == 3
    assert QueryPlan(1.0, 1, 1, 0.0, 0.25, 1.0).r == 2


def test_hardest_bump_properties():
    plan = QueryPlan(1.0, 2, 5, 0.0, 0.2, 2.0)
    bump = PyramidBump.hardest(plan)
    assert bump.lipschitz == pytest.approx(plan.lipschitz_L)
    assert bump(bump.center[None, :])[0] == pytest.approx(plan.epsilon)
    side = 2 * plan.epsilon / plan.lipschitz_L
    assert bump(np.array([[side * 0.99, side * 0.5]]))[0] > 0
    assert bump(np.array([[side * 1.01, side * 0.5]]))[0] == 0


@given(st.floats(0.2, 2.0), st.integers(1, 3), st.integers(0, 30))
def test_in_cell_bump_is_confined_and_lipschitz(delta, p, seed):
    plan = QueryPlan(delta, p, 1, 0.0, delta / 5, 1.0)
    r = plan.r
    cell = int(np.random.default_rng(seed).integers(r ** p))
    bump = PyramidBump.in_cell(plan, cell)
    assert bump.lipschitz <= plan.lipschitz_L * (1 + 1e-9)
    assert bump.height == plan.epsilon
    pts = np.random.default_rng(seed).uniform(0, delta, size=(2000, p))
    inside = np.all(np.abs(pts - bump.center) < delta / r / 2, axis=1)
    assert np.all(bump(pts)[~inside] == 0)


def test_in_cell_requires_two_cells():
    with pytest.raises(ConfigurationError):
        PyramidBump.in_cell(QueryPlan(1.0, 1, 1, 0.0, 0.3, 1.0), 0)


def test_adversary_with_no_queries():
    rate, bound, se = adversary_detection(QueryPlan(1.0, 2, 0, 0.0, 0.1, 1.0), 100)
    assert (rate, bound, se) == (0.0, 0.0, 0.0)


def test_tau_one_gives_zero_specificity():
    assert empirical_rates(QueryPlan(1.0, 1, 2, 1.0, 0.1, 1.0), 200).spec_hat == 0.0


def test_empirical_rates_match_theory_small_plan():
    emp = empirical_rates(QueryPlan(1.0, 2, 5, 0.2, 0.2, 1.0, rng_seed=1), 5000)
    assert emp.within_4se


def test_empirical_rates_do_not_depend_on_block_size(monkeypatch):
    from attrib_audit import querytest

    plan = QueryPlan(1.0, 2, 50, 0.1, 0.2, 1.0, rng_seed=4)
    full = tuple(empirical_rates(plan, 300))
    monkeypatch.setattr(querytest, "_BLOCK_BUDGET", 170)
    assert tuple(empirical_rates(plan, 300)) == full


def test_sec5_preset_theory():
    spec, sens = theoretical_rates(SEC5_PRESET)
    assert spec == 1.0
    assert sens == pytest.approx(1 - (1 - 0.4 ** 10) ** 21960)
    assert sens >= 0.88


def test_rates_table_without_trials_and_csv():
    rows = rates_table([QueryPlan(1.0, 1, 1, 0.0, 0.25, 1.0)], 0)
    assert math.isnan(rows[0]["sens_hat"]) and rows[0]["sens"] == 0.5
    text = rows_to_csv(rows)
    header, line = text.strip().split("\n")
    assert header.startswith("delta,p,n,tau")
    assert "nan" in line
