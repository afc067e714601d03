from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import seqfair.guardrails as guardrails_module
from seqfair.arrivals import ClampedPoisson, Deterministic, Empirical, HorizonSpec, run_rng
from seqfair.errors import InfeasibleGuardrailsError, ValidationError
from seqfair.guardrails import build_guardrails, compute_c, envy_scale, min_feasible_lt
from seqfair.market import MarketInstance, solve_eg
from seqfair.policies import hindsight_optimal


def test_compute_c_examples():
    assert compute_c(0.2, 0.05, 1.0, 1.0, 1.0) == pytest.approx(0.16)
    assert compute_c(0.3, 0.1, 1.0, 1.0, 1.0) == pytest.approx(0.23)


def test_compute_c_rejects_boundaries():
    with pytest.raises(InfeasibleGuardrailsError) as info:
        compute_c(0.0, 0.0, 1.0, 1.0, 1.0)
    assert info.value.side == "low" and info.value.c == 0.0
    with pytest.raises(InfeasibleGuardrailsError) as info:
        compute_c(5.0, 0.1, 1.0, 1.0, 1.0)
    assert info.value.side == "high"
    assert isinstance(info.value, ValidationError)


def test_min_feasible_examples():
    fake = SimpleNamespace(expected_counts=np.array([150.0]), confs=np.array([[7.5]]))
    assert min_feasible_lt(fake, [[1.0]], [150.0]) == pytest.approx(0.1)
    fixed = HorizonSpec.replicated(10, 0.1, [Deterministic(3)])
    assert min_feasible_lt(fixed, [[1.0]], [30.0]) == 0.0
    # mean 7/8 + 5/8 = 1.5 and half-range 2, so E[N] = 150 and rho_max = 2
    h = HorizonSpec.replicated(100, 0.1, [Empirical({1: 7 / 8, 5: 1 / 8})])
    assert h.expected_counts[0] == pytest.approx(150.0)
    assert min_feasible_lt(h, [[1.0]], [150.0]) == pytest.approx(0.9912, abs=1e-4)


def test_worked_single_resource_example():
    g = build_guardrails([150.0], [[1.0]], [150.0], 0.3, conf0=[15.0])
    assert g.gamma == pytest.approx(0.1)
    assert g.c == pytest.approx(0.23)
    np.testing.assert_allclose(g.n_upper, [165.0])
    np.testing.assert_allclose(g.n_lower, [115.5])
    np.testing.assert_allclose(g.X_lower, [[150 / 165]], rtol=1e-9)
    np.testing.assert_allclose(g.X_upper, [[150 / 115.5]], rtol=1e-9)
    expected_gap = 150 * (165 - 115.5) / (165 * 115.5)
    np.testing.assert_allclose(g.utility_gap, [expected_gap], rtol=1e-9)
    assert g.utility_gap_max == pytest.approx(0.3896, abs=1e-4)
    # exceeds L_T itself but respects the relaxed bound
    assert not g.diagnostics["gap_within_lt"]
    assert g.diagnostics["gap_within_relaxed_lt"]
    assert g.diagnostics["gap_within_budget_bound"]


def test_exactly_two_solves(monkeypatch):
    calls = []

    def counting(instance, **kw):
        calls.append(instance.counts.copy())
        return solve_eg(instance, **kw)

    monkeypatch.setattr(guardrails_module, "solve_eg", counting)
    g = build_guardrails([150.0], [[1.0]], [150.0], 0.3, conf0=[15.0])
    assert len(calls) == 2
    assert {tuple(c) for c in calls} == {tuple(g.n_lower), tuple(g.n_upper)}


def test_symmetric_types_scale_exactly():
    g = build_guardrails([1.0, 1.0], [[1.0, 2.0], [1.0, 2.0]], [3.0, 3.0], 1.0, conf0=[0.1, 0.1])
    factor = (1 + g.gamma) / (1 - g.c)
    np.testing.assert_allclose(g.X_upper, g.X_lower * factor, rtol=1e-7)


def test_vanishing_envy_budget_collapses_the_guardrails():
    weights, budgets, expected = [[2.0]], [12.0], [6.0]
    kappa = envy_scale(weights, budgets, expected)
    base = solve_eg(MarketInstance(budgets, weights, expected))
    for eps in (1e-2, 1e-4):
        g = build_guardrails(expected, weights, budgets, kappa * eps, conf0=[0.0])
        assert g.gamma == 0.0 and g.c == pytest.approx(eps)
        np.testing.assert_allclose(g.n_upper, expected)
        assert g.utility_gap[0] / eps == pytest.approx(base.utilities[0], rel=2 * eps)
    assert np.max(np.abs(g.X_upper - g.X_lower)) < 1e-3


def test_argument_validation():
    with pytest.raises(ValidationError):
        build_guardrails([1.0], [[1.0]], [1.0], 0.5)
    h = HorizonSpec.replicated(5, 0.1, [Deterministic(1)])
    with pytest.raises(ValidationError):
        build_guardrails([1.0], [[1.0]], [1.0], 0.5, horizon=h, conf0=[0.0])
    with pytest.raises(ValidationError):
        build_guardrails([0.0], [[1.0]], [1.0], 0.5, conf0=[0.0])


def test_infeasible_envy_budget_propagates():
    with pytest.raises(InfeasibleGuardrailsError):
        build_guardrails([100.0], [[1.0]], [100.0], 0.05, conf0=[10.0])


def test_to_dict_has_the_reported_fields():
    data = build_guardrails([150.0], [[1.0]], [150.0], 0.3, conf0=[15.0]).to_dict()
    for key in ("gamma", "c", "n_upper", "n_lower", "X_upper", "X_lower", "utility_gap", "diagnostics"):
        assert key in data


@st.composite
def guardrail_inputs(draw):
    k = draw(st.integers(1, 4))
    n = draw(st.integers(1, 4))
    rng = np.random.default_rng(draw(st.integers(0, 2**32 - 1)))
    weights = rng.uniform(0.5, 3.0, (n, k))
    expected = rng.uniform(20.0, 200.0, n)
    budgets = np.full(k, expected.sum())  # beta_min = 1
    gamma = rng.uniform(0.0, 0.2)
    kappa = envy_scale(weights, budgets, expected)
    c = rng.uniform(0.05, 0.6)
    lt = (c + gamma) / (1 + gamma) * kappa
    return weights, budgets, expected, gamma * expected, lt


@settings(max_examples=40)
@given(guardrail_inputs())
def test_guardrail_invariants(inputs):
    weights, budgets, expected, conf0, lt = inputs
    g = build_guardrails(expected, weights, budgets, lt, conf0=conf0)
    np.testing.assert_allclose(g.n_upper, (1 + g.gamma) * expected, rtol=1e-12)
    np.testing.assert_allclose(g.n_lower, (1 - g.c) * expected, rtol=1e-12)
    np.testing.assert_allclose(g.n_upper, (1 + g.gamma) / (1 - g.c) * g.n_lower, rtol=1e-12)
    u_up = (weights * g.X_upper).sum(axis=1)
    u_low = (weights * g.X_lower).sum(axis=1)
    assert np.all(u_low <= u_up + 1e-9)
    # closed-form scaling identity at the deflated prices
    np.testing.assert_allclose(g.utility_gap, g.scaling_gap, rtol=1e-6, atol=1e-8)
    premise = np.max(weights / g.prices_lower, axis=1) <= envy_scale(weights, budgets, expected)
    assert np.all(g.utility_gap[premise] <= lt * (1 + 1e-7))
    assert g.diagnostics["gap_within_budget_bound"]
    if weights.shape[1] == 1:
        assert g.diagnostics["gap_within_relaxed_lt"]


def test_relaxed_gap_bound_fails_with_several_resources():
    # one type, two resources: its utility adds up across resources, which the
    # norm-based premise does not account for
    g = build_guardrails([100.0], [[1.0, 1.2]], [100.0, 100.0], 0.6, conf0=[2.0])
    assert not g.diagnostics["gap_within_relaxed_lt"]
    assert g.diagnostics["gap_within_budget_bound"]


def test_sandwich_on_concentration_runs():
    h = HorizonSpec.replicated(100, 0.1, [ClampedPoisson(1.5)])
    budgets = np.array([h.expected_counts.sum()])
    g = build_guardrails(None, [[1.0]], budgets, 2 * 100 ** (-1 / 3), horizon=h)
    checked = 0
    for i in range(200):
        arrivals = h.sample_arrivals(run_rng(17, i))
        if not h.concentration_event(arrivals):
            continue
        checked += 1
        totals = arrivals.sum(axis=0)
        assert np.all(g.n_lower <= totals) and np.all(totals <= g.n_upper)
        u_opt = hindsight_optimal(arrivals, [[1.0]], budgets)[:, 0]
        assert np.all(g.X_lower[:, 0] <= u_opt + 1e-9)
        assert np.all(u_opt <= g.X_upper[:, 0] + 1e-9)
    assert checked >= 180
