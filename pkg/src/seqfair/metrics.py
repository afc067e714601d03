"""Counterfactual and hindsight fairness/efficiency metrics."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ValidationError


def _round_utilities(trace, weights) -> np.ndarray:
    """u(X_{t,theta}, theta) as a T x |Theta| matrix."""
    return np.einsum("tik,ik->ti", trace.allocations, np.asarray(weights, dtype=float))


def utility_differences(trace, x_opt, weights) -> np.ndarray:
    weights = np.asarray(weights, dtype=float)
    u_opt = (weights * np.asarray(x_opt, dtype=float)).sum(axis=1)
    return np.abs(_round_utilities(trace, weights) - u_opt[None, :])


def counterfactual_envy(trace, x_opt, weights) -> float:
    """Largest utility distance from the hindsight fair allocation."""
    x_opt = np.asarray(x_opt, dtype=float)
    if x_opt.shape != trace.allocations.shape[1:]:
        raise ValidationError("x_opt shape does not match the trace")
    return float(utility_differences(trace, x_opt, weights).max())


def efficiency_gap(trace) -> float:
    """Total leftover resources at the end of the horizon."""
    spent = np.einsum("ti,tik->k", trace.arrivals.astype(float), trace.allocations)
    return float(np.sum(trace.budgets - spent))


def hindsight_envy(trace, weights) -> float:
    """Largest envy any type feels towards any allocation in the trace."""
    weights = np.asarray(weights, dtype=float)
    # value[a, t, b] = utility type a gets from the bundle of type b in round t
    value = np.einsum("ak,tbk->atb", weights, trace.allocations)
    best_other = value.reshape(weights.shape[0], -1).max(axis=1)
    own_worst = np.array([value[a, :, a].min() for a in range(weights.shape[0])])
    return float(np.max(best_other - own_worst))


def prop_gap(trace, weights, budgets) -> float:
    """Largest shortfall against an equal split of the budgets."""
    weights = np.asarray(weights, dtype=float)
    equal = np.asarray(budgets, dtype=float) / trace.arrivals.sum()
    u_equal = weights @ equal
    return float(np.max(u_equal[None, :] - _round_utilities(trace, weights)))


@dataclass(frozen=True)
class MetricsReport:
    delta_ef: float
    delta_efficiency: float
    envy: float
    delta_prop: float
    utility_diffs: np.ndarray = field(repr=False)
    seed: int | None = None
    policy: str = ""
    T: int = 0
    L_T: float = float("nan")
    setting: str = ""
    runs: int = 1
    delta_ef_plus: float | None = None
    envy_violation_freq: float | None = None


def evaluate(trace, x_opt, weights, budgets, *, L_T=float("nan"), setting="") -> MetricsReport:
    diffs = utility_differences(trace, x_opt, weights)
    return MetricsReport(
        delta_ef=float(diffs.max()),
        delta_efficiency=efficiency_gap(trace),
        envy=hindsight_envy(trace, weights),
        delta_prop=prop_gap(trace, weights, budgets),
        utility_diffs=diffs,
        seed=trace.seed,
        policy=trace.policy_name,
        T=trace.T,
        L_T=L_T,
        setting=setting,
    )


def aggregate(reports, guardrails=None) -> MetricsReport:
    """Average a batch of runs sharing one configuration.

    ``delta_ef_plus`` is the worst (round, type) cell of the mean absolute
    utility difference; the violation frequency counts runs whose
    ``delta_ef`` exceeds the guardrails' largest utility gap.
    """
    reports = list(reports)
    if not reports:
        raise ValidationError("nothing to aggregate")
    first = reports[0]
    key = (first.policy, first.setting, first.T)
    for r in reports[1:]:
        same_lt = r.L_T == first.L_T or (np.isnan(r.L_T) and np.isnan(first.L_T))
        if (r.policy, r.setting, r.T) != key or not same_lt:
            raise ValidationError("cannot aggregate runs from different configurations")
    diffs = np.mean([r.utility_diffs for r in reports], axis=0)
    violation = None
    if guardrails is not None:
        gap = guardrails.utility_gap_max
        violation = float(np.mean([r.delta_ef > gap + 1e-9 for r in reports]))
    return replace(
        first,
        delta_ef=float(np.mean([r.delta_ef for r in reports])),
        delta_efficiency=float(np.mean([r.delta_efficiency for r in reports])),
        envy=float(np.mean([r.envy for r in reports])),
        delta_prop=float(np.mean([r.delta_prop for r in reports])),
        utility_diffs=diffs,
        seed=None,
        runs=len(reports),
        delta_ef_plus=float(diffs.max()),
        envy_violation_freq=violation,
    )
