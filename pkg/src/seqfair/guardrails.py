"""Upper and lower allocation guardrails built from expected demand.

The lower guardrail is the fair allocation for an inflated population
``(1 + gamma) E[N]``; the upper guardrail is the fair allocation for a deflated
population ``(1 - c) E[N]``.  Because the two populations are proportional,
the guardrails differ by a pure scaling factor and so does every utility.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasibleGuardrailsError, ValidationError
from .market import DEFAULT_TOLERANCE, MarketInstance, solve_eg

log = logging.getLogger(__name__)


def envy_scale(weights, budgets, expected_counts) -> float:
    """``||w||_inf^2 / (||w||_min * ||beta_avg||_min)``, the utility scale of the guarantees."""
    weights = np.asarray(weights, dtype=float)
    beta = np.asarray(budgets, dtype=float) / np.sum(expected_counts)
    return float(weights.max() ** 2 / (weights.min() * beta.min()))


def compute_c(L_T: float, gamma: float, w_min: float, w_inf: float, beta_min: float) -> float:
    """Shrink factor for the deflated population.

    Raises :class:`InfeasibleGuardrailsError` unless the result lies in (0, 1).
    """
    c = (w_min * beta_min / w_inf**2) * L_T * (1.0 + gamma) - gamma
    if c <= 0:
        raise InfeasibleGuardrailsError(
            f"c = {c:.6g} <= 0: L_T = {L_T:.6g} is too small for gamma = {gamma:.6g}",
            c=c,
            side="low",
        )
    if c >= 1:
        raise InfeasibleGuardrailsError(
            f"c = {c:.6g} >= 1: L_T = {L_T:.6g} is too large (deflated population vanishes)",
            c=c,
            side="high",
        )
    return c


def gamma_from_conf(conf0, expected_counts) -> float:
    return float(np.max(np.asarray(conf0, dtype=float) / np.asarray(expected_counts, dtype=float)))


def min_feasible_lt(horizon, weights, budgets) -> float:
    """Smallest envy budget for which the sandwich guarantee is proven."""
    expected = horizon.expected_counts
    gamma = gamma_from_conf(horizon.confs[0], expected)
    return 2.0 * envy_scale(weights, budgets, expected) * gamma


@dataclass(frozen=True)
class Guardrails:
    L_T: float
    gamma: float
    c: float
    expected_counts: np.ndarray
    n_upper: np.ndarray
    n_lower: np.ndarray
    X_upper: np.ndarray
    X_lower: np.ndarray
    prices_upper: np.ndarray
    prices_lower: np.ndarray
    weights: np.ndarray
    budgets: np.ndarray
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def utility_gap(self) -> np.ndarray:
        w = self.weights
        return (w * self.X_upper).sum(axis=1) - (w * self.X_lower).sum(axis=1)

    @property
    def utility_gap_max(self) -> float:
        return float(self.utility_gap.max())

    @property
    def scaling_gap(self) -> np.ndarray:
        """Closed-form utility gap from the scaling identity, evaluated at the deflated prices."""
        factor = (self.c + self.gamma) / (1.0 + self.gamma)
        return factor * np.max(self.weights / self.prices_lower, axis=1)

    def to_dict(self) -> dict:
        return {
            "L_T": self.L_T,
            "gamma": self.gamma,
            "c": self.c,
            "n_upper": self.n_upper.tolist(),
            "n_lower": self.n_lower.tolist(),
            "X_upper": self.X_upper.tolist(),
            "X_lower": self.X_lower.tolist(),
            "utility_gap": self.utility_gap.tolist(),
            "diagnostics": self.diagnostics,
        }


def build_guardrails(
    expected_counts,
    weights,
    budgets,
    L_T: float,
    *,
    horizon=None,
    conf0=None,
    solver_tolerance: float = DEFAULT_TOLERANCE,
) -> Guardrails:
    """Solve for both guardrails (exactly two Eisenberg-Gale solves).

    The confidence widths at ``t = 0`` come from ``horizon`` or are passed
    directly as ``conf0``.  ``expected_counts`` may be ``None`` when a horizon
    is given.
    """
    if (horizon is None) == (conf0 is None):
        raise ValidationError("pass exactly one of horizon or conf0")
    if horizon is not None:
        conf0 = horizon.confs[0]
        if expected_counts is None:
            expected_counts = horizon.expected_counts
    expected = np.asarray(expected_counts, dtype=float).reshape(-1)
    weights = np.asarray(weights, dtype=float)
    budgets = np.asarray(budgets, dtype=float).reshape(-1)
    if np.any(expected <= 0):
        raise ValidationError("expected counts must be strictly positive")

    beta_min = float((budgets / expected.sum()).min())
    w_min, w_inf = float(weights.min()), float(weights.max())
    gamma = gamma_from_conf(conf0, expected)
    c = compute_c(L_T, gamma, w_min, w_inf, beta_min)
    n_upper = (1.0 + gamma) * expected
    n_lower = (1.0 - c) * expected

    optimistic = solve_eg(MarketInstance(budgets, weights, n_lower), tolerance=solver_tolerance)
    pessimistic = solve_eg(MarketInstance(budgets, weights, n_upper), tolerance=solver_tolerance)

    rails = Guardrails(
        L_T=float(L_T),
        gamma=gamma,
        c=c,
        expected_counts=expected,
        n_upper=n_upper,
        n_lower=n_lower,
        X_upper=np.array(optimistic.allocation),
        X_lower=np.array(pessimistic.allocation),
        prices_upper=np.array(pessimistic.prices),
        prices_lower=np.array(optimistic.prices),
        weights=weights,
        budgets=budgets,
    )
    rails.diagnostics.update(_diagnostics(rails, beta_min, w_min, w_inf))
    failed = [k for k, ok in rails.diagnostics.items() if isinstance(ok, bool) and not ok]
    if failed:
        log.warning("guardrail diagnostics not met: %s", ", ".join(failed))
    return rails


def _diagnostics(rails: Guardrails, beta_min, w_min, w_inf) -> dict:
    scale = w_inf**2 / (w_min * beta_min)
    gap = rails.utility_gap
    alloc_gap = float(np.max(np.abs(rails.X_upper - rails.X_lower)))
    relaxed = (1.0 + rails.gamma) / (1.0 - rails.c) * rails.L_T
    shrink = (rails.c + rails.gamma) / (1.0 + rails.gamma)
    budget_bound = shrink * (rails.weights @ rails.budgets) / rails.n_lower
    return {
        "meets_min_lt": rails.L_T >= 2.0 * scale * rails.gamma,
        "gamma_at_most_half": rails.gamma <= 0.5,
        "gap_within_lt": bool(np.all(gap <= rails.L_T)),
        "gap_within_relaxed_lt": bool(np.all(gap <= relaxed * (1 + 1e-9))),
        # a type's utility never exceeds buying the whole supply, so this one always holds
        "gap_within_budget_bound": bool(np.all(gap <= budget_bound * (1 + 1e-7) + 1e-12)),
        "alloc_gap_lower_bound": alloc_gap >= rails.L_T * beta_min**2 * w_min / w_inf,
        "alloc_gap_upper_bound": alloc_gap
        <= rails.L_T * float(rails.budgets.max()) * beta_min * w_min / w_inf,
        "alloc_gap": alloc_gap,
        "scaling_identity_error": float(np.max(np.abs(gap - rails.scaling_gap))),
    }
