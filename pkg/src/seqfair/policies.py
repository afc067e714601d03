"""Online allocation policies and their traces."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .market import DEFAULT_TOLERANCE, MarketInstance, solve_eg


class Branch(enum.IntEnum):
    FALLBACK = 0
    UPPER = 1
    LOWER = 2


@dataclass(frozen=True)
class AllocationTrace:
    arrivals: np.ndarray  # T x |Theta|
    allocations: np.ndarray  # T x |Theta| x K
    budget_path: np.ndarray  # (T + 1) x K, budget before each round
    branch: np.ndarray  # T x K of Branch values
    policy_name: str
    seed: int | None = None

    @property
    def T(self) -> int:
        return self.arrivals.shape[0]

    @property
    def budgets(self) -> np.ndarray:
        return self.budget_path[0]

    @property
    def leftover(self) -> np.ndarray:
        return self.budget_path[-1]

    @property
    def waste(self) -> float:
        return float(self.leftover.sum())

    def fallback_rounds(self) -> int:
        return int(np.any(self.branch == Branch.FALLBACK, axis=1).sum())

    def last_non_upper(self) -> np.ndarray:
        """Per resource, the last round (1-based) not on the upper guardrail; 0 if none."""
        not_upper = self.branch != Branch.UPPER
        rounds = np.arange(1, self.T + 1)[:, None]
        return np.max(np.where(not_upper, rounds, 0), axis=0)

    def write_csv(self, path) -> None:
        """One row per (round, type, resource)."""
        T, n, K = self.allocations.shape
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["t", "theta", "k", "arrivals", "allocation", "budget_before", "branch"])
            for t in range(T):
                for j in range(n):
                    for k in range(K):
                        out.writerow([
                            t + 1, j, k, int(self.arrivals[t, j]),
                            repr(float(self.allocations[t, j, k])),
                            repr(float(self.budget_path[t, k])),
                            Branch(self.branch[t, k]).name.lower(),
                        ])


def _check_shapes(guardrails, budgets, arrivals, horizon=None):
    arrivals = np.asarray(arrivals)
    budgets = np.asarray(budgets, dtype=float).reshape(-1)
    X_low = np.asarray(guardrails.X_lower, dtype=float)
    if arrivals.ndim != 2 or arrivals.shape[1] != X_low.shape[0]:
        raise ValidationError(f"arrivals must be T x {X_low.shape[0]}, got {arrivals.shape}")
    if budgets.size != X_low.shape[1]:
        raise ValidationError("budgets do not match the guardrails' resource count")
    if np.any(arrivals < 1):
        raise ValidationError("every round needs at least one arrival of each type")
    if horizon is not None and (horizon.T, horizon.num_types) != arrivals.shape:
        raise ValidationError("arrivals do not match the horizon shape")
    return arrivals, budgets


SHORTFALL_RTOL = 1e-8


def _run(arrivals, budgets, X_low, X_up, reserve, name, seed):
    """Shared round loop; ``reserve`` is None for the fixed-threshold rule."""
    T, n = arrivals.shape
    K = budgets.size
    counts = arrivals.astype(float)
    need_low = counts @ X_low
    need_up = counts @ X_up if X_up is not None else None
    totals = counts.sum(axis=1)

    allocations = np.empty((T, n, K))
    branch = np.empty((T, K), dtype=np.int8)
    path = np.empty((T + 1, K))
    path[0] = budgets
    B = budgets.copy()
    for t in range(T):
        # need_low comes out of an iterative solve, so a budget that covers it
        # up to solver accuracy still counts (the allocation is shaved to fit)
        fallback = B < need_low[t] * (1.0 - SHORTFALL_RTOL)
        shave = np.minimum(1.0, np.divide(B, need_low[t], out=np.ones(K), where=need_low[t] > 0))
        if reserve is None:
            upper = np.zeros(K, dtype=bool)
        else:
            upper = ~fallback & (B - need_up[t] >= reserve[t])
        alloc = np.where(upper, X_up, X_low * shave) if X_up is not None else X_low * shave
        alloc = np.where(fallback, B / totals[t], alloc)
        branch[t] = np.where(fallback, Branch.FALLBACK, np.where(upper, Branch.UPPER, Branch.LOWER))
        allocations[t] = alloc
        B = B - counts[t] @ alloc
        # equal split of the remainder can leave -1e-16 behind
        B = np.where(fallback & (B < 0), 0.0, B)
        path[t + 1] = B
    return AllocationTrace(arrivals, allocations, path, branch, name, seed)


def guarded_hope(guardrails, horizon, budgets, arrivals, seed=None) -> AllocationTrace:
    """Allocate on the upper guardrail whenever the budget can still cover the
    lower guardrail for a high-probability bound on future demand.

    Per round ``t`` and resource ``k``: fall back to an equal split when the
    lower guardrail is unaffordable, take the upper guardrail when the budget
    left afterwards covers ``sum_theta X_lower (E[N_>t] + Conf_t)``, otherwise
    take the lower guardrail.
    """
    arrivals, budgets = _check_shapes(guardrails, budgets, arrivals, horizon)
    X_low = np.asarray(guardrails.X_lower, dtype=float)
    X_up = np.asarray(guardrails.X_upper, dtype=float)
    reserve = (horizon.tail_means[1:] + horizon.confs[1:]) @ X_low
    return _run(arrivals, budgets, X_low, X_up, reserve, "guarded-hope", seed)


def fixed_threshold(guardrails, horizon, budgets, arrivals, seed=None) -> AllocationTrace:
    """Always allocate the lower guardrail until the budget runs short."""
    arrivals, budgets = _check_shapes(guardrails, budgets, arrivals, horizon)
    X_low = np.asarray(guardrails.X_lower, dtype=float)
    return _run(arrivals, budgets, X_low, None, None, "fixed-threshold", seed)


POLICIES = {"guarded-hope": guarded_hope, "fixed-threshold": fixed_threshold}


def hindsight_optimal(arrivals, weights, budgets, solver_tolerance: float = DEFAULT_TOLERANCE) -> np.ndarray:
    """Fair allocation for the realized totals; the same for every round."""
    totals = np.asarray(arrivals).sum(axis=0)
    if np.any(totals < 1):
        raise ValidationError("realized totals must be at least 1")
    solution = solve_eg(MarketInstance(budgets, weights, totals), tolerance=solver_tolerance)
    return np.array(solution.allocation)
