"""Eisenberg-Gale solver for linear Fisher markets.

Types play the role of buyers: every individual of type ``theta`` carries one
unit of money, so type ``theta`` has total money ``N_theta``.  The optimum of

    max  sum_theta N_theta * log <w_theta, x_theta>
    s.t. sum_theta N_theta * x_theta <= B,  x >= 0

is the market equilibrium; prices are the duals of the budget constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import lsq_linear
from scipy.sparse.csgraph import connected_components

from .errors import ConvergenceError, DomainError, ValidationError

DEFAULT_TOLERANCE = 1e-8
DEFAULT_MAX_ITERATIONS = 200_000


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MarketInstance:
    """Budgets, per-type weight vectors and per-type (real-valued) counts."""

    budgets: np.ndarray
    weights: np.ndarray
    counts: np.ndarray
    type_ids: tuple = ()

    def __post_init__(self):
        budgets = _frozen(self.budgets).reshape(-1)
        weights = np.array(self.weights, dtype=float)
        if weights.ndim == 1:
            weights = weights.reshape(-1, budgets.size)
        weights = _frozen(weights)
        counts = _frozen(self.counts).reshape(-1)
        if budgets.size == 0:
            raise ValidationError("need at least one resource")
        if weights.shape != (counts.size, budgets.size):
            raise ValidationError(
                f"weights shape {weights.shape} does not match "
                f"({counts.size} types, {budgets.size} resources)"
            )
        for name, arr in (("budgets", budgets), ("weights", weights), ("counts", counts)):
            if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
                raise ValidationError(f"all {name} must be finite and strictly positive")
        type_ids = tuple(self.type_ids) or tuple(range(counts.size))
        if len(type_ids) != counts.size:
            raise ValidationError("type_ids length does not match number of types")
        object.__setattr__(self, "budgets", budgets)
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "type_ids", type_ids)

    @property
    def num_resources(self) -> int:
        return self.budgets.size

    @property
    def num_types(self) -> int:
        return self.counts.size

    @property
    def beta_avg(self) -> np.ndarray:
        """Average amount of each resource per individual."""
        return self.budgets / self.counts.sum()

    @property
    def w_min(self) -> float:
        return float(self.weights.min())

    @property
    def w_inf(self) -> float:
        return float(self.weights.max())

    def with_counts(self, counts) -> "MarketInstance":
        return MarketInstance(self.budgets, self.weights, counts, self.type_ids)

    @classmethod
    def from_dict(cls, data: Mapping) -> "MarketInstance":
        """Build from ``{"budgets": [...], "types": [{"id", "weights", "count"}, ...]}``."""
        try:
            types = list(data["types"])
            return cls(
                budgets=data["budgets"],
                weights=[t["weights"] for t in types],
                counts=[t["count"] for t in types],
                type_ids=tuple(t.get("id", i) for i, t in enumerate(types)),
            )
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed instance description: {exc!r}") from exc

    def to_dict(self) -> dict:
        return {
            "budgets": self.budgets.tolist(),
            "types": [
                {"id": tid, "weights": w.tolist(), "count": float(n)}
                for tid, w, n in zip(self.type_ids, self.weights, self.counts)
            ],
        }


@dataclass(frozen=True)
class EGSolution:
    """Per-type allocation, resource prices and the KKT certificate."""

    allocation: np.ndarray
    prices: np.ndarray
    kkt_residual: float
    iterations: int
    utilities: np.ndarray = field(init=False)
    weights: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        allocation = _frozen(self.allocation)
        object.__setattr__(self, "allocation", allocation)
        object.__setattr__(self, "prices", _frozen(self.prices))
        if self.weights is not None:
            w = _frozen(self.weights)
            object.__setattr__(self, "weights", w)
            object.__setattr__(self, "utilities", _frozen((w * allocation).sum(axis=1)))
        else:
            object.__setattr__(self, "utilities", None)

    def to_dict(self) -> dict:
        return {
            "allocation": self.allocation.tolist(),
            "prices": self.prices.tolist(),
            "utilities": None if self.utilities is None else self.utilities.tolist(),
            "kkt_residual": self.kkt_residual,
            "iterations": self.iterations,
        }


def _residual(weights, counts, budgets, x, p, support_tol) -> float:
    load = counts @ x
    terms = [
        np.max(load - budgets, initial=0.0),
        np.max(-p, initial=0.0),
        np.max(np.abs(p * (budgets - load))),
    ]
    if np.any(p <= 0):
        return float("inf")
    u = (weights * x).sum(axis=1)
    slack = weights / p - u[:, None]
    terms.append(np.max(slack, initial=0.0))
    support = x > support_tol
    if support.any():
        terms.append(np.max(np.abs(slack[support])))
    return float(max(terms))


def kkt_residual(instance: MarketInstance, candidate, support_tol: float = DEFAULT_TOLERANCE) -> float:
    """Largest violation of the Eisenberg-Gale KKT conditions.

    Covers primal feasibility, price nonnegativity, complementary slackness
    ``|p_k (B_k - load_k)|`` and the bang-per-buck condition
    ``w_{theta,k} / p_k <= u_theta`` (with equality on entries where
    ``x_{theta,k} > support_tol``).  ``candidate`` is an :class:`EGSolution`
    or an ``(allocation, prices)`` pair.
    """
    if isinstance(candidate, EGSolution):
        x, p = candidate.allocation, candidate.prices
    else:
        x, p = candidate
    x = np.asarray(x, dtype=float)
    p = np.asarray(p, dtype=float).reshape(-1)
    if x.shape != instance.weights.shape or p.size != instance.num_resources:
        raise ValidationError(
            f"candidate shapes {x.shape}/{p.shape} do not match instance "
            f"{instance.weights.shape}"
        )
    return _residual(instance.weights, instance.counts, instance.budgets, x, p, support_tol)


POLISH_EVERY = 200


def _candidate_supports(shares, drop=6):
    """Thresholded supports, then the widest one minus each of its smallest edges.

    Dropping an edge breaks a tie cycle the dynamics are slowly abandoning.
    """
    seen = []
    for cut in (1e-6, 1e-4, 1e-2):
        support = shares > cut
        if not any(np.array_equal(support, s) for s in seen):
            seen.append(support)
            yield support
    wide = seen[0]
    rows, cols = np.nonzero(wide)
    for i in np.argsort(shares[rows, cols])[:drop]:
        support = wide.copy()
        support[rows[i], cols[i]] = False
        yield support


def _polish(W, N, B, support):
    """Exact equilibrium on a guessed support, or None.

    On the support every type gets the same bang-per-buck from each resource it
    buys, which is linear in (log p, log u).  Each connected block of the
    support graph then has its price level fixed by its own money balance, and
    the allocation solves the remaining linear spending/clearing system with
    x >= 0.  Useful when the dynamics crawl along a face of tied optima.
    """
    n, K = W.shape
    if not support.any(axis=0).all() or not support.any(axis=1).all():
        return None
    rows, cols = np.nonzero(support)
    m = rows.size
    A = np.zeros((m, K + n))
    A[np.arange(m), cols] = 1.0
    A[np.arange(m), K + rows] = 1.0
    logs, *_ = np.linalg.lstsq(A, np.log(W[rows, cols]), rcond=None)
    p = np.exp(logs[:K])
    graph = np.zeros((n + K, n + K))
    graph[rows, n + cols] = 1.0
    _, block = connected_components(graph, directed=False)
    for b in np.unique(block):
        types, goods = block[:n] == b, block[n:] == b
        p[goods] *= N[types].sum() / (p[goods] @ B[goods])
    # spending: sum_k p_k x_{theta,k} = 1; clearing: sum_theta N_theta x_{theta,k} = B_k
    M = np.zeros((n + K, m))
    M[rows, np.arange(m)] = p[cols]
    M[n + cols, np.arange(m)] = N[rows]
    rhs = np.concatenate([np.ones(n), B])
    scale = np.concatenate([np.ones(n), 1.0 / B])
    fit = lsq_linear(M * scale[:, None], rhs * scale, bounds=(0.0, np.inf), tol=1e-14, method="bvls")
    x = np.zeros((n, K))
    x[rows, cols] = fit.x
    return x, p


def solve_eg(
    instance: MarketInstance,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> EGSolution:
    """Solve the Eisenberg-Gale program with proportional-response dynamics.

    Each type starts by splitting its money uniformly across resources.  At
    every step prices are set to clear the market (``p_k = sum bids / B_k``)
    and each type re-splits its money in proportion to the utility it derives
    from each resource.  Iteration stops as soon as the KKT residual drops to
    ``tolerance``.

    Raises :class:`ConvergenceError` (carrying the best residual seen) when
    ``max_iterations`` is exhausted.  Every few hundred steps the current
    support is handed to an exact active-set solve, which finishes instances
    whose optimum is not unique in ``x``.
    """
    if not tolerance > 0:
        raise ValidationError("tolerance must be positive")
    W, N, B = instance.weights, instance.counts, instance.budgets
    K = instance.num_resources
    bids = np.repeat((N / K)[:, None], K, axis=1)
    best = float("inf")
    for it in range(max_iterations + 1):
        p = bids.sum(axis=0) / B
        x = bids / p / N[:, None]
        r = _residual(W, N, B, x, p, tolerance)
        best = min(best, r)
        if r <= tolerance:
            return EGSolution(x, p, r, it, weights=W)
        if it and it % POLISH_EVERY == 0:
            for support in _candidate_supports(bids / N[:, None]):
                polished = _polish(W, N, B, support)
                if polished is None:
                    continue
                pr = _residual(W, N, B, *polished, tolerance)
                best = min(best, pr)
                if pr <= tolerance:
                    return EGSolution(*polished, pr, it, weights=W)
        u = (W * x).sum(axis=1)
        bids = N[:, None] * W * x / u[:, None]
    raise ConvergenceError(
        f"no KKT certificate within {max_iterations} iterations "
        f"(best residual {best:.3e})",
        best_residual=best,
        iterations=max_iterations,
    )


def log_nsw(instance: MarketInstance, allocation) -> float:
    """Log of the Nash social welfare, ``sum_theta N_theta log <w_theta, x_theta>``."""
    x = np.asarray(allocation, dtype=float)
    if x.shape != instance.weights.shape:
        raise ValidationError("allocation shape does not match instance")
    if np.any(x < 0):
        raise ValidationError("allocation must be nonnegative")
    u = (instance.weights * x).sum(axis=1)
    if np.any(u <= 0):
        raise DomainError("a type receives zero utility; log NSW is -inf")
    return float(instance.counts @ np.log(u))


def price_floor(instance: MarketInstance) -> np.ndarray:
    """Guaranteed lower bound on equilibrium prices.

    ``N_theta x_theta <= B`` caps every utility at ``<w_theta, B> / N_theta``
    and the bang-per-buck condition then gives
    ``p_k >= max_theta w_{theta,k} N_theta / <w_theta, B>``.
    """
    W, N, B = instance.weights, instance.counts, instance.budgets
    return np.max(W * (N / (W @ B))[:, None], axis=0)


def brute_force_eg(instance: MarketInstance, grid_resolution: float = 1e-4) -> EGSolution:
    """Grid-search oracle for tiny markets (K <= 2, at most 3 types).

    Prices are normalised so total spending equals total money, which leaves a
    single free coordinate ``p_1`` for K = 2.  At every grid point each type
    buys its best bang-per-buck resource; a type whose indifference price lies
    within one grid step may split its money.  The point with the smallest
    clearing error wins and its bids are turned into a clearing allocation.
    """
    K, n = instance.num_resources, instance.num_types
    if K > 2 or n > 3:
        raise ValidationError("brute-force oracle only handles K <= 2 and at most 3 types")
    if not grid_resolution > 0:
        raise ValidationError("grid_resolution must be positive")
    W, N, B = instance.weights, instance.counts, instance.budgets
    S = N.sum()
    if K == 1:
        p = np.array([S / B[0]])
        x = np.full((n, 1), B[0] / S)
        return EGSolution(x, p, kkt_residual(instance, (x, p)), 1, weights=W)

    h = grid_resolution
    grid = np.arange(h, S / B[0], h)
    # type theta is indifferent where w1 / p1 == w2 / p2 along the budget line
    p1_star = W[:, 0] * S / (W[:, 0] * B[0] + W[:, 1] * B[1])
    flexible = np.abs(grid[None, :] - p1_star[:, None]) <= h
    prefers_1 = (grid[None, :] < p1_star[:, None]) & ~flexible
    strict = N @ prefers_1
    slack = N @ flexible
    need = grid * B[0] - strict
    assigned = np.clip(need, 0.0, slack)
    error = np.abs(need - assigned)
    spend_2 = S - strict - assigned
    error[(strict + assigned <= 0) | (spend_2 <= 0)] = np.inf
    i = int(np.argmin(error))
    if not np.isfinite(error[i]):
        raise ValidationError("grid too coarse to locate a clearing point")

    share_1 = np.where(prefers_1[:, i], 1.0, 0.0)
    if slack[i] > 0:
        share_1 = np.where(flexible[:, i], assigned[i] / slack[i], share_1)
    bids = N[:, None] * np.column_stack([share_1, 1.0 - share_1])
    p = bids.sum(axis=0) / B
    x = bids / p / N[:, None]
    return EGSolution(x, p, kkt_residual(instance, (x, p)), grid.size, weights=W)


def brute_force_bound(instance: MarketInstance, solution: EGSolution, grid_resolution: float) -> float:
    """Utility error the grid oracle can incur at a given resolution.

    Prices from the grid sit within about two steps of the equilibrium along
    the budget line; utilities move by at most ``w / p^2`` per unit of price.
    """
    B = instance.budgets
    if instance.num_resources == 1:
        return 0.0
    step = 2.0 * grid_resolution * np.array([1.0, B[0] / B[1]])
    lo = solution.prices - step
    if np.any(lo <= 0):
        return float("inf")
    return float(np.max(instance.weights * step / lo**2))


def load_instance(path) -> MarketInstance:
    import json

    with open(path) as fh:
        return MarketInstance.from_dict(json.load(fh))


__all__: Sequence[str] = [
    "MarketInstance",
    "EGSolution",
    "solve_eg",
    "kkt_residual",
    "log_nsw",
    "price_floor",
    "brute_force_eg",
    "brute_force_bound",
    "load_instance",
]
