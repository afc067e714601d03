"""Per-round arrival models, horizon moments and concentration widths.

Every model is clamped so that each round sees at least one individual of
each type.  Moments are those of the clamped law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .errors import ValidationError


def _round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


@dataclass(frozen=True)
class Deterministic:
    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ValidationError("Deterministic arrivals need an integer n >= 1")

    def sample(self, rng, size=None):
        if size is None:
            return int(self.n)
        return np.full(size, int(self.n), dtype=np.int64)

    def mean(self) -> float:
        return float(self.n)

    def deviation_proxy(self) -> float:
        return 0.0


@dataclass(frozen=True)
class ClampedPoisson:
    lam: float

    def __post_init__(self):
        if not self.lam > 0:
            raise ValidationError("Poisson rate must be positive")

    def sample(self, rng, size=None):
        draw = np.maximum(1, rng.poisson(self.lam, size=size))
        return int(draw) if size is None else draw.astype(np.int64)

    def mean(self) -> float:
        # E[max(1, X)] = E[X] + P(X = 0)
        return self.lam + math.exp(-self.lam)

    def deviation_proxy(self) -> float:
        # clamping is 1-Lipschitz, so sqrt(lam) dominates the clamped spread
        return math.sqrt(self.lam)


@dataclass(frozen=True)
class ClampedNormal:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError("Normal sigma must be positive")

    def sample(self, rng, size=None):
        draw = np.maximum(1, _round_half_away(rng.normal(self.mu, self.sigma, size=size)))
        return int(draw) if size is None else draw.astype(np.int64)

    def mean(self) -> float:
        lo = max(2, math.floor(self.mu - 40 * self.sigma))
        hi = max(lo, math.ceil(self.mu + 40 * self.sigma))
        ks = np.arange(lo, hi + 1, dtype=float)
        dist = stats.norm(self.mu, self.sigma)
        pk = dist.cdf(ks + 0.5) - dist.cdf(ks - 0.5)
        return float(dist.cdf(1.5) + ks @ pk)

    def deviation_proxy(self) -> float:
        return float(self.sigma)


@dataclass(frozen=True)
class Empirical:
    histogram: tuple

    def __init__(self, histogram):
        items = sorted((int(k), float(p)) for k, p in dict(histogram).items())
        if not items or any(k < 1 for k, _ in items):
            raise ValidationError("Empirical support must be integers >= 1")
        if any(p < 0 for _, p in items) or abs(sum(p for _, p in items) - 1.0) > 1e-12:
            raise ValidationError("Empirical probabilities must be nonnegative and sum to 1")
        object.__setattr__(self, "histogram", tuple(items))

    @property
    def _support(self):
        return np.array([k for k, _ in self.histogram], dtype=np.int64)

    @property
    def _probs(self):
        return np.array([p for _, p in self.histogram])

    def sample(self, rng, size=None):
        cdf = np.cumsum(self._probs)
        idx = np.searchsorted(cdf, rng.random(size=size), side="right")
        draw = self._support[np.minimum(idx, len(cdf) - 1)]
        return int(draw) if size is None else draw

    def mean(self) -> float:
        return float(self._support @ self._probs)

    def deviation_proxy(self) -> float:
        support = [k for k, p in self.histogram if p > 0]
        return (max(support) - min(support)) / 2.0


ArrivalModel = Deterministic | ClampedPoisson | ClampedNormal | Empirical


def sample(model, rng) -> int:
    return model.sample(rng)


def mean(model) -> float:
    return model.mean()


def deviation_proxy(model) -> float:
    return model.deviation_proxy()


def model_from_spec(spec) -> ArrivalModel:
    """Parse ``{"kind": "poisson", "lam": 1.5}`` style descriptions."""
    if isinstance(spec, (Deterministic, ClampedPoisson, ClampedNormal, Empirical)):
        return spec
    if not isinstance(spec, Mapping) or "kind" not in spec:
        raise ValidationError(f"arrival spec needs a 'kind': {spec!r}")
    kind = str(spec["kind"]).lower()
    try:
        if kind == "deterministic":
            return Deterministic(spec["n"])
        if kind in ("poisson", "clamped_poisson"):
            return ClampedPoisson(float(spec["lam"]))
        if kind in ("normal", "clamped_normal"):
            return ClampedNormal(float(spec["mu"]), float(spec["sigma"]))
        if kind == "empirical":
            return Empirical({int(k): p for k, p in dict(spec["histogram"]).items()})
    except KeyError as exc:
        raise ValidationError(f"arrival spec {spec!r} is missing {exc}") from exc
    raise ValidationError(f"unknown arrival kind {kind!r}")


def model_to_spec(model) -> dict:
    if isinstance(model, Deterministic):
        return {"kind": "deterministic", "n": model.n}
    if isinstance(model, ClampedPoisson):
        return {"kind": "poisson", "lam": model.lam}
    if isinstance(model, ClampedNormal):
        return {"kind": "normal", "mu": model.mu, "sigma": model.sigma}
    return {"kind": "empirical", "histogram": {str(k): p for k, p in model.histogram}}


class HorizonSpec:
    """Arrival models for ``T`` rounds and ``|Theta|`` types, plus derived moments.

    Rows of ``means`` are rounds ``1..T``; ``tail_means[t]`` and ``confs[t]``
    are indexed by ``t = 0..T`` and refer to rounds strictly after ``t``.
    """

    def __init__(self, T: int, delta: float, models: Sequence[Sequence[ArrivalModel]]):
        if int(T) != T or T < 1:
            raise ValidationError("T must be a positive integer")
        if not 0 < delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        models = tuple(tuple(row) for row in models)
        if len(models) != T or len({len(row) for row in models}) != 1 or not models[0]:
            raise ValidationError("models must be a T x |Theta| table")
        self.T = int(T)
        self.delta = float(delta)
        self.models = models
        self.num_types = len(models[0])

        distinct = {m for row in models for m in row}
        moments = {m: (m.mean(), m.deviation_proxy()) for m in distinct}
        self.means = np.array([[moments[m][0] for m in row] for row in models])
        self.rho_max = max(proxy for _, proxy in moments.values())
        suffix = np.cumsum(self.means[::-1], axis=0)[::-1]
        self.tail_means = np.vstack([suffix, np.zeros((1, self.num_types))])
        self.tail_means.setflags(write=False)
        remaining = self.T - np.arange(self.T + 1)
        log_term = math.log(self.T * self.num_types / self.delta)
        width = np.sqrt(2.0 * remaining * self.rho_max**2 * log_term)
        self.confs = np.repeat(width[:, None], self.num_types, axis=1)
        self.confs.setflags(write=False)

    @classmethod
    def replicated(cls, T, delta, per_type_models) -> "HorizonSpec":
        return cls(T, delta, [list(per_type_models)] * T)

    @property
    def expected_counts(self) -> np.ndarray:
        return self.tail_means[0]

    def tail_mean(self, t: int, theta: int) -> float:
        self._check_t(t)
        return float(self.tail_means[t, theta])

    def conf(self, t: int, theta: int) -> float:
        self._check_t(t)
        return float(self.confs[t, theta])

    def _check_t(self, t):
        if not 0 <= t <= self.T:
            raise ValidationError(f"t={t} outside 0..{self.T}")

    def sample_arrivals(self, rng) -> np.ndarray:
        """Draw a ``T x |Theta|`` matrix of realized counts."""
        out = np.empty((self.T, self.num_types), dtype=np.int64)
        for j in range(self.num_types):
            column = [row[j] for row in self.models]
            first = column[0]
            if all(m == first for m in column):
                out[:, j] = first.sample(rng, self.T)
            elif all(isinstance(m, ClampedNormal) for m in column):
                mu = np.array([m.mu for m in column])
                sigma = np.array([m.sigma for m in column])
                out[:, j] = np.maximum(1, _round_half_away(rng.normal(mu, sigma)))
            else:
                out[:, j] = [m.sample(rng) for m in column]
        return out

    def concentration_event(self, arrivals) -> bool:
        """Whether every tail sum stays within its confidence width."""
        arrivals = np.asarray(arrivals)
        suffix = np.cumsum(arrivals[::-1], axis=0)[::-1]
        tails = np.vstack([suffix, np.zeros((1, self.num_types))])
        return bool(np.all(np.abs(tails - self.tail_means) <= self.confs + 1e-9))

    @classmethod
    def from_dict(cls, data: Mapping) -> "HorizonSpec":
        """``{"T", "delta", "types": [{"arrivals": spec or [spec] * T}, ...]}``."""
        try:
            T = int(data["T"])
            delta = float(data.get("delta", 0.1))
            columns = []
            for entry in data["types"]:
                spec = entry["arrivals"]
                if isinstance(spec, list):
                    if len(spec) != T:
                        raise ValidationError("per-round arrival list must have length T")
                    columns.append([model_from_spec(s) for s in spec])
                else:
                    columns.append([model_from_spec(spec)] * T)
        except KeyError as exc:
            raise ValidationError(f"horizon description is missing {exc}") from exc
        return cls(T, delta, list(zip(*columns)))


def conf(horizon: HorizonSpec, t: int, theta: int) -> float:
    return horizon.conf(t, theta)


def tail_mean(horizon: HorizonSpec, t: int, theta: int) -> float:
    return horizon.tail_mean(t, theta)


def conf_width(T: int, t: int, rho_max: float, num_types: int, delta: float) -> float:
    """Hoeffding width for the arrivals in rounds ``t+1..T``."""
    if not 0 < delta < 1:
        raise ValidationError("delta must lie in (0, 1)")
    return math.sqrt(2.0 * (T - t) * rho_max**2 * math.log(T * num_types / delta))


def run_seed(base_seed: int, run_index: int) -> int:
    """Counter-based per-run seed; independent of execution order."""
    return int(np.random.SeedSequence([int(base_seed), int(run_index)]).generate_state(1, np.uint64)[0])


def run_rng(base_seed: int, run_index: int) -> np.random.Generator:
    return np.random.default_rng(run_seed(base_seed, run_index))
