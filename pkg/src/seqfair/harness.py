"""Built-in experiment settings, seeded Monte-Carlo runs and scaling fits."""

from __future__ import annotations

import csv
import json
import math
import os
import warnings
from dataclasses import dataclass, field, replace
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .arrivals import ClampedNormal, ClampedPoisson, HorizonSpec, model_from_spec, run_seed
from .errors import InfeasibleGuardrailsError, ValidationError
from .guardrails import build_guardrails, envy_scale
from .metrics import aggregate, evaluate
from .policies import POLICIES, hindsight_optimal

DEFAULT_T_VALUES = (100, 200, 400, 800, 1600, 3200)
DEFAULT_RUNS = 200

MULTI_SYNTHETIC_WEIGHTS = [
    [1, 2, 3],
    [1, 3, 2],
    [4, 1, 5],
    [1, 2, 0.5],
    [3, 7, 5],
]
MULTI_SYNTHETIC_RATES = (1.5, 2.5, 3.5, 4.5, 5.5)

FBST_RESOURCES = ("cereal", "pasta", "prepared meals", "rice", "meat")
FBST_WEIGHTS = {
    "carnivore": [3.9, 3, 2.8, 2.7, 1.9],
    "vegetarian": [3.9, 3, 0.1, 2.7, 0.1],
    "prepared-only": [3.9, 3, 2.8, 2.7, 0.1],
}
FBST_FRACTIONS = {"vegetarian": 0.25, "carnivore": 0.3, "prepared-only": 0.45}

# synthetic (mu, sigma) pool in the shape of mobile-pantry visit counts; no real data
BUNDLED_FBST_PARAMS = Path(__file__).parent / "data" / "fbst_style_params.csv"

BUILTIN_SETTINGS = ("single-synthetic", "single-fbst-style", "multi-synthetic", "multi-fbst-style")

AGGREGATE_COLUMNS = [
    "setting", "policy", "T", "L_T_rule", "runs", "mean_delta_ef", "mean_delta_eff",
    "delta_ef_plus", "mean_envy", "mean_delta_prop", "envy_violation_freq", "L_T", "status",
]
RUN_COLUMNS = [
    "setting", "policy", "L_T_rule", "T", "L_T", "run", "seed", "delta_ef", "delta_eff",
    "envy", "delta_prop", "concentration_event", "fallback_rounds", "last_non_upper",
]


@dataclass(frozen=True)
class Setting:
    """Types, weights and a recipe for the per-round arrival models at any horizon."""

    name: str
    type_ids: tuple
    weights: np.ndarray
    models_for: Callable[[int], list]
    budget_proportions: np.ndarray | None = None
    resource_names: tuple = ()

    def weight_of(self, type_id) -> list:
        return self.weights[self.type_ids.index(type_id)].tolist()

    def proportions(self) -> np.ndarray:
        if self.budget_proportions is None:
            return np.ones(self.weights.shape[1])
        return np.asarray(self.budget_proportions, dtype=float)

    def horizon(self, T: int, delta: float) -> HorizonSpec:
        return HorizonSpec(T, delta, self.models_for(T))

    def budgets(self, horizon: HorizonSpec) -> np.ndarray:
        """Each resource gets its proportion of the total expected population."""
        return self.proportions() * horizon.means.sum()

    def envy_scale(self) -> float:
        # beta_avg = proportions, whatever the horizon
        return envy_scale(self.weights, self.proportions(), [1.0])


@dataclass(frozen=True)
class PolicyRule:
    """A policy paired with an envy budget ``L_T = coefficient * T**exponent``."""

    policy: str
    coefficient: float
    exponent: float

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValidationError(f"unknown policy {self.policy!r}")
        if self.policy == "guarded-hope" and not -0.5 <= self.exponent < 0:
            raise ValidationError("guarded-hope exponents must lie in [-1/2, 0)")
        if not self.coefficient > 0:
            raise ValidationError("L_T coefficient must be positive")

    def lt(self, T: int) -> float:
        return self.coefficient * T**self.exponent

    @property
    def label(self) -> str:
        return f"{self.coefficient:g}*T^{self.exponent:.4g}"


@dataclass(frozen=True)
class ExperimentConfig:
    setting: Setting
    T_values: tuple = DEFAULT_T_VALUES
    policies: tuple = ()
    delta: float = 0.1
    runs: int = DEFAULT_RUNS
    base_seed: int = 0
    out: str | None = None

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValidationError("delta must lie in (0, 1)")
        if self.runs < 1 or not self.T_values or any(int(T) < 1 for T in self.T_values):
            raise ValidationError("need at least one run and positive horizons")


def _fbst_locations(params_file) -> np.ndarray:
    if params_file is None:
        raise ValidationError(
            "fbst-style settings need a per-round parameter file: a CSV with columns "
            "'mu,sigma', one row per distribution location (pass --params FILE; a synthetic "
            f"example ships at {BUNDLED_FBST_PARAMS})"
        )
    with open(params_file, newline="") as fh:
        rows = list(csv.DictReader(fh))
    try:
        locations = np.array([[float(r["mu"]), float(r["sigma"])] for r in rows])
    except (KeyError, ValueError) as exc:
        raise ValidationError(f"{params_file}: expected numeric 'mu' and 'sigma' columns") from exc
    if locations.size == 0 or np.any(locations[:, 1] <= 0):
        raise ValidationError(f"{params_file}: need at least one row with sigma > 0")
    return locations


def _sampled_locations(locations, T, location_seed):
    """Draw ``T`` locations (with replacement) from the parameter pool."""
    rng = np.random.default_rng(np.random.SeedSequence([int(location_seed), int(T)]))
    return locations[rng.integers(0, len(locations), size=T)]


def builtin_setting(name: str, params_file=None, location_seed: int = 0) -> Setting:
    if name == "single-synthetic":
        model = ClampedPoisson(1.5)
        return Setting(name, ("all",), np.array([[1.0]]), lambda T: [[model]] * T)
    if name == "multi-synthetic":
        models = [ClampedPoisson(lam) for lam in MULTI_SYNTHETIC_RATES]
        return Setting(
            name, tuple(range(1, 6)), np.array(MULTI_SYNTHETIC_WEIGHTS, dtype=float),
            lambda T: [models] * T,
        )
    if name == "single-fbst-style":
        locations = _fbst_locations(params_file)

        def single_models(T):
            return [[ClampedNormal(mu, sigma)] for mu, sigma in _sampled_locations(locations, T, location_seed)]

        return Setting(name, ("all",), np.array([[1.0]]), single_models)
    if name == "multi-fbst-style":
        locations = _fbst_locations(params_file)
        type_ids = tuple(FBST_WEIGHTS)
        fractions = [FBST_FRACTIONS[t] for t in type_ids]

        def multi_models(T):
            return [
                [ClampedNormal(d * mu, d * sigma) for d in fractions]
                for mu, sigma in _sampled_locations(locations, T, location_seed)
            ]

        return Setting(
            name, type_ids, np.array([FBST_WEIGHTS[t] for t in type_ids]), multi_models,
            resource_names=FBST_RESOURCES,
        )
    raise ValidationError(f"unknown setting {name!r}; choose one of {', '.join(BUILTIN_SETTINGS)}")


def default_policies(setting: Setting, coefficient: float = 2.0) -> tuple:
    """Guarded-Hope at both decay rates plus Fixed-Threshold.

    The coefficient is expressed in units of the setting's envy scale so that
    multi-resource settings (whose scale is ~10^2) land inside the feasible
    window for ``L_T``; for single-resource settings the scale is 1.
    """
    a = coefficient * setting.envy_scale()
    return (
        PolicyRule("guarded-hope", a, -1 / 3),
        PolicyRule("guarded-hope", a, -1 / 2),
        PolicyRule("fixed-threshold", a, -1 / 3),
    )


def builtin_experiment(name: str, params_file=None, **overrides) -> ExperimentConfig:
    location_seed = overrides.pop("location_seed", 0)
    setting = builtin_setting(name, params_file, location_seed)
    overrides.setdefault("policies", default_policies(setting))
    return ExperimentConfig(setting=setting, **overrides)


def custom_setting(spec: dict) -> Setting:
    """``{"name", "types": [{"id", "weights", "arrivals"}], "budget_proportions"?}``."""
    try:
        types = spec["types"]
        ids = tuple(t.get("id", i) for i, t in enumerate(types))
        weights = np.array([t["weights"] for t in types], dtype=float)
        models = [model_from_spec(t["arrivals"]) for t in types]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed setting description: {exc!r}") from exc
    return Setting(
        spec.get("name", "custom"), ids, weights, lambda T: [models] * T,
        budget_proportions=spec.get("budget_proportions"),
    )


def load_config(path, **overrides) -> ExperimentConfig:
    """Read a JSON experiment description (see README for the keys)."""
    path = Path(path)
    data = json.loads(path.read_text())
    params = data.get("params_file")
    if params is not None and not os.path.isabs(params):
        params = str(path.parent / params)
    params = overrides.pop("params_file", None) or params
    setting_spec = data.get("setting")
    if isinstance(setting_spec, str):
        setting = builtin_setting(setting_spec, params, data.get("location_seed", 0))
    elif isinstance(setting_spec, dict):
        setting = custom_setting(setting_spec)
    else:
        raise ValidationError("config needs a 'setting' (name or description)")
    if "budget_proportions" in data:
        setting = replace(setting, budget_proportions=data["budget_proportions"])
    if "policies" in data:
        policies = tuple(
            PolicyRule(p["policy"], float(p["coefficient"]), float(p["exponent"]))
            for p in data["policies"]
        )
    else:
        policies = default_policies(setting)
    kwargs = dict(
        setting=setting,
        T_values=tuple(int(T) for T in data.get("T", DEFAULT_T_VALUES)),
        policies=policies,
        delta=float(data.get("delta", 0.1)),
        runs=int(data.get("runs", DEFAULT_RUNS)),
        base_seed=int(data.get("seed", 0)),
        out=data.get("out"),
    )
    kwargs.update({k: v for k, v in overrides.items() if v is not None})
    return ExperimentConfig(**kwargs)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _one_run(cell, run_index):
    """Every feasible policy on one seeded arrival matrix.

    Module-level so worker processes can import it.
    """
    setting_name, horizon, weights, budgets, base_seed, rails = cell
    seed = run_seed(base_seed, run_index)
    arrivals = horizon.sample_arrivals(np.random.default_rng(seed))
    x_opt = hindsight_optimal(arrivals, weights, budgets)
    event = horizon.concentration_event(arrivals)
    out = []
    for rule, guard in rails:
        trace = POLICIES[rule.policy](guard, horizon, budgets, arrivals, seed=seed)
        report = evaluate(trace, x_opt, weights, budgets, L_T=guard.L_T, setting=setting_name)
        out.append((report, event, trace.fallback_rounds(), int(trace.last_non_upper().min())))
    return out


@dataclass
class ExperimentResult:
    run_rows: list = field(default_factory=list)
    aggregate_rows: list = field(default_factory=list)
    reports: dict = field(default_factory=dict)
    guardrails: dict = field(default_factory=dict)


def run_experiment(config: ExperimentConfig, parallel: int = 1, out=None) -> ExperimentResult:
    """Run every (T, policy) cell and optionally write ``per_run.csv`` / ``aggregate.csv``.

    Cells whose envy budget is infeasible produce one aggregate row with
    status ``infeasible`` and no per-run rows.  Output is a function of the
    config alone; ``parallel`` only changes wall-clock time.
    """
    setting = config.setting
    weights = setting.weights
    result = ExperimentResult()
    pool = None
    if parallel > 1:
        import multiprocessing

        pool = multiprocessing.get_context("spawn").Pool(parallel)
    try:
        for T in config.T_values:
            horizon = setting.horizon(T, config.delta)
            budgets = setting.budgets(horizon)
            rails, statuses = [], {}
            for rule in config.policies:
                try:
                    guard = build_guardrails(None, weights, budgets, rule.lt(T), horizon=horizon)
                except InfeasibleGuardrailsError as exc:
                    statuses[rule] = f"infeasible ({exc.side}: c={exc.c:.4g})"
                    continue
                rails.append((rule, guard))
                result.guardrails[(T, rule)] = guard
            per_rule = {rule: [] for rule, _ in rails}
            if rails:
                cell = (setting.name, horizon, weights, budgets, config.base_seed, rails)
                worker = partial(_one_run, cell)
                indices = range(config.runs)
                if pool is None:
                    outcomes = map(worker, indices)
                else:
                    outcomes = pool.map(worker, indices, chunksize=max(1, config.runs // (4 * parallel)))
                for r, outcome in enumerate(outcomes):
                    for (rule, guard), (report, event, fallbacks, t0) in zip(rails, outcome):
                        per_rule[rule].append(report)
                        result.run_rows.append({
                            "setting": setting.name, "policy": rule.policy, "L_T_rule": rule.label,
                            "T": T, "L_T": guard.L_T, "run": r, "seed": report.seed,
                            "delta_ef": report.delta_ef, "delta_eff": report.delta_efficiency,
                            "envy": report.envy, "delta_prop": report.delta_prop,
                            "concentration_event": event, "fallback_rounds": fallbacks,
                            "last_non_upper": t0,
                        })
            for rule in config.policies:
                row = {"setting": setting.name, "policy": rule.policy, "T": T, "L_T_rule": rule.label,
                       "L_T": rule.lt(T)}
                if rule in statuses:
                    row.update(runs=0, status=statuses[rule])
                else:
                    agg = aggregate(per_rule[rule], result.guardrails[(T, rule)])
                    result.reports[(T, rule)] = per_rule[rule]
                    row.update(
                        runs=agg.runs, mean_delta_ef=agg.delta_ef, mean_delta_eff=agg.delta_efficiency,
                        delta_ef_plus=agg.delta_ef_plus, mean_envy=agg.envy,
                        mean_delta_prop=agg.delta_prop, envy_violation_freq=agg.envy_violation_freq,
                        status="ok",
                    )
                result.aggregate_rows.append(row)
    finally:
        if pool is not None:
            pool.close()
            pool.join()

    out = out or config.out
    if out is not None:
        write_csvs(result, out)
    return result


def write_csvs(result: ExperimentResult, out) -> None:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    for name, columns, rows in (
        ("per_run.csv", RUN_COLUMNS, result.run_rows),
        ("aggregate.csv", AGGREGATE_COLUMNS, result.aggregate_rows),
    ):
        with open(out / name, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row.get(c)) if not isinstance(row.get(c), str) else row[c]
                                 for c in columns])


def read_aggregate(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


METRIC_COLUMNS = {
    "waste": "mean_delta_eff",
    "efficiency": "mean_delta_eff",
    "delta_eff": "mean_delta_eff",
    "ef": "mean_delta_ef",
    "delta_ef": "mean_delta_ef",
    "ef_plus": "delta_ef_plus",
    "envy": "mean_envy",
    "prop": "mean_delta_prop",
}


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r2: float
    points: int


def scaling_fit(rows: Sequence[dict], metric: str, policy: str, rule: str | None = None) -> ScalingFit:
    """Least-squares fit of ``log(metric)`` against ``log(T)``."""
    column = METRIC_COLUMNS.get(metric, metric)
    selected = [r for r in rows if r["policy"] == policy and r.get("status", "ok") == "ok"]
    rules = sorted({r["L_T_rule"] for r in selected})
    if rule is not None:
        selected = [r for r in selected if r["L_T_rule"] == rule]
    elif len(rules) > 1:
        raise ValidationError(f"policy {policy!r} has several L_T rules {rules}; pick one")
    logs_T, logs_m = [], []
    for r in selected:
        value = float(r[column])
        if not value > 0:
            warnings.warn(f"dropping T={r['T']}: nonpositive {column} = {value}")
            continue
        logs_T.append(math.log(float(r["T"])))
        logs_m.append(math.log(value))
    if len(set(logs_T)) < 3:
        raise ValidationError("need at least three distinct T values to fit a slope")
    x, y = np.array(logs_T), np.array(logs_m)
    slope, intercept = np.polyfit(x, y, 1)
    ss_res = float(np.sum((y - (slope * x + intercept)) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 1e-300 else 1.0
    return ScalingFit(float(slope), float(intercept), r2, len(x))


def policy_rules(rows: Sequence[dict], policy: str) -> list:
    return sorted({r["L_T_rule"] for r in rows if r["policy"] == policy})


@dataclass(frozen=True)
class Problem:
    """A single horizon plus market data, as read from a problem file."""

    horizon: HorizonSpec
    weights: np.ndarray
    budgets: np.ndarray
    type_ids: tuple


def load_problem(path) -> Problem:
    """Read ``{"T", "delta", "budgets"?, "types": [{"id", "weights", "arrivals"}]}``.

    Missing budgets default to the expected total population for every resource.
    """
    data = json.loads(Path(path).read_text())
    horizon = HorizonSpec.from_dict(data)
    try:
        types = data["types"]
        weights = np.array([t["weights"] for t in types], dtype=float)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"{path}: every type needs 'weights'") from exc
    if weights.ndim != 2:
        raise ValidationError(f"{path}: weight vectors must share one length")
    if "budgets" in data:
        budgets = np.asarray(data["budgets"], dtype=float).reshape(-1)
        if budgets.size != weights.shape[1]:
            raise ValidationError(f"{path}: budgets and weights disagree on the resource count")
    else:
        budgets = np.full(weights.shape[1], horizon.means.sum())
    ids = tuple(t.get("id", i) for i, t in enumerate(types))
    return Problem(horizon, weights, budgets, ids)
