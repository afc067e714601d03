"""Command-line entry point ``eg``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import harness
from .arrivals import run_seed
from .errors import ConvergenceError, DomainError, ValidationError
from .guardrails import build_guardrails, min_feasible_lt
from .market import DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE, load_instance, solve_eg
from .metrics import evaluate
from .policies import POLICIES, hindsight_optimal


def _fmt_matrix(rows, ids) -> str:
    return "\n".join(f"  {tid}: " + " ".join(f"{v:.6g}" for v in row) for tid, row in zip(ids, rows))


def cmd_solve(args) -> int:
    instance = load_instance(args.file)
    sol = solve_eg(instance, tolerance=args.tol, max_iterations=args.max_iters)
    if args.json:
        print(json.dumps({"type_ids": list(instance.type_ids), **sol.to_dict()}, indent=2))
        return 0
    print("allocation:")
    print(_fmt_matrix(sol.allocation, instance.type_ids))
    print("prices:    " + " ".join(f"{p:.6g}" for p in sol.prices))
    print("utilities: " + " ".join(f"{u:.6g}" for u in sol.utilities))
    print(f"residual:  {sol.kkt_residual:.3e} after {sol.iterations} iterations")
    return 0


def cmd_guardrails(args) -> int:
    problem = harness.load_problem(args.file)
    rails = build_guardrails(None, problem.weights, problem.budgets, args.lt, horizon=problem.horizon)
    if args.json:
        print(json.dumps(_jsonable(rails.to_dict()), indent=2))
        return 0
    ids = problem.type_ids
    print(f"L_T = {rails.L_T:.6g}   gamma = {rails.gamma:.6g}   c = {rails.c:.6g}")
    print(f"minimum feasible L_T = {min_feasible_lt(problem.horizon, problem.weights, problem.budgets):.6g}")
    print("n_upper: " + " ".join(f"{v:.6g}" for v in rails.n_upper))
    print("n_lower: " + " ".join(f"{v:.6g}" for v in rails.n_lower))
    print("X_upper:")
    print(_fmt_matrix(rails.X_upper, ids))
    print("X_lower:")
    print(_fmt_matrix(rails.X_lower, ids))
    print("utility gap: " + " ".join(f"{v:.6g}" for v in rails.utility_gap))
    failed = [k for k, v in rails.diagnostics.items() if v is False]
    if failed:
        print("diagnostics not met: " + ", ".join(failed))
    return 0


def cmd_simulate(args) -> int:
    problem = harness.load_problem(args.file)
    rails = build_guardrails(None, problem.weights, problem.budgets, args.lt, horizon=problem.horizon)
    # same draw as run 0 of an experiment with this base seed
    seed = run_seed(args.seed, 0)
    arrivals = problem.horizon.sample_arrivals(np.random.default_rng(seed))
    trace = POLICIES[args.policy](rails, problem.horizon, problem.budgets, arrivals, seed=seed)
    if args.trace:
        trace.write_csv(args.trace)
    x_opt = hindsight_optimal(arrivals, problem.weights, problem.budgets)
    report = evaluate(trace, x_opt, problem.weights, problem.budgets, L_T=args.lt)
    print(f"policy {args.policy}, T = {trace.T}, L_T = {args.lt:g}")
    print(f"delta_ef   = {report.delta_ef:.6g}")
    print(f"waste      = {report.delta_efficiency:.6g}")
    print(f"envy       = {report.envy:.6g}")
    print(f"delta_prop = {report.delta_prop:.6g}")
    print(f"fallback rounds = {trace.fallback_rounds()}, "
          f"concentration event = {problem.horizon.concentration_event(arrivals)}")
    return 0


def cmd_experiment(args) -> int:
    overrides = dict(runs=args.runs, base_seed=args.seed)
    if args.T:
        overrides["T_values"] = tuple(args.T)
    if args.delta is not None:
        overrides["delta"] = args.delta
    target = args.target
    if Path(target).is_file():
        config = harness.load_config(target, params_file=args.params, **overrides)
    else:
        config = harness.builtin_experiment(
            target, params_file=args.params,
            **{k: v for k, v in overrides.items() if v is not None},
        )
    out = args.out or config.out or "results"
    result = harness.run_experiment(config, parallel=args.parallel, out=out)
    for row in result.aggregate_rows:
        if row["status"] == "ok":
            print(f"T={row['T']:>5} {row['policy']:<16} {row['L_T_rule']:<16} "
                  f"waste={row['mean_delta_eff']:.4g} delta_ef={row['mean_delta_ef']:.4g}")
        else:
            print(f"T={row['T']:>5} {row['policy']:<16} {row['L_T_rule']:<16} {row['status']}")
    print(f"wrote {Path(out) / 'aggregate.csv'} and {Path(out) / 'per_run.csv'}")
    return 0


def cmd_report(args) -> int:
    rows = harness.read_aggregate(args.file)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = harness.scaling_fit(rows, args.fit, args.policy, args.rule)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    label = args.rule or (harness.policy_rules(rows, args.policy) or ["?"])[0]
    print(f"{args.fit} ~ T^slope for {args.policy} ({label}) over {fit.points} horizons")
    print(f"slope = {fit.slope:.4f}   intercept = {fit.intercept:.4f}   r2 = {fit.r2:.4f}")
    return 0


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eg", description="Sequential fair allocation toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true", help="show guardrail diagnostics warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve a static market instance")
    p.add_argument("file")
    p.add_argument("--tol", type=float, default=DEFAULT_TOLERANCE)
    p.add_argument("--max-iters", type=int, default=DEFAULT_MAX_ITERATIONS)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("guardrails", help="build guardrails for a problem file")
    p.add_argument("file")
    p.add_argument("--lt", type=float, required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_guardrails)

    p = sub.add_parser("simulate", help="run one seeded horizon of a policy")
    p.add_argument("file")
    p.add_argument("--policy", choices=sorted(POLICIES), default="guarded-hope")
    p.add_argument("--lt", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trace", help="write the per-round trace CSV here")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("experiment", help="run a built-in or configured Monte-Carlo experiment")
    p.add_argument("target", help=f"one of {', '.join(harness.BUILTIN_SETTINGS)} or a JSON config file")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--parallel", type=int, default=1)
    p.add_argument("--params", help="per-round mu,sigma CSV for fbst-style settings")
    p.add_argument("--T", type=int, nargs="+")
    p.add_argument("--delta", type=float)
    p.set_defaults(func=cmd_experiment)

    p = sub.add_parser("report", help="fit a log-log scaling slope from aggregate.csv")
    p.add_argument("file")
    p.add_argument("--fit", default="waste")
    p.add_argument("--policy", default="guarded-hope")
    p.add_argument("--rule", help="L_T rule label when a policy has several")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.verbose else logging.ERROR,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except ConvergenceError as exc:
        print(f"error: {exc} (best residual {exc.best_residual:.3e})", file=sys.stderr)
        return 3
    except (ValidationError, DomainError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
