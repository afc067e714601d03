"""Small-scale version of the envy/waste trade-off experiment.

Uses 40 runs per horizon instead of 200, so it finishes in well under a
minute; the full experiment is `eg experiment single-synthetic`.

Run: python3 demos/tradeoff.py
"""

import logging

from seqfair import ExperimentConfig, PolicyRule, builtin_setting, run_experiment, scaling_fit

# small-T cells sit below the minimum feasible L_T; the harness logs that once per cell
logging.getLogger("seqfair.guardrails").setLevel(logging.ERROR)

setting = builtin_setting("single-synthetic")
rules = (PolicyRule("guarded-hope", 2.0, -1 / 3), PolicyRule("fixed-threshold", 2.0, -1 / 3))
config = ExperimentConfig(setting, T_values=(100, 200, 400, 800, 1600), policies=rules, runs=40, base_seed=1)
result = run_experiment(config)

print(f"{'T':>5}  {'policy':<16} {'waste':>9} {'delta_ef':>9} {'envy':>7}")
for row in result.aggregate_rows:
    print(f"{row['T']:>5}  {row['policy']:<16} {row['mean_delta_eff']:9.3f} "
          f"{row['mean_delta_ef']:9.4f} {row['mean_envy']:7.4f}")

for policy in ("guarded-hope", "fixed-threshold"):
    fit = scaling_fit(result.aggregate_rows, "waste", policy)
    print(f"waste ~ T^{fit.slope:.2f} for {policy} (r2 {fit.r2:.3f})")
