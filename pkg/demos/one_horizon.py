"""One seeded horizon of the single-resource synthetic setting, round by round.

Shows the two guardrails, when Guarded-Hope leaves the upper one, and how its
leftover compares with always allocating the lower guardrail.

Run: python3 demos/one_horizon.py
"""

import numpy as np

from seqfair import Branch, build_guardrails, builtin_setting, fixed_threshold, guarded_hope
from seqfair.arrivals import run_rng

T = 400
setting = builtin_setting("single-synthetic")
horizon = setting.horizon(T, delta=0.1)
budgets = setting.budgets(horizon)
L_T = 2 * T ** (-1 / 3)
rails = build_guardrails(None, setting.weights, budgets, L_T, horizon=horizon)

print(f"T={T}  budget={budgets[0]:.2f}  L_T={L_T:.3f}  gamma={rails.gamma:.3f}  c={rails.c:.3f}")
print(f"lower guardrail {rails.X_lower[0, 0]:.4f}, upper guardrail {rails.X_upper[0, 0]:.4f}")

arrivals = horizon.sample_arrivals(run_rng(0, 0))
hope = guarded_hope(rails, horizon, budgets, arrivals)
flat = fixed_threshold(rails, horizon, budgets, arrivals)

symbols = {Branch.UPPER: "U", Branch.LOWER: "l", Branch.FALLBACK: "!"}
line = "".join(symbols[Branch(b)] for b in hope.branch[:, 0])
print("\nbranch per round (U upper, l lower, ! fallback):")
for start in range(0, T, 80):
    print(f"  {start + 1:>4}  {line[start:start + 80]}")

print(f"\nlast round off the upper guardrail: {int(hope.last_non_upper()[0])} of {T}")
print(f"leftover  guarded-hope {hope.waste:8.3f}   fixed-threshold {flat.waste:8.3f}")
print(f"realized arrivals {int(arrivals.sum())} vs expected {horizon.expected_counts.sum():.1f}")
