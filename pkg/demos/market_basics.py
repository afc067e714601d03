"""Solve a few small markets and watch what happens when demand grows.

Run: python3 demos/market_basics.py
"""

import numpy as np

from seqfair import MarketInstance, kkt_residual, solve_eg

crossed = MarketInstance(budgets=[1.0, 1.0], weights=[[2.0, 1.0], [1.0, 2.0]], counts=[1, 1])
sol = solve_eg(crossed)
print("two types with opposite tastes")
print("  allocation\n", np.round(sol.allocation, 6))
print("  prices", np.round(sol.prices, 6), " residual", f"{sol.kkt_residual:.1e}")

# same market, 40% more people of each type: bundles shrink, prices rise, by the same factor
bigger = solve_eg(crossed.with_counts(crossed.counts * 1.4))
print("\nwith 1.4x the population")
print("  allocation ratio", np.round(bigger.allocation.sum() / sol.allocation.sum(), 6))
print("  price ratio     ", np.round(bigger.prices / sol.prices, 6))

# a random 4x3 market; the certificate is the KKT residual, not the iteration count
rng = np.random.default_rng(0)
market = MarketInstance(rng.uniform(1, 5, 3), rng.uniform(0.1, 5, (4, 3)), rng.integers(1, 6, 4))
sol = solve_eg(market)
print(f"\nrandom 4 types x 3 resources: {sol.iterations} iterations, residual {kkt_residual(market, sol):.1e}")
print("  utilities", np.round(sol.utilities, 4))
