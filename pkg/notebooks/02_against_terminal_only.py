# ## Intermediate targets vs a terminal-only investor
#
# Both investors reach the same terminal mean. The one with an intermediate target trades
# a larger terminal variance for a smaller variance at t1.

import math

import numpy as np

from mtsmv import MarketModel, ProblemSpec, classical_baseline, compare_models, propagate_moments
from mtsmv import solve_multipliers

r = 0.04
market = MarketModel.constant(2.0, r, [0.12], [[0.2]])
spec = ProblemSpec(market, (0, 1, 2), 1.0, (math.exp(2.1 * r), math.exp(5.0 * r)))

cmp = compare_models(spec)
print("window for L1:", cmp.window)
print("Var* :", cmp.var_star)
print("Var# :", cmp.var_classical)
print("sum  :", cmp.sum_star, "vs", cmp.sum_classical)

# ### Mean paths
#
# The terminal-only mean runs above the two-checkpoint mean everywhere strictly inside (0, T).

mult, chain, _ = solve_multipliers(spec)
star = propagate_moments(chain, mult, spec, 0.1)
base = classical_baseline(spec, 0.1)
np.column_stack([star.times, star.mean, base.mean, base.mean - star.mean])

# ### Scanning L1
#
# Sum dominance holds on the window, and also on a mirror interval below it.

l2 = spec.targets[1]
for l1 in np.linspace(1.05, 1.11, 7):
    c = compare_models(ProblemSpec(market, (0, 1, 2), 1.0, (l1, l2)))
    print(f"L1={l1:.3f}  in window={c.window[0] <= l1 < c.window[1]}  sum*<sum#={c.sum_star < c.sum_classical}")
