# ## Two checkpoints on a one-asset market
#
# Solve for the multipliers, inspect the feedback policy and the mean/variance paths.

import math

import numpy as np

from mtsmv import MarketModel, ProblemSpec, frontier_recursion, propagate_moments, solve_multipliers
from mtsmv import solve_n2_closed_form

r = 0.04
market = MarketModel.constant(2.0, r, [0.12], [[0.2]])
spec = ProblemSpec(market, (0, 1, 2), 1.0, (math.exp(2.1 * r), math.exp(5.0 * r)))
spec.targets

# ### Multipliers

mult, chain, feas = solve_multipliers(spec)
print("mu     ", mult.mu)
print("lambda ", mult.lam)
print("feasible:", feas.ok)

# the explicit two-checkpoint formulas give the same numbers
closed = solve_n2_closed_form(spec)
np.max(np.abs(np.array(closed.mu) - np.array(mult.mu)))

# ### Offsets of the feedback policy
#
# On segment i the allocation is proportional to h_i(t) - Y, where h_i discounts the offset k_i.

chain.offsets

# ### Moments along the horizon

rep = propagate_moments(chain, mult, spec, grid_step=0.25)
for t, m, v in zip(rep.times, rep.mean, rep.variance):
    print(f"t={t:4.2f}  mean={m:.6f}  var={v:.3e}")

# checkpoint means hit the targets, and the variances follow the frontier recursion
rep.checkpoint_means, rep.checkpoint_variances, frontier_recursion(spec)
