"""
Large steps where the posterior has collapsed
==============================================

Below some time xi the marginal velocity is close to the conditional
velocity of a single data point, and for that field the StableVS update is
exact for any step size. This script compares endpoint error against a fine
RK4 reference for a uniform Euler grid and for two-regime plans that spend
9 of their 28 steps below xi. On the linear schedule the StableVS update
reduces algebraically to an Euler step, so there the gain comes only from
where the steps are spent; on vp-cosine the two updates differ.
"""

import numpy as np

from stable_velocity import gmm, solvers
from stable_velocity.rng import substream
from stable_velocity.schedules import Schedule
from stable_velocity.solvers import SolverPlan

# Eight tight components (std 0.05) on the plane
spec = gmm.GmmSpec(np.full(8, 1 / 8), substream(0, "m").uniform(-1, 1, (8, 2)), np.full((8, 2), 0.05 ** 2))

for kind in ("linear", "vp-cosine"):
    schedule = Schedule(kind)
    field = lambda x, t: gmm.exact_velocity(spec, schedule, x, t)  # noqa: E731
    x = solvers.prior_sample(schedule, substream(0, "x", kind), 256, 2)
    ref = solvers.integrate_reference(schedule, field, x, 4000)

    def error(plan):
        return np.linalg.norm(solvers.run_plan(plan, schedule, field, x) - ref, axis=1).mean()

    print(f"\n{kind}: uniform Euler, 28 steps: {error(SolverPlan(xi=1.0, high_steps=0, low_steps=28, stablevs=False)):.4f}")
    for xi in (0.1, 0.2, 0.3, 0.5, 0.85):
        print(f"  xi={xi:4.2f}  StableVS 9 + Euler 19: {error(SolverPlan(xi=xi)):.4f}"
              f"   Euler 9 + 19: {error(SolverPlan(xi=xi, stablevs=False)):.4f}")
