"""
Averaging over a reference batch
=================================

The stable target replaces one conditional velocity by a self-normalized
average over n reference points. When the references come from the
posterior procedure (one exact posterior draw at a random slot, the rest
from the data distribution) the target stays unbiased for v(xt), and its
variance falls roughly like 1/n.
"""

import numpy as np

from stable_velocity import gmm, profiler, targets
from stable_velocity.rng import substream
from stable_velocity.schedules import Schedule

schedule = Schedule("linear")
spec = gmm.GmmSpec(np.array([0.5, 0.5]), np.array([[-2.0], [2.0]]), np.array([[0.25], [0.25]]))

# One fixed noisy point, many reference batches
t = 0.6
rng = substream(1, "demo")
xt = np.array([0.4])
v = gmm.exact_velocity(spec, schedule, xt, t)
print(f"exact velocity at xt={xt[0]}, t={t}: {v[0]:+.4f}")
for n in (1, 4, 32, 256):
    refs = targets.sample_posterior_refs(spec, schedule, xt, t, n, rng, trials=20_000)
    vhat = targets.stablevm_target(refs, schedule, np.broadcast_to(xt, (20_000, 1)), t)[:, 0]
    se = vhat.std(ddof=1) / np.sqrt(vhat.size)
    print(f"n={n:4d}  mean {vhat.mean():+.4f} +- {se:.4f}   spread {vhat.std():.4f}")

# Averaged over xt as well, the variance decays with slope close to -1
ns = [8, 16, 32, 64, 128, 256]
vals = [profiler.variance_stablevm(spec, schedule, 0.7, n, substream(2, n), probes=1024)[0] for n in ns]
cfm, _ = profiler.variance_cfm(spec, schedule, 0.7, substream(3), probes=4096)
print(f"\nV_CFM(0.7) = {cfm:.4f}")
for n, val in zip(ns, vals):
    print(f"V_StableVM(0.7, n={n:3d}) = {val:.5f}")
print(f"log-log slope: {profiler.decay_slope(ns, vals):.3f}")
