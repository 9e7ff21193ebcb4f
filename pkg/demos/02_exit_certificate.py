# # A finite-time exit certificate for a noisy integrator
#
# A point moves right at unit speed while noise pushes it sideways toward
# a wall at y = -0.5. The safety filter keeps the estimated margin away
# from zero. Because the Kalman covariances do not depend on data, an
# upper bound on the probability of touching the wall within T steps can
# be computed before running anything. Here it is compared with Monte
# Carlo.

import numpy as np

from seascbf.certificates import CertificateInputs, optimize_eta, riccati_prerun
from seascbf.experiments import bound_scenario, default_config
from seascbf.sim import monte_carlo

sc = default_config("bound-compare")["scenario"]
scn = bound_scenario(sc, sigma_y=0.15, beta=1.0)
sys = scn.system

# ## Offline Riccati run

run = riccati_prerun(sys, scn.initial_cov, scn.horizon)
print("posterior variance of y at k = 1, 10, 100:",
      run.posterior[[1, 10, 100], 1, 1])

# ## The bound for each horizon

c = scn.barrier.c
y0 = float(c @ scn.initial_mean - scn.barrier.b)
full = CertificateInputs.from_riccati(sys, run, c, y0, scn.filter.alpha)

# ## Monte Carlo with the filter in the loop

metrics = monte_carlo(scn, 200, seed_base=0)
for T in (10, 25, 50, 100):
    cert = optimize_eta(full.truncated(T))
    print(f"T = {T:3d}  bound {cert.bound:.3f}  (eta {cert.eta:.3f})  "
          f"observed {metrics.exit_frequency[T]:.3f}")
