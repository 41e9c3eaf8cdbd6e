"""
Searching for design gaps
=========================

Concepts are drawn from the latent prior and decoded. A concept survives if
it is plausible (feasibility NLL under gamma1) and if the consumers who would
now pick it first are well served by it (rho-squared over gamma2). Both
thresholds come from the validation split.
"""

import numpy as np

from designgap.config import RunConfig
from designgap.experiment import run_seed

res = run_seed(RunConfig(), seed=2)
th = res.thresholds
print(f"gamma1 {th.gamma1:.1f}  gamma2 {th.gamma2:.3f}  gamma_s {th.gamma_s:.3f}  "
      f"(early agreement {th.agreement:.2f})")
print(res.sample.summary())

# %%
# Distance to the hidden test gaps, in the model's latent space.
print(f"MSqE accepted {res.gap['msqe_accepted']:.3f}  feasible {res.gap['msqe_feasible']:.3f}")

# %%
# Rho-squared of the real hidden designs against that of all feasible concepts.
h = res.histogram
print("bin        induced  sampled")
for lo, a, b in zip(h.edges[:-1], h.mass["induced_gaps"], h.mass["sampled"]):
    if a or b:
        print(f"[{lo:.2f})     {a:6.3f}   {b:6.3f}")
print(f"means: induced {h.means['induced_gaps']:.3f}  sampled {h.means['sampled']:.3f}")

# %%
# The best concepts by rho-squared.
best = sorted(res.sample.accepted, key=lambda c: -c.rho2)[:3]
for c in best:
    print(c.index, round(c.rho2, 3), round(c.feasibility_nll, 1), np.round(c.h_enc, 2))
