"""
How plausible is a design?
==========================

Feasibility is the negative log marginal density of a design under the
decoder, estimated by importance sampling with the encoder as proposal. On a
one-dimensional latent space we can check it against brute-force quadrature.
"""

import numpy as np
from scipy import stats
from scipy.special import logsumexp

from designgap.checks import random_designs, random_schema
from designgap.gaps import feasibility_nll
from designgap.model import ModelConfig, design_loglik_rows, init_model

rng = np.random.default_rng(3)
schema = random_schema(rng)
model = init_model(ModelConfig(latent_dim=1, encoder_hidden=(4,), decoder_hidden=(4,),
                               embedder_hidden=(4,)), schema, 2, rng)
x = random_designs(schema, 1, rng)[0]

g = np.linspace(-10, 10, 2001)
logf = design_loglik_rows(model, x, g[:, None]) + stats.norm.logpdf(g)
quad = -logsumexp(logf, b=np.gradient(g))
print(f"quadrature NLL {quad:.4f}")

# %%
# An untrained encoder is a poor proposal, so the estimate converges slowly.
for S in (10, 100, 1000, 10_000):
    print(f"S = {S:6d}  IS NLL {feasibility_nll(model, x, S, np.random.default_rng(0)):.4f}")

# %%
# A proposal close to the posterior (here: read off the grid, then widened).
w = np.exp(logf - logsumexp(logf))
mean, std = w @ g, np.sqrt(w @ (g - w @ g) ** 2)
for k in list(model.params):
    if k.startswith("enc."):
        model.params[k] = np.zeros_like(model.params[k])
model.params["enc.mu.b"] = np.array([mean])
model.params["enc.sigma.b"] = np.array([np.log(np.expm1(1.5 * std))])
for S in (10, 100, 1000, 10_000):
    print(f"S = {S:6d}  IS NLL {feasibility_nll(model, x, S, np.random.default_rng(0)):.4f}")
