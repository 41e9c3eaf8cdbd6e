"""
A synthetic market with a planted gap
=====================================

Designs sit in clusters of a small latent space; consumers belong to taste
segments, and one segment points at a cluster of three designs that we will
later hide from the model.
"""

import numpy as np

from designgap.data import split_dataset
from designgap.synthetic import MarketConfig, gen_synthetic_market, plant_gap

cfg = MarketConfig(seed=0)
ds, gt = gen_synthetic_market(cfg)
print(ds.n_designs, "designs,", ds.n_consumers, "consumers,", len(ds.design_schema), "design blocks")

# %%
# Observed design blocks are noisy emissions of the latent coordinates.
print(ds.design_schema.names[:5], "...")
print(ds.designs[:3, :5].round(2))

# %%
# Market shares next to the shares implied by the generator's own utilities.
rows = ds.design_rows(ds.events[:, 1])
empirical = np.bincount(rows, minlength=ds.n_designs) / ds.n_consumers
exact = gt.choice_probabilities().mean(axis=0)
for d in np.argsort(-exact)[:5]:
    print(f"design {d:2d}  empirical {empirical[d]:.3f}  softmax {exact[d]:.3f}")

# %%
# The gap cluster: its designs and the consumers who bought them.
spec = plant_gap(ds, gt, cfg)
print("validation gaps", spec.val_gap_ids, "test gaps", spec.test_gap_ids)
print(len(ds.purchasers(spec.held_out_ids)), "purchasers leave the training data")

splits = split_dataset(ds, spec)
for name in ("train", "val", "test", "gap_val", "gap_test"):
    part = getattr(splits, name)
    print(f"{name:9s} {part.n_consumers:5d} consumers  {part.n_designs:3d} designs")
