"""
Training the choice model
=========================

The model encodes each design to a Gaussian over latent features, embeds each
consumer in the same space, and scores a purchase by a softmax over inner
products. We train on held-in designs and then ask how well it ranks both
the designs it saw and the ones it never did.
"""

import numpy as np

from designgap.data import normalize_splits, split_dataset
from designgap.evaluation import topk_accuracy
from designgap.model import ModelConfig, train
from designgap.synthetic import MarketConfig, gen_synthetic_market, plant_gap

mcfg = MarketConfig(seed=1)
ds, gt = gen_synthetic_market(mcfg)
splits, nrm = normalize_splits(split_dataset(ds, plant_gap(ds, gt, mcfg)))

model, history = train(splits, ModelConfig(seed=1, epochs=30))
for r in history[::5]:
    print(f"epoch {r.epoch:2d}  loss {r.loss:9.1f}  kl {r.kl:7.1f}  val top-1 {r.val_top1:.3f}")

# %%
# Held-out consumers choosing among existing designs.
D = len(model.catalog_ids)
print(f"random top-1 {1 / D:.3f}")
for k in (1, 5):
    print(f"top-{k} existing   {topk_accuracy(model, splits.test, k):.3f}")

# %%
# Purchasers of the hidden designs: each held-out design is encoded from its
# attributes and inserted next to the catalog, one at a time.
for k in (1, 5):
    print(f"top-{k} nonexisting {topk_accuracy(model, splits.gap_test, k, 'nonexisting'):.3f}")

# %%
# The latent cache holds the encoder mean of every catalog design (K x D).
print(model.H_d.shape, np.round(model.H_d[:, :4], 2))
