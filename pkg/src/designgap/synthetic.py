"""Synthetic markets with known latent structure and a planted design gap.

Designs live in a low-dimensional latent space, grouped into clusters. Each
consumer belongs to a taste segment pointing at one cluster, and one extra
segment points at the *gap cluster*: a handful of designs placed away from
the others. Purchases are drawn from a multinomial logit over the bilinear
utility ``taste . latent / taste_scale`` (Gumbel-max sampling). Observed
design blocks and consumer covariates are noisy random emissions of the
latent coordinates.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from .data import Block, Dataset, SplitSpec, VariableSchema

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MarketConfig:
    seed: int = 0
    n_designs: int = 20
    n_consumers: int = 2000
    latent_dim: int = 3
    n_clusters: int = 4
    cluster_radius: float = 2.0
    cluster_spread: float = 0.45
    n_real: int = 12
    n_binary: int = 10
    n_categorical: int = 8
    cardinality: int = 4
    n_consumer_real: int = 6
    n_consumer_binary: int = 1
    n_consumer_categorical: int = 1
    consumer_cardinality: int = 3
    emission_noise: float = 0.1
    covariate_noise: float = 0.25
    taste_spread: float = 0.5
    taste_scale: float = 0.3
    gap_center: Optional[Tuple[float, ...]] = None
    gap_radius: float = 0.35
    n_gap_designs: int = 3
    gap_segment_weight: float = 0.5
    n_val_gaps: int = 1
    train_frac: float = 0.7
    val_frac: float = 0.15

    def __post_init__(self):
        counts = {k: getattr(self, k) for k in (
            "n_designs", "n_consumers", "latent_dim", "n_clusters")}
        for k, v in counts.items():
            if v <= 0:
                raise ValueError(f"{k} must be positive")
        if self.n_real + self.n_binary + self.n_categorical <= 0:
            raise ValueError("at least one design block is required")
        if min(self.n_real, self.n_binary, self.n_categorical, self.n_consumer_real,
               self.n_consumer_binary, self.n_consumer_categorical) < 0:
            raise ValueError("block counts must be non-negative")
        if self.n_consumer_real + self.n_consumer_binary + self.n_consumer_categorical <= 0:
            raise ValueError("at least one consumer block is required")
        if self.gap_segment_weight < 0:
            raise ValueError("gap_segment_weight must be >= 0")
        if self.taste_scale <= 0:
            raise ValueError("taste_scale must be > 0")
        if not 0 <= self.n_gap_designs <= self.n_designs:
            raise ValueError("n_gap_designs must lie in [0, n_designs]")
        if self.n_designs - self.n_gap_designs < 1:
            raise ValueError("at least one held-in design is required")
        if not 0 <= self.n_val_gaps <= self.n_gap_designs:
            raise ValueError("n_val_gaps must lie in [0, n_gap_designs]")
        if self.gap_center is not None:
            if len(self.gap_center) != self.latent_dim:
                raise ValueError("gap_center must have latent_dim entries")
            object.__setattr__(self, "gap_center", tuple(float(v) for v in self.gap_center))


@dataclass(frozen=True)
class GroundTruth:
    design_latent: np.ndarray      # (D, K_true), rows aligned with Dataset.design_ids
    design_cluster: np.ndarray     # (D,), gap designs carry label n_clusters
    consumer_taste: np.ndarray     # (C, K_true)
    consumer_segment: np.ndarray   # (C,)
    gap_center: np.ndarray
    gap_design_ids: np.ndarray
    taste_scale: float
    emission: dict = field(repr=False, default_factory=dict)

    def utilities(self) -> np.ndarray:
        """(C, D) systematic utilities the purchases were drawn from."""
        return self.consumer_taste @ self.design_latent.T / self.taste_scale

    def choice_probabilities(self) -> np.ndarray:
        u = self.utilities()
        u = u - u.max(axis=1, keepdims=True)
        p = np.exp(u)
        return p / p.sum(axis=1, keepdims=True)


def _spread_directions(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    """``n`` unit vectors chosen greedily to be far apart."""
    if k == 1:
        return np.array([[1.0 if i % 2 == 0 else -1.0] for i in range(n)])
    pool = rng.standard_normal((256, k))
    pool /= np.linalg.norm(pool, axis=1, keepdims=True)
    chosen = [0]
    for _ in range(n - 1):
        sim = np.max(pool @ pool[chosen].T, axis=1)
        sim[chosen] = np.inf
        chosen.append(int(np.argmin(sim)))
    return pool[chosen]


def _schemas(cfg: MarketConfig) -> Tuple[VariableSchema, VariableSchema]:
    blocks = []
    for i in range(cfg.n_real):
        blocks.append(Block(f"r{i}", "real", 1, "objective" if i % 2 == 0 else "subjective"))
    for i in range(cfg.n_binary):
        blocks.append(Block(f"b{i}", "binary", 1, "objective" if i % 2 == 0 else "subjective"))
    for i in range(cfg.n_categorical):
        blocks.append(Block(f"c{i}", "categorical", cfg.cardinality,
                            "objective" if i % 2 == 0 else "subjective"))
    cblocks = [Block(f"x{i}", "real") for i in range(cfg.n_consumer_real)]
    cblocks += [Block(f"xb{i}", "binary") for i in range(cfg.n_consumer_binary)]
    cblocks += [Block(f"xc{i}", "categorical", cfg.consumer_cardinality)
                for i in range(cfg.n_consumer_categorical)]
    return VariableSchema(tuple(blocks)), VariableSchema(tuple(cblocks))


def _emit(rng, z, n_real, n_binary, n_cat, card, noise, w=None):
    """Random mixed-type emission of latent rows ``z``; returns (values, weights).

    Fresh weights are drawn unless ``w`` is given.
    """
    k = z.shape[1]
    if w is None:
        w = {
            "real_W": rng.normal(0, 1, (k, n_real)), "real_b": rng.normal(0, 1, n_real),
            "bin_W": rng.normal(0, 1.5, (k, n_binary)), "bin_b": rng.normal(0, 0.5, n_binary),
            "cat_W": rng.normal(0, 1.5, (n_cat, k, card)),
            "cat_b": rng.normal(0, 0.5, (n_cat, card)),
        }
    n = len(z)
    real = z @ w["real_W"] + w["real_b"] + noise * rng.standard_normal((n, n_real))
    bin_logit = z @ w["bin_W"] + w["bin_b"]
    binary = (rng.random((n, n_binary)) < 1.0 / (1.0 + np.exp(-bin_logit))).astype(float)
    cat = np.empty((n, n_cat))
    for j in range(n_cat):
        logits = z @ w["cat_W"][j] + w["cat_b"][j]
        cat[:, j] = np.argmax(logits + rng.gumbel(size=logits.shape), axis=1)
    return np.hstack([real, binary, cat]), w


def gen_synthetic_market(cfg: MarketConfig) -> Tuple[Dataset, GroundTruth]:
    """Draw a market; deterministic given ``cfg`` (including its seed)."""
    rng = np.random.default_rng(cfg.seed)
    k, D, C = cfg.latent_dim, cfg.n_designs, cfg.n_consumers

    dirs = _spread_directions(rng, cfg.n_clusters + 1, k)
    centers = cfg.cluster_radius * dirs[:cfg.n_clusters]
    gap_center = (np.asarray(cfg.gap_center) if cfg.gap_center is not None
                  else cfg.cluster_radius * dirs[-1])

    n_gap = cfg.n_gap_designs
    labels = np.concatenate([np.arange(D - n_gap) % cfg.n_clusters,
                             np.full(n_gap, cfg.n_clusters)])
    latent = np.empty((D, k))
    regular = labels < cfg.n_clusters
    latent[regular] = centers[labels[regular]] + cfg.cluster_spread * rng.standard_normal(
        (regular.sum(), k))
    if n_gap:
        u = rng.standard_normal((n_gap, k))
        u /= np.linalg.norm(u, axis=1, keepdims=True)
        r = rng.random(n_gap) ** (1.0 / k)
        latent[~regular] = gap_center + cfg.gap_radius * r[:, None] * u
    perm = rng.permutation(D)
    latent, labels = latent[perm], labels[perm]
    design_ids = np.arange(D, dtype=np.int64)

    seg_dirs = np.vstack([centers, gap_center[None, :]]) if n_gap else centers
    seg_dirs = seg_dirs / np.linalg.norm(seg_dirs, axis=1, keepdims=True)
    weights = np.ones(len(seg_dirs))
    if n_gap:
        weights[-1] = cfg.gap_segment_weight
    segment = rng.choice(len(seg_dirs), size=C, p=weights / weights.sum())
    taste = seg_dirs[segment] + cfg.taste_spread * rng.standard_normal((C, k))

    utility = taste @ latent.T / cfg.taste_scale
    chosen = np.argmax(utility + rng.gumbel(size=utility.shape), axis=1)

    dschema, cschema = _schemas(cfg)
    dvals, dw = _emit(rng, latent, cfg.n_real, cfg.n_binary, cfg.n_categorical,
                      cfg.cardinality, cfg.emission_noise)
    cvals, cw = _emit(rng, taste, cfg.n_consumer_real, cfg.n_consumer_binary,
                      cfg.n_consumer_categorical, cfg.consumer_cardinality, cfg.covariate_noise)

    consumer_ids = np.arange(C, dtype=np.int64)
    events = np.column_stack([consumer_ids, design_ids[chosen]])
    ds = Dataset(dschema, cschema, design_ids, dvals, consumer_ids, cvals, events)
    gt = GroundTruth(latent, labels, taste, segment, gap_center,
                     design_ids[labels == cfg.n_clusters], cfg.taste_scale,
                     {"design": dw, "consumer": cw})
    return ds, gt


def plant_gap(ds: Dataset, gt: GroundTruth, cfg: MarketConfig) -> SplitSpec:
    """Hold out the gap-cluster designs.

    The first ``cfg.n_val_gaps`` gap designs (in a seeded order) become
    validation gaps, the rest test gaps.
    """
    gap_ids = np.sort(gt.gap_design_ids)
    order = np.random.default_rng(cfg.seed + 1).permutation(len(gap_ids))
    gap_ids = gap_ids[order]
    val_ids = tuple(sorted(int(i) for i in gap_ids[:cfg.n_val_gaps]))
    test_ids = tuple(sorted(int(i) for i in gap_ids[cfg.n_val_gaps:]))
    n_buyers = len(ds.purchasers(gap_ids))
    log.info("planted gap: %d designs held out, %d purchasers removed from training",
             len(gap_ids), n_buyers)
    return SplitSpec(seed=cfg.seed, train=cfg.train_frac, val=cfg.val_frac,
                     test=1.0 - cfg.train_frac - cfg.val_frac,
                     val_gap_ids=val_ids, test_gap_ids=test_ids)


def emit_designs(gt: GroundTruth, cfg: MarketConfig, latent: np.ndarray,
                 rng: np.random.Generator) -> np.ndarray:
    """Raw design block rows for arbitrary latent points, through the market's emission."""
    vals, _ = _emit(rng, np.atleast_2d(latent), cfg.n_real, cfg.n_binary, cfg.n_categorical,
                    cfg.cardinality, cfg.emission_noise, gt.emission["design"])
    return vals


def support_probes(gt: GroundTruth, cfg: MarketConfig, n: int, seed: int,
                   far: float = 3.0) -> tuple:
    """Design probes labelled by the generator: ``(inside, outside)``.

    Inside probes sit at the existing designs' latent points plus cluster
    noise; outside probes are pushed radially to ``far`` times the cluster
    radius beyond them.
    """
    rng = np.random.default_rng([seed, 0x9b])
    base = gt.design_latent[rng.integers(0, len(gt.design_latent), n)]
    inside = base + cfg.cluster_spread * 0.5 * rng.standard_normal(base.shape)
    u = rng.standard_normal(base.shape)
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    outside = far * cfg.cluster_radius * u + base
    return emit_designs(gt, cfg, inside, rng), emit_designs(gt, cfg, outside, rng)
