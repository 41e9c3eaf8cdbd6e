"""Randomized gradient checks of the full training objective."""

from __future__ import annotations

from typing import List, Tuple

import numpy as np

from . import autodiff as ad
from .data import Block, VariableSchema
from .model import Batch, Catalog, ChoiceModel, ModelConfig, elbo, init_model


def random_schema(rng: np.random.Generator) -> VariableSchema:
    """A small mixed schema with at least one block of every kind."""
    blocks = [Block(f"r{i}", "real") for i in range(rng.integers(1, 4))]
    blocks += [Block(f"b{i}", "binary") for i in range(rng.integers(1, 3))]
    blocks += [Block(f"c{i}", "categorical", int(rng.integers(2, 5)))
               for i in range(rng.integers(1, 3))]
    return VariableSchema(tuple(blocks))


def random_designs(schema: VariableSchema, n: int, rng: np.random.Generator) -> np.ndarray:
    cols = []
    for b in schema.blocks:
        if b.kind == "real":
            cols.append(rng.uniform(-2, 2, n))
        elif b.kind == "binary":
            cols.append(rng.integers(0, 2, n).astype(float))
        else:
            cols.append(rng.integers(0, b.cardinality, n).astype(float))
    return np.column_stack(cols)


def random_instance(seed: int, K: int, n_designs: int = 5, n_events: int = 6,
                    consumer_dim: int = 3, hidden: int = 4
                    ) -> Tuple[ChoiceModel, Catalog, Batch, np.ndarray]:
    """Model, catalog, minibatch and fixed latent draws for one random problem."""
    rng = np.random.default_rng([seed, K])
    schema = random_schema(rng)
    cfg = ModelConfig(latent_dim=K, encoder_hidden=(hidden,), decoder_hidden=(hidden,),
                      embedder_hidden=(hidden,), kl_weight=float(rng.uniform(0.1, 2.0)),
                      seed=seed)
    model = init_model(cfg, schema, consumer_dim, rng)
    for k, v in model.params.items():
        if k.endswith(".b"):
            model.params[k] = rng.normal(0, 0.3, v.shape)
    X = random_designs(schema, n_designs, rng)
    catalog = Catalog(schema.encode(X), X, np.arange(n_designs))
    batch = Batch(rng.uniform(-2, 2, (n_events, consumer_dim)),
                  rng.integers(0, n_designs, n_events))
    z = rng.standard_normal((n_designs, K))
    return model, catalog, batch, z


def elbo_grad_check(seed: int, K: int, h: float = 1e-5, tol: float = 1e-4) -> ad.GradCheckReport:
    """Reverse-mode ELBO gradient versus central differences, latent draws held fixed."""
    model, catalog, batch, z = random_instance(seed, K)
    return ad.grad_check(lambda P: elbo(model, catalog, batch, z=z, P=P)[0],
                         model.params, h=h, tol=tol)


def elbo_grad_suite(n: int = 10, seed: int = 0, latent_dims=(2, 4, 8)) -> List[Tuple[int, int, ad.GradCheckReport]]:
    """``n`` random configurations cycling through ``latent_dims``."""
    return [(seed + i, latent_dims[i % len(latent_dims)],
             elbo_grad_check(seed + i, latent_dims[i % len(latent_dims)])) for i in range(n)]
