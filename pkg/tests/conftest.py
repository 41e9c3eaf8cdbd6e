import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from scipy import stats
from scipy.special import logsumexp

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

import oracles as O  # noqa: E402
from designgap.checks import random_designs, random_schema  # noqa: E402
from designgap.data import normalize_splits, split_dataset  # noqa: E402
from designgap.model import ModelConfig, init_model, train  # noqa: E402
from designgap.synthetic import MarketConfig, gen_synthetic_market, plant_gap  # noqa: E402

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


def tiny_1d_model(seed, consumer_dim=2, hidden=3):
    """K = 1 model with random weights and one random design row."""
    rng = np.random.default_rng([seed, 99])
    schema = random_schema(rng)
    cfg = ModelConfig(latent_dim=1, encoder_hidden=(hidden,), decoder_hidden=(hidden,),
                      embedder_hidden=(hidden,), seed=seed)
    model = init_model(cfg, schema, consumer_dim, rng)
    for k, v in model.params.items():
        if k.endswith(".b"):
            model.params[k] = rng.normal(0, 0.3, v.shape)
    return model, random_designs(schema, 2, rng), rng


def posterior_matched(seed):
    """A K = 1 model whose encoder ignores its input and proposes a widened posterior."""
    model, X, _ = tiny_1d_model(seed)
    x = X[0]
    g = np.linspace(-10, 10, 2001)
    logf = O.log_px_given_h(model, x, g[:, None]) + stats.norm.logpdf(g)
    w = np.exp(logf - logsumexp(logf))
    mean = float(w @ g)
    std = float(np.sqrt(w @ (g - mean) ** 2))
    for k in model.params:
        if k.startswith("enc."):
            model.params[k] = np.zeros_like(model.params[k])
    model.params["enc.mu.b"] = np.array([mean])
    model.params["enc.sigma.b"] = np.array([math.log(math.expm1(1.5 * std))])
    return model, x


@pytest.fixture(scope="session")
def small_market():
    cfg = MarketConfig(seed=1, n_consumers=600)
    ds, gt = gen_synthetic_market(cfg)
    spec = plant_gap(ds, gt, cfg)
    splits, nrm = normalize_splits(split_dataset(ds, spec))
    return cfg, ds, gt, spec, splits, nrm


@pytest.fixture(scope="session")
def small_model(small_market):
    splits = small_market[4]
    model, history = train(splits, ModelConfig(seed=1, epochs=15))
    return model, history
