import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from designgap.data import Block, Dataset, VariableSchema
from designgap.evaluation import (EvalReport, choice_metrics, feasibility_eval, gap_eval, msqe,
                                  read_histogram, rho2_histogram, topk_accuracy)
from designgap.model import ModelConfig, init_model

SCHEMA = VariableSchema((Block("r0", "real"), Block("r1", "real")))


def market(design_latents, choices, taste):
    """Model with identity K = 2 encoder and constant consumer embedding ``taste``.

    Design ``j`` has raw blocks equal to its latent row, so encoding is exact.
    """
    model = init_model(ModelConfig(latent_dim=2, encoder_hidden=(), embedder_hidden=()),
                       SCHEMA, 1, np.random.default_rng(0))
    model.params["enc.mu.W"] = np.eye(2)
    model.params["enc.mu.b"] = np.zeros(2)
    model.params["emb.out.W"] = np.zeros((1, 2))
    model.params["emb.out.b"] = np.asarray(taste, dtype=float)
    X = np.asarray(design_latents, dtype=float)
    C = len(choices)
    ds = Dataset(SCHEMA, VariableSchema((Block("x", "real"),)), np.arange(len(X)), X,
                 np.arange(C), np.zeros((C, 1)), np.column_stack([np.arange(C), choices]))
    return model, ds


def with_catalog(model, ds, ids):
    rows = ds.design_rows(ids)
    model.refresh_cache(ds.X_d[rows], ids)
    return model


class TestTopK:
    def test_k_equals_catalog(self):
        rng = np.random.default_rng(0)
        model, ds = market(rng.normal(size=(6, 2)), rng.integers(0, 6, 30), [1.0, -0.5])
        with_catalog(model, ds, np.arange(6))
        assert topk_accuracy(model, ds, 6) == 1.0

    def test_uniform_297(self):
        model, ds = market(np.zeros((297, 2)), np.arange(297), [1.0, 1.0])
        with_catalog(model, ds, np.arange(297))
        # every utility ties; the lowest id wins, bought by one consumer in 297
        assert 100 * topk_accuracy(model, ds, 1) == pytest.approx(100 / 297)
        assert round(100 * topk_accuracy(model, ds, 1), 2) == 0.34

    @given(st.integers(0, 1000))
    def test_top5_at_least_top1(self, seed):
        rng = np.random.default_rng(seed)
        model, ds = market(rng.normal(size=(8, 2)), rng.integers(0, 8, 20), rng.normal(size=2))
        with_catalog(model, ds, np.arange(8))
        assert topk_accuracy(model, ds, 5) >= topk_accuracy(model, ds, 1)

    def test_nonexisting_inserts_held_out(self):
        # design 2 is held out and is the best for the taste direction
        X = [[1.0, 0.0], [0.0, 1.0], [3.0, 0.0]]
        model, ds = market(X, [2, 2, 0], [1.0, 0.0])
        with_catalog(model, ds, np.array([0, 1]))
        gap = ds.subset(ds.purchasers([2]))
        assert topk_accuracy(model, gap, 1, "nonexisting") == 1.0
        # a consumer who bought an existing design still ranks within the catalog
        held_in = ds.subset(ds.purchasers([0]))
        assert topk_accuracy(model, held_in, 1, "nonexisting") == topk_accuracy(model, held_in, 1)

    def test_nonexisting_only_its_own_design(self):
        # two held-out designs; each event sees only the one it bought
        X = [[1.0, 0.0], [3.0, 0.0], [5.0, 0.0]]
        model, ds = market(X, [1, 2], [1.0, 0.0])
        with_catalog(model, ds, np.array([0]))
        assert topk_accuracy(model, ds, 1, "nonexisting") == 1.0

    def test_empty_and_invalid(self):
        model, ds = market([[0.0, 0.0]], [0], [1.0, 0.0])
        with_catalog(model, ds, np.array([0]))
        assert np.isnan(topk_accuracy(model, ds.subset([]), 1))
        with pytest.raises(ValueError):
            topk_accuracy(model, ds, 0)
        with pytest.raises(ValueError):
            topk_accuracy(model, ds, 1, "imagined")

    def test_choice_metrics_keys(self):
        model, ds = market(np.eye(2), [0, 1], [1.0, 0.0])
        with_catalog(model, ds, np.array([0, 1]))
        m = choice_metrics(model, ds, ds.subset([]))
        assert set(m) == {"top1_existing", "top5_existing", "top1_nonexisting",
                          "top5_nonexisting", "random_top1"}
        assert m["random_top1"] == 0.5


class TestFeasibilityEval:
    def test_identical_sets(self):
        model, ds = market(np.random.default_rng(1).normal(size=(4, 2)), [0], [1.0, 0.0])
        a = feasibility_eval(model, ds.designs, 16, seed=2)
        b = feasibility_eval(model, np.array(ds.designs), 16, seed=2)
        assert a.mean == b.mean and a.median == b.median


class TestMsqe:
    def test_accepted_equal_gaps(self):
        G = np.random.default_rng(0).normal(size=(3, 4))
        assert gap_eval(G, G[:1], G)[0] == 0.0

    def test_two_points(self):
        G = np.zeros((1, 3))
        d = 1.7
        P = np.array([[0.0, 0.0, 0.0], [d, 0.0, 0.0]])
        assert gap_eval(P, P, G)[0] == pytest.approx((0 + d ** 2 / 3) / 2, rel=1e-14)

    def test_nearest_gap(self):
        G = np.array([[0.0, 0.0], [10.0, 0.0]])
        np.testing.assert_allclose(msqe([[9.0, 0.0]], G), [0.5])

    def test_empty(self):
        a, r = gap_eval(np.zeros((0, 2)), np.ones((1, 2)), np.zeros((1, 2)))
        assert np.isnan(a) and r == 1.0

    @given(arrays(np.float64, (5, 3), elements=st.floats(-5, 5)),
           arrays(np.float64, (2, 3), elements=st.floats(-5, 5)))
    def test_non_negative(self, P, G):
        assert np.all(msqe(P, G) >= 0)


class TestHistogram:
    @given(st.lists(st.floats(0, 1), min_size=1, max_size=50),
           st.lists(st.floats(0, 1), min_size=1, max_size=50))
    def test_normalized(self, a, b):
        h = rho2_histogram({"induced_gaps": a, "sampled": b})
        for g in ("induced_gaps", "sampled"):
            assert abs(h.mass[g].sum() - 1.0) <= 1e-9
        assert len(h.edges) == 21

    def test_single_candidate(self):
        h = rho2_histogram({"sampled": [0.42]})
        assert h.mass["sampled"].max() == 1.0 and np.count_nonzero(h.mass["sampled"]) == 1
        assert h.mass["sampled"][8] == 1.0

    def test_one_in_last_bin(self):
        assert rho2_histogram({"g": [1.0]}).mass["g"][-1] == 1.0

    def test_csv_round_trip(self, tmp_path):
        h = rho2_histogram({"induced_gaps": [0.1, 0.9], "sampled": [0.5]})
        h.write_csv(tmp_path / "h.csv")
        back = read_histogram(tmp_path / "h.csv")
        np.testing.assert_array_equal(back["sampled"], h.mass["sampled"])
        np.testing.assert_array_equal(back["bin_lo"], h.edges[:-1])


class TestReport:
    def test_std_needs_two_seeds(self):
        r = EvalReport("choice", {0: {"top1": 0.5}})
        assert r.std("top1") is None
        r = EvalReport("choice", {0: {"top1": 0.5}, 1: {"top1": 0.7}, 2: {"top1": 0.6}})
        assert r.mean("top1") == pytest.approx(0.6)
        assert r.std("top1") == pytest.approx(np.std([0.5, 0.7, 0.6], ddof=1))

    def test_nan_skipped(self):
        r = EvalReport("gap", {0: {"m": np.nan}, 1: {"m": 2.0}})
        assert r.mean("m") == 2.0 and r.std("m") is None

    def test_csv(self, tmp_path):
        r = EvalReport("feasibility", {3: {"a": 1.0}, 4: {"a": 2.0}})
        r.write_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "stage,metric,mean,std,seed_3,seed_4"
        assert lines[1].startswith("feasibility,a,1.5,")

    def test_unknown_stage(self):
        with pytest.raises(ValueError):
            EvalReport("vibes", {})
