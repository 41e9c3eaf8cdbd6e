import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

import oracles as O
from conftest import posterior_matched, tiny_1d_model
from designgap.data import Block, VariableSchema
from designgap.gaps import (Baseline, ChoicePanel, GapConfig, UndefinedRho2, calibrate_thresholds,
                            early_agreement, feasibility_nll, feasibility_nlls, rho_squared,
                            rho_squared_early, rho_squared_from_probs, sample_gap_candidates,
                            subset_rows)
from designgap.model import ModelConfig, encode_np, init_model

HAND = (math.log(1.5) + math.log(2.0)) / (2 * math.log(3.0))


def linear_panel_model(catalog_logits=(0.0, 0.0), taste=1.0, n_consumers=4):
    """K = 1, every consumer embedded at ``taste``; ``H_d`` set by hand."""
    schema = VariableSchema((Block("r", "real"),))
    model = init_model(ModelConfig(latent_dim=1, embedder_hidden=()), schema, 1,
                       np.random.default_rng(0))
    model.params["emb.out.W"] = np.zeros((1, 1))
    model.params["emb.out.b"] = np.array([taste])
    model.H_d = np.array([catalog_logits], dtype=float)
    model.catalog_ids = np.arange(len(catalog_logits))
    return model, np.zeros((n_consumers, 1))


class TestFeasibility:
    def test_single_sample_collapses(self):
        model, X, _ = tiny_1d_model(2)
        z = np.array([[0.7]])
        mu, sigma = encode_np(model, model.design_schema.encode(X[:1]))
        h = mu[0] + sigma[0] * z[0]
        want = -(O.log_px_given_h(model, X[0], h[None, :])[0] + stats.norm.logpdf(h[0])
                 - stats.norm.logpdf(h[0], mu[0, 0], sigma[0, 0]))
        assert feasibility_nll(model, X[0], 1, z=z) == pytest.approx(want, rel=1e-10)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_quadrature(self, seed):
        model, x = posterior_matched(seed)
        got = feasibility_nll(model, x, 10_000, np.random.default_rng(seed))
        assert abs(got + O.log_marginal_1d(model, x)) <= 0.05

    @settings(max_examples=20)
    @given(st.integers(0, 10_000))
    def test_finite(self, seed):
        model, X, _ = tiny_1d_model(seed)
        assert np.isfinite(feasibility_nll(model, X[1], 32, np.random.default_rng(seed)))

    def test_doubling_samples_within_error(self):
        model, x = posterior_matched(11)
        a = feasibility_nll(model, x, 2000, np.random.default_rng(1))
        b = feasibility_nll(model, x, 4000, np.random.default_rng(2))
        # delta-method standard error of log-mean-exp from a fresh batch of weights
        z = np.random.default_rng(3).standard_normal((4000, 1))
        mu, sigma = encode_np(model, model.design_schema.encode(x[None, :]))
        h = mu[0] + sigma[0] * z
        logw = (O.log_px_given_h(model, x, h) + stats.norm.logpdf(h[:, 0])
                - stats.norm.logpdf(h[:, 0], mu[0, 0], sigma[0, 0]))
        w = np.exp(logw - logw.max())
        rel = w.std() / w.mean()
        se = math.hypot(rel / math.sqrt(2000), rel / math.sqrt(4000))
        assert abs(a - b) <= 4 * se

    def test_per_row_substreams(self):
        model, X, _ = tiny_1d_model(5)
        both = feasibility_nlls(model, X, 16, seed=3)
        assert both[1] == feasibility_nll(model, X[1], 16, np.random.default_rng([3, 1]))


class TestRho2:
    def test_perfect(self):
        assert rho_squared_from_probs([1.0, 1.0], [0.25, 0.5]).value == 1.0

    def test_baseline(self):
        assert rho_squared_from_probs([0.25, 0.5], [0.25, 0.5]).value == 0.0

    def test_hand_case(self):
        r = rho_squared_from_probs([0.5, 2 / 3], 1 / 3)
        assert abs(r.value - HAND) <= 1e-9
        assert abs(r.value - 0.50) < 1e-3

    def test_undefined(self):
        with pytest.raises(UndefinedRho2):
            rho_squared_from_probs([], 0.5)

    def test_clamped(self):
        r = rho_squared_from_probs([0.1], 0.5)
        assert r.value == 0.0 and r.clamped

    @given(st.lists(st.floats(0.01, 1.0), min_size=1, max_size=8), st.floats(0.01, 0.9),
           st.integers(2, 4))
    def test_duplication_invariant(self, p, p0, k):
        a = rho_squared_from_probs(p, p0).value
        b = rho_squared_from_probs(np.repeat(p, k), p0).value
        assert a == pytest.approx(b, abs=1e-12)

    @given(st.lists(st.floats(1e-6, 1.0), min_size=1, max_size=8), st.floats(1e-3, 0.99))
    def test_in_unit_interval(self, p, p0):
        assert 0.0 <= rho_squared_from_probs(p, p0).value <= 1.0


class TestPanel:
    def test_inserted_probability(self):
        model, X_c = linear_panel_model()
        logp, endorsed = ChoicePanel(model, X_c).insert(np.array([math.log(4.0)]))
        np.testing.assert_allclose(np.exp(logp), 2 / 3)
        assert endorsed.all()
        r = rho_squared(model, np.array([math.log(4.0)]), X_c)
        assert r.value == pytest.approx(math.log(2) / math.log(3), rel=1e-12)
        assert r.n_purchasers == 4

    def test_ties_lose(self):
        model, X_c = linear_panel_model((0.5, 0.0))
        _, endorsed = ChoicePanel(model, X_c).insert(np.array([0.5]))
        assert not endorsed.any()
        with pytest.raises(UndefinedRho2):
            rho_squared(model, np.array([0.5]), X_c)

    def test_recorded_purchasers_override(self):
        model, X_c = linear_panel_model()
        buyers = np.array([True, False, False, False])
        r = rho_squared(model, np.array([-1.0]), X_c, purchasers=buyers)
        assert r.n_purchasers == 1 and r.value == 0.0 and r.clamped

    def test_share_baseline(self):
        assert Baseline("share", 99).candidate_prob(20) == 0.01
        assert Baseline().candidate_prob(3) == 0.25
        with pytest.raises(ValueError):
            Baseline("share")


class TestEarlyTermination:
    def test_rejects_on_subset_without_full_pass(self):
        model, X_c = linear_panel_model(n_consumers=8)
        panel = ChoicePanel(model, X_c)
        res = rho_squared_early(panel, np.array([-2.0]), 0.1, subset_rows(8, 2, 0))
        assert res.early_rejected and res.rho2.value == 0.0
        assert panel.full_evaluations == 0

    def test_passes_to_full_panel(self):
        model, X_c = linear_panel_model(n_consumers=8)
        panel = ChoicePanel(model, X_c)
        res = rho_squared_early(panel, np.array([3.0]), 0.1, subset_rows(8, 2, 0))
        assert not res.early_rejected and panel.full_evaluations == 1

    def test_full_subset_matches_plain(self, small_market, small_model):
        model, splits = small_model[0], small_market[4]
        plain = sample_gap_candidates(model, ChoicePanel(model, splits.val.X_c),
                                      GapConfig(gamma2=0.3, n_candidates=30, n_importance=8))
        early = sample_gap_candidates(model, ChoicePanel(model, splits.val.X_c),
                                      GapConfig(gamma2=0.3, gamma_s=0.3, c_sub=10 ** 6,
                                                n_candidates=30, n_importance=8))
        assert [c.status for c in plain.candidates] == [c.status for c in early.candidates]
        assert [c.rho2 for c in plain.candidates] == [c.rho2 for c in early.candidates]

    def test_agreement_helper(self):
        sub = np.array([0.0, 0.5, 0.9])
        full = np.array([0.6, 0.6, 0.1])
        assert early_agreement(sub, full, 0.5, 0.0) == 1.0
        assert early_agreement(sub, full, 0.5, 0.4) == pytest.approx(2 / 3)


@pytest.fixture(scope="module")
def panel_setup(small_market, small_model):
    model, splits = small_model[0], small_market[4]
    return model, splits


class TestSampler:
    def run(self, setup, **kw):
        model, splits = setup
        kw.setdefault("n_candidates", 40)
        kw.setdefault("n_importance", 8)
        return sample_gap_candidates(model, ChoicePanel(model, splits.val.X_c), GapConfig(**kw))

    def test_zero_gamma2_accepts_all_feasible(self, panel_setup):
        s = self.run(panel_setup, gamma2=0.0)
        assert len(s.accepted) == len(s.feasible) == 40

    def test_neg_inf_gamma1_rejects_all(self, panel_setup):
        s = self.run(panel_setup, gamma1=-math.inf)
        assert not s.accepted and not s.feasible
        assert s.summary()["rejected_feasibility"] == 40

    def test_monotone_in_gamma2(self, panel_setup):
        sets = [{c.index for c in self.run(panel_setup, gamma2=g).accepted}
                for g in (0.0, 0.2, 0.5, 0.8)]
        for a, b in zip(sets, sets[1:]):
            assert b <= a

    def test_reproducible(self, panel_setup):
        a, b = self.run(panel_setup, seed=4), self.run(panel_setup, seed=4)
        for ca, cb in zip(a.candidates, b.candidates):
            np.testing.assert_array_equal(ca.x, cb.x)
            assert (ca.feasibility_nll, ca.rho2, ca.status) == (cb.feasibility_nll, cb.rho2,
                                                                cb.status)

    def test_candidate_uses_encoded_latent(self, panel_setup):
        model = panel_setup[0]
        c = self.run(panel_setup, n_candidates=1).candidates[0]
        mu, _ = encode_np(model, model.design_schema.encode(c.x[None, :]))
        np.testing.assert_array_equal(c.h_enc, mu[0])

    def test_config_validation(self):
        with pytest.raises(ValueError):
            GapConfig(gamma2=1.5)
        with pytest.raises(ValueError):
            GapConfig(c_sub=0)


class TestCalibration:
    def designs(self, small_market, n=20):
        full = small_market[4].full
        assert full.n_designs >= n
        return full.designs[:n]

    def test_full_percentile_bounds_all(self, small_market, panel_setup):
        model, splits = panel_setup
        X = self.designs(small_market)
        th = calibrate_thresholds(model, X, [], ChoicePanel(model, splits.val.X_c), q=100,
                                  n_probe=20, n_importance=16)
        assert th.gamma1 == feasibility_nlls(model, X, 16, 0).max()
        assert th.gamma2 == 0.0

    def test_q95_interpolates(self, small_market, panel_setup):
        model, splits = panel_setup
        X = self.designs(small_market)
        th = calibrate_thresholds(model, X, [0.2, 0.4], ChoicePanel(model, splits.val.X_c),
                                  q=95, n_probe=20, n_importance=16)
        x = np.sort(feasibility_nlls(model, X, 16, 0))
        assert th.gamma1 == pytest.approx(x[18] + 0.05 * (x[19] - x[18]), rel=1e-12)
        assert th.gamma2 == pytest.approx(0.3)

    def test_agreement_and_determinism(self, small_market, panel_setup):
        model, splits = panel_setup
        X = self.designs(small_market)
        runs = [calibrate_thresholds(model, X, [0.3], ChoicePanel(model, splits.val.X_c),
                                     n_probe=40, n_importance=8, seed=2) for _ in range(2)]
        assert runs[0] == runs[1]
        assert runs[0].agreement >= 0.9
        assert 0.0 <= runs[0].gamma_s <= runs[0].gamma2
