import math
from dataclasses import replace

import numpy as np
import pytest

from svyadjust.exceptions import SamplerDivergence
from svyadjust.model import PriorSpec, SurveyDataset
from svyadjust.sampler import (
    PosteriorDraws,
    SamplerConfig,
    adaptive_metropolis,
    effective_sample_size,
    hmc,
    posterior_cov,
    posterior_mean,
    run_chains,
    sample_pseudo_posterior,
    split_rhat,
)

from conftest import make_logit_data


def std_normal(x):
    return -0.5 * np.sum(x**2, axis=1), -x


class TestConfig:
    @pytest.mark.parametrize("kwargs", [
        {"n_warmup": 99}, {"n_keep": 50}, {"target_accept": 1.0}, {"adaptation": "nuts"},
        {"n_chains": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SamplerConfig(**kwargs)

    def test_roundtrip(self):
        cfg = SamplerConfig(n_chains=2, seed=9, adaptation="dense")
        assert SamplerConfig.from_dict(cfg.to_dict()) == replace(
            cfg, target_accept=cfg.accept_target
        )


class TestSummaries:
    def test_mean_single_draw(self):
        assert np.array_equal(posterior_mean(np.array([[1.0, -2.0, 3.0]])), [1.0, -2.0, 3.0])

    def test_mean_symmetric_pair(self):
        v = np.array([0.3, -1.7, 2.2])
        assert np.array_equal(posterior_mean(np.stack([v, -v])), np.zeros(3))

    def test_mean_two_orders(self, rng):
        X = rng.normal(size=(1000, 4)) * 1e3 + 5.0
        streaming = np.zeros(4)
        for i, row in enumerate(X, start=1):
            streaming += (row - streaming) / i
        assert np.max(np.abs(posterior_mean(X) - streaming)) <= 1e-12 * 1e3

    def test_cov_two_draws(self):
        d = 0.8
        C = posterior_cov(np.array([[1.0, 2.0], [1.0 + d, 2.0]]))
        assert C[0, 0] == pytest.approx(d**2 / 2)
        assert C[1, 1] == 0 and C[0, 1] == 0

    def test_cov_same_draw_set(self, rng):
        X = rng.normal(size=(30, 3))
        assert np.array_equal(posterior_cov(X), posterior_cov(X.copy()))
        # stacking the set twice only changes the M - 1 divisor
        Xd = np.vstack([X, X])
        assert np.allclose(posterior_cov(Xd), posterior_cov(X) * (29 / 30) * (60 / 59))

    def test_cov_double_loop(self, rng):
        X = rng.normal(size=(50, 4))
        M, K = X.shape
        mean = [sum(X[i, k] for i in range(M)) / M for k in range(K)]
        C = np.zeros((K, K))
        for a in range(K):
            for b in range(K):
                C[a, b] = sum((X[i, a] - mean[a]) * (X[i, b] - mean[b]) for i in range(M)) / (M - 1)
        assert np.max(np.abs(posterior_cov(X) - C)) <= 1e-12

    def test_rhat_near_one_for_iid(self, rng):
        chains = rng.normal(size=(4, 500, 3))
        assert np.all(np.abs(split_rhat(chains) - 1) < 0.02)

    def test_rhat_flags_shifted_chain(self, rng):
        chains = rng.normal(size=(4, 500, 1))
        chains[0] += 3
        assert split_rhat(chains)[0] > 1.1

    def test_ess_iid(self, rng):
        ess = effective_sample_size(rng.normal(size=(4, 1000, 2)))
        assert np.all(ess > 2500)


class TestSmokeTarget:
    @pytest.mark.parametrize("adaptation", ["dense", "diag", "mala"])
    def test_standard_normal_moments(self, adaptation):
        cfg = SamplerConfig(n_chains=4, n_warmup=2000, n_keep=5000, seed=1, adaptation=adaptation)
        res = adaptive_metropolis(
            lambda x: std_normal(x)[0], np.zeros(2), cfg, grad=lambda x: -x
        )
        assert res.M == 20000
        assert np.all(np.abs(res.draws.mean(axis=0)) < 0.05)
        assert np.all(np.abs(res.draws.var(axis=0) - 1) < 0.1)

    def test_hmc_standard_normal_moments(self):
        cfg = SamplerConfig(n_chains=4, n_warmup=500, n_keep=5000, seed=2)
        res = hmc(std_normal, np.zeros(2), cfg)
        assert np.all(np.abs(res.draws.mean(axis=0)) < 0.05)
        assert np.all(np.abs(res.draws.var(axis=0) - 1) < 0.1)

    @pytest.mark.parametrize("adaptation", ["dense", "diag", "mala", "hmc"])
    def test_acceptance_adapts_to_target(self, adaptation):
        cfg = SamplerConfig(n_chains=4, n_warmup=2000, n_keep=1000, seed=3, adaptation=adaptation)
        res = run_chains(std_normal, np.full(2, 0.5), cfg)
        warm = res.diagnostics["warmup_accept_rate"]
        assert np.all(np.abs(warm - cfg.accept_target) <= 0.1)
        if adaptation == "hmc":
            # sampling uses the averaged step size, which errs on the small side
            assert np.all(res.accept_rate >= cfg.accept_target - 0.1)
        else:
            assert np.all(np.abs(res.accept_rate - cfg.accept_target) <= 0.1)

    def test_conjugate_normal_hook(self, rng):
        # y_i ~ N(mu, 1), mu ~ N(0, 2^2): posterior N(m, v) in closed form
        y = rng.normal(1.3, 1.0, 40)
        v = 1.0 / (len(y) + 0.25)
        m = v * y.sum()

        def target(x):
            mu = x[:, 0]
            lp = -0.5 * ((y[None, :] - mu[:, None]) ** 2).sum(axis=1) - 0.125 * mu**2
            g = (y.sum() - len(y) * mu - 0.25 * mu)[:, None]
            return lp, g

        # chain lengths put the 2% band at >= 3 Monte-Carlo SEs of the variance
        for adaptation, n_keep in (("dense", 100000), ("hmc", 60000)):
            cfg = SamplerConfig(n_chains=4, n_warmup=1000, n_keep=n_keep, seed=4,
                                adaptation=adaptation)
            res = run_chains(target, np.zeros(1), cfg)
            assert res.draws.mean() == pytest.approx(m, rel=0.02)
            assert res.draws.var(ddof=1) == pytest.approx(v, rel=0.02)

    def test_nan_density_raises(self):
        cfg = SamplerConfig(n_chains=1, n_warmup=100, n_keep=100, adaptation="dense")

        def bad(x):
            return np.where(x[:, 0] > 0.05, np.nan, -0.5 * x[:, 0] ** 2)

        with pytest.raises(SamplerDivergence):
            adaptive_metropolis(bad, np.zeros(1), cfg, init_cov=np.eye(1))

    def test_non_finite_start_raises(self):
        cfg = SamplerConfig(n_chains=1, n_warmup=100, n_keep=100, adaptation="dense")
        with pytest.raises(SamplerDivergence):
            adaptive_metropolis(lambda x: np.full(len(x), -np.inf), np.zeros(1), cfg)


class TestPseudoPosterior:
    def test_intercept_matches_logit_of_mean(self):
        rng = np.random.default_rng(10)
        n = 500
        y = rng.binomial(1, 0.3, n).astype(float)
        d = SurveyDataset.from_arrays(y, np.ones((n, 1)), np.zeros(n, int), np.ones(n))
        # a tiny sigma scale pins the single random intercept at zero
        prior = PriorSpec(beta_prior_sd=1e6, sigma_prior_scale=1e-3)
        cfg = SamplerConfig(n_chains=4, n_warmup=1000, n_keep=2000, seed=5)
        res = sample_pseudo_posterior(d, prior, cfg)
        b0 = res.by_chain()[:, :, 0]
        mcse = b0.std() / math.sqrt(effective_sample_size(b0[..., None])[0])
        ybar = y.mean()
        assert abs(b0.mean() - math.log(ybar / (1 - ybar))) <= 3 * mcse

    def test_deterministic(self):
        d = make_logit_data(n=60, G=3, seed=2).normalized()
        cfg = SamplerConfig(n_chains=2, n_warmup=100, n_keep=100, seed=77)
        a = sample_pseudo_posterior(d, PriorSpec(), cfg)
        b = sample_pseudo_posterior(d, PriorSpec(), cfg)
        assert np.array_equal(a.draws, b.draws)
        assert np.array_equal(a.lp, b.lp)

    def test_output_shape_and_order(self):
        d = make_logit_data(n=80, G=3, seed=6).normalized()
        cfg = SamplerConfig(n_chains=3, n_warmup=200, n_keep=150, seed=1, adaptation="dense")
        res = sample_pseudo_posterior(d, PriorSpec(), cfg)
        assert isinstance(res, PosteriorDraws)
        assert res.draws.shape == (450, d.layout.K)
        assert res.param_names == d.param_names()
        assert list(np.unique(res.chain_id)) == [0, 1, 2]
        assert np.all(np.isfinite(res.draws))

