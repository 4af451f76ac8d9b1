import json

import numpy as np
import pytest
from scipy.special import expit

from svyadjust.exceptions import ConditioningError, DimensionError
from svyadjust.model import PriorSpec, SurveyDataset, find_mode, grad_log_pseudo_posterior, hessian_fd
from svyadjust.replication import make_delete_a_group_jackknife, make_half_sample_bootstrap
from svyadjust.sandwich import (
    CurvatureSet,
    adjust_draws,
    adjustment_matrices,
    apply_adjustment,
    build_curvature,
    condition_psd,
    estimate_H,
    estimate_H0,
    sqrt_matrix,
)

from conftest import make_logit_data


def random_spd(K, rng, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((K, K)))
    return (Q * np.linspace(1.0, cond, K)) @ Q.T


def curv(H, J, variant="naive"):
    K = H.shape[0]
    return CurvatureSet(variant=variant, H=H, H0=np.zeros((K, K)), J=J, H_used=H, J_used=J,
                        center=np.zeros(K))


def synthetic_draws(data, prior, M=400, seed=0):
    """Gaussian draws around the conditional mode with the Laplace covariance."""
    layout = data.layout
    init = np.zeros(layout.K)
    init[-1] = np.log(0.5)
    mode = find_mode(data, prior, init)
    H = -hessian_fd(lambda t: grad_log_pseudo_posterior(t, data, prior), mode)
    H[-1, -1] = max(H[-1, -1], 2 * layout.G)
    cov = np.linalg.inv(condition_psd(H)[0])
    return np.random.default_rng(seed).multivariate_normal(mode, cov, M)


class TestSqrtMatrix:
    def test_identity(self):
        assert np.allclose(sqrt_matrix(np.eye(4)), np.eye(4), atol=1e-12)

    def test_diagonal(self):
        assert np.allclose(sqrt_matrix(np.diag([4.0, 9.0])), np.diag([2.0, 3.0]))

    def test_reconstruction(self, rng):
        A = random_spd(6, rng)
        R = sqrt_matrix(A)
        assert np.allclose(R, np.triu(R))
        assert np.max(np.abs(R.T @ R - A)) <= 1e-10

    def test_zero_matrix(self):
        assert np.all(sqrt_matrix(np.zeros((3, 3))) == 0)

    def test_rank_deficient_is_conditioned(self):
        v = np.array([[1.0, 2.0, 3.0]])
        R = sqrt_matrix(v.T @ v)
        assert np.all(np.isfinite(R))

    def test_negative_eigenvalue_reported(self):
        A = np.diag([1.0, -0.5])
        with pytest.raises(ConditioningError) as err:
            sqrt_matrix(A, neg_tol=1e-8)
        assert err.value.eigenvalues.min() == pytest.approx(-0.5)

    def test_negative_trace(self):
        with pytest.raises(ConditioningError, match="negative trace"):
            condition_psd(np.diag([-1.0, 0.1]))

    def test_not_square(self):
        with pytest.raises(DimensionError):
            sqrt_matrix(np.ones((2, 3)))


class TestApplyAdjustment:
    def test_collapse(self, rng):
        H = random_spd(4, rng)
        X = rng.normal(size=(500, 4))
        res = apply_adjustment(X, curv(H, H.copy()))
        assert np.max(np.abs(res.adjusted_draws - X)) <= 1e-10
        assert np.allclose(res.R1, res.R2)

    def test_scalar_sandwich(self, rng):
        X = rng.normal(3.0, 0.7, size=(1000, 1))
        res = apply_adjustment(X, curv(np.eye(1), 4 * np.eye(1)))
        assert res.T[0, 0] == pytest.approx(2.0, abs=1e-12)
        assert res.adjusted_draws.std() == pytest.approx(2 * X.std(), rel=1e-10)

    def test_mean_preservation(self, rng):
        X = rng.normal(size=(300, 5)) + np.arange(5)
        res = apply_adjustment(X, curv(random_spd(5, rng), random_spd(5, rng)))
        dev = np.abs(X - X.mean(axis=0)).max()
        assert np.max(np.abs(res.adjusted_draws.mean(axis=0) - X.mean(axis=0))) <= 1e-10 * dev

    def test_affine_covariance_law(self, rng):
        X = rng.normal(size=(300, 4))
        res = apply_adjustment(X, curv(random_spd(4, rng), random_spd(4, rng)))
        C_in, C_out = np.cov(X.T), np.cov(res.adjusted_draws.T)
        assert np.max(np.abs(C_out - res.T.T @ C_in @ res.T)) <= 1e-10

    def test_square_roots(self, rng):
        H, J = random_spd(3, rng), random_spd(3, rng)
        R1, R2, T = adjustment_matrices(H, J)
        Hi = np.linalg.inv(H)
        assert np.allclose(R2.T @ R2, Hi, atol=1e-10)
        assert np.allclose(R1.T @ R1, Hi @ J @ Hi, atol=1e-10)
        assert np.allclose(R2 @ T, R1)

    def test_design_effect_positive(self, rng):
        X = rng.normal(size=(200, 3))
        res = apply_adjustment(X, curv(random_spd(3, rng), random_spd(3, rng)))
        assert np.all(res.design_effect > 0)

    def test_unadjusted_returns_input(self, rng):
        X = rng.normal(size=(50, 3))
        res = apply_adjustment(X, curv(np.eye(3), np.eye(3), variant="unadjusted"))
        assert np.array_equal(res.adjusted_draws, X)

    def test_dimension_mismatch(self, rng):
        with pytest.raises(DimensionError):
            apply_adjustment(rng.normal(size=(10, 3)), curv(np.eye(2), np.eye(2)))

    def test_likelihood_scale_equivariance(self, rng):
        H, J = random_spd(4, rng), random_spd(4, rng)
        T = adjustment_matrices(H, J)[2]
        for c in (0.01, 3.0, 250.0):
            assert np.max(np.abs(adjustment_matrices(c * H, c * J)[2] - T)) <= 1e-6

    def test_json_roundtrip(self, rng, tmp_path):
        X = rng.normal(size=(50, 2))
        res = apply_adjustment(X, curv(np.eye(2), 2 * np.eye(2)))
        payload = json.loads(json.dumps(res.to_dict()))
        assert np.allclose(payload["T"], res.T)
        assert "curvature" in payload


class TestEstimateH:
    def test_intercept_information(self):
        rng = np.random.default_rng(1)
        n = 400
        y = rng.binomial(1, 0.3, n).astype(float)
        d = SurveyDataset.from_arrays(y, np.ones((n, 1)), np.zeros(n, int), np.ones(n))
        draws = rng.normal([-0.8, 0.0, -1.0], [0.1, 0.01, 0.1], size=(200, 3))
        H = estimate_H(draws, d)
        theta_bar = draws.mean(axis=0)
        pbar = expit(theta_bar[0] + theta_bar[1])
        assert H[0, 0] == pytest.approx(n * pbar * (1 - pbar), rel=1e-6)

    def test_zero_weights(self, medium_data):
        d = medium_data.with_weights(np.zeros(medium_data.n))
        draws = np.random.default_rng(0).normal(size=(50, d.layout.K))
        assert np.all(estimate_H(draws, d, mode="averaged") == 0)

    def test_at_mean_vs_averaged(self):
        d = make_logit_data(n=1000, G=4, seed=11).normalized()
        prior = PriorSpec()
        draws = synthetic_draws(d, prior, M=400)
        H_mean = estimate_H(draws, d, mode="at_mean")
        H_avg = estimate_H(draws, d, mode="averaged", n_eval=40)
        mask = np.abs(H_mean) > 1e-8 * np.abs(H_mean).max()
        assert np.all(np.abs(H_avg[mask] / H_mean[mask] - 1) <= 0.10)

    def test_bad_mode(self, medium_data):
        with pytest.raises(ValueError):
            estimate_H(np.zeros((3, medium_data.layout.K)), medium_data, mode="median")


class TestBuildCurvature:
    def setup_method(self):
        self.data = make_logit_data(n=400, G=4, seed=5, weights="random", n_psu=80).normalized()
        self.design = make_delete_a_group_jackknife(self.data, n_groups=40, seed=1)

    def test_variant_structure(self):
        prior = PriorSpec()
        draws = synthetic_draws(self.data, prior)
        naive = build_curvature("naive", draws, self.data, prior, self.design)
        pc = build_curvature("prior_curvature", draws, self.data, prior, self.design)
        assert np.allclose(naive.H_used, naive.H + naive.H0)
        assert np.array_equal(naive.J_used, naive.J)
        assert np.allclose(pc.J_used, pc.J + pc.H0)
        assert np.array_equal(pc.H_used, naive.H_used)
        assert naive.extras["prior_info"] == "expected"

    def test_flat_prior_beta_blocks_agree(self):
        prior = PriorSpec(beta_prior_sd=1e6)
        draws = synthetic_draws(self.data, PriorSpec())
        naive = build_curvature("naive", draws, self.data, prior, self.design)
        pc = build_curvature("prior_curvature", draws, self.data, prior, self.design)
        b = slice(0, self.data.p)
        for A, B in ((naive.H_used, pc.H_used), (naive.J_used, pc.J_used)):
            assert np.max(np.abs(A[b, b] - B[b, b])) <= 1e-4 * np.abs(B[b, b]).max()

    def test_zero_information_collapses(self):
        prior = PriorSpec()
        draws = synthetic_draws(self.data, prior)
        d0 = self.data.with_weights(np.zeros(self.data.n))
        res = adjust_draws("prior_curvature", draws, d0, prior, self.design)
        c = res.curvature
        assert np.allclose(c.H_used, c.H0) and np.allclose(c.J_used, c.H0)
        assert np.max(np.abs(res.adjusted_draws - draws)) <= 1e-10 * np.abs(draws).max()

    def test_expected_prior_keeps_sandwich_psd(self):
        prior = PriorSpec()
        draws = synthetic_draws(self.data, prior)
        for variant in ("naive", "prior_curvature"):
            c = build_curvature(variant, draws, self.data, prior, self.design)
            assert np.linalg.eigvalsh(c.H_used).min() > 0

    def test_normalization_invariance(self):
        prior = PriorSpec()
        draws = synthetic_draws(self.data, prior)
        base = adjust_draws("prior_curvature", draws, self.data, prior, self.design)
        for c in (0.3, 40.0):
            rescaled = self.data.with_weights(c * self.data.w).normalized()
            res = adjust_draws("prior_curvature", draws, rescaled, prior, self.design)
            assert np.max(np.abs(res.T - base.T)) <= 1e-6

    def test_posterior_cov_source(self):
        prior = PriorSpec()
        draws = synthetic_draws(self.data, prior, M=2000)
        c = build_curvature("prior_curvature", draws, self.data, prior, self.design,
                            h_source="posterior_cov")
        assert np.allclose(c.H_used @ np.cov(draws.T), np.eye(self.data.layout.K), atol=1e-6)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            build_curvature("yeo_johnson", np.zeros((5, self.data.layout.K)), self.data,
                            PriorSpec(), self.design)
        with pytest.raises(ValueError):
            adjust_draws("bogus", np.zeros((5, self.data.layout.K)), self.data, PriorSpec(),
                         self.design)

    def test_estimate_H0_modes(self):
        draws = synthetic_draws(self.data, PriorSpec())
        lay = self.data.layout
        at_mean = estimate_H0(draws, PriorSpec(), lay, mode="at_mean")
        averaged = estimate_H0(draws, PriorSpec(), lay, mode="averaged")
        b = slice(0, lay.p)
        assert np.allclose(at_mean[b, b], averaged[b, b])
        # the average of exp(-2u) over draws exceeds its value at the mean of u
        a = lay.p
        assert averaged[a, a] > at_mean[a, a]


def test_half_sample_design_runs_end_to_end():
    d = make_logit_data(n=200, G=3, seed=9, weights="random", n_psu=40).normalized()
    prior = PriorSpec()
    draws = synthetic_draws(d, prior, M=300)
    design = make_half_sample_bootstrap(d, R=50, seed=0)
    for variant in ("unadjusted", "naive", "prior_curvature", "yeo_johnson"):
        res = adjust_draws(variant, draws, d, prior, design)
        assert res.adjusted_draws.shape == draws.shape
        assert np.all(np.isfinite(res.adjusted_draws))
