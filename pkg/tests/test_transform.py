import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from svyadjust.exceptions import DataError, DomainError
from svyadjust.model import PriorSpec, find_mode, grad_log_pseudo_posterior, hessian_fd
from svyadjust.replication import make_half_sample_bootstrap
from svyadjust.sandwich import adjust_draws, build_curvature, apply_adjustment, condition_psd
from svyadjust.transform import (
    YJTransform,
    build_G,
    fit_lambda,
    yj_adjust,
    yj_forward,
    yj_inverse,
    yj_inverse_deriv,
    yj_profile_loglik,
    yj_range,
)

from conftest import make_logit_data


class TestForward:
    def test_identity_lambda(self):
        assert yj_forward(1.0, 3.0) == pytest.approx(3.0)

    def test_log_branch(self):
        assert yj_forward(0.0, 0.0) == 0.0
        assert yj_forward(0.0, 1.0) == pytest.approx(math.log(2), abs=1e-15)
        assert yj_forward(0.0, -1.0) == pytest.approx(-1.5, abs=1e-15)
        # negative side switches to the log at lam = 2
        assert yj_forward(2.0, -1.0) == pytest.approx(-math.log(2), abs=1e-15)

    def test_lambda_one_is_identity_everywhere(self):
        x = np.linspace(-5, 5, 101)
        assert np.allclose(yj_forward(1.0, x), x, atol=1e-14)

    @pytest.mark.parametrize("lam", np.linspace(-3, 5, 33))
    def test_strictly_increasing(self, lam):
        x = np.linspace(-4, 4, 2001)
        assert np.all(np.diff(yj_forward(lam, x)) > 0)

    @pytest.mark.parametrize("lam", [-2.0, -0.5, 0.0, 0.7, 2.0, 3.5])
    def test_continuous_at_zero(self, lam):
        assert abs(yj_forward(lam, 1e-12) - yj_forward(lam, -1e-12)) <= 1e-8

    @pytest.mark.parametrize("x", [-3.0, -0.4, 0.3, 2.5])
    @pytest.mark.parametrize("branch", [0.0, 2.0])
    def test_continuous_in_lambda(self, x, branch):
        left = yj_forward(branch - 1e-9, x)
        right = yj_forward(branch + 1e-9, x)
        mid = yj_forward(branch, x)
        assert abs(left - mid) <= 1e-8 and abs(right - mid) <= 1e-8

    def test_overflow(self):
        from svyadjust.exceptions import NonFiniteError

        with pytest.raises(NonFiniteError):
            yj_forward(5.0, 1e80)


class TestInverse:
    def test_identity(self):
        eta = np.linspace(0, 10, 11)
        assert np.allclose(yj_inverse(1.0, eta), eta)

    def test_log_branch(self):
        assert yj_inverse(0.0, math.log(2)) == pytest.approx(1.0, abs=1e-15)
        assert yj_inverse(2.0, -math.log(2)) == pytest.approx(-1.0, abs=1e-15)

    def test_random_roundtrips(self, rng):
        lam = rng.uniform(-3, 5, 10000)
        x = rng.normal(0, 2, 10000)
        back = yj_inverse(lam, yj_forward(lam, x))
        assert np.max(np.abs(back - x) / (1 + np.abs(x))) <= 1e-10

    def test_forward_of_inverse(self, rng):
        lam = rng.uniform(-3, 5, 5000)
        x = rng.normal(0, 1.5, 5000)
        eta = yj_forward(lam, x)
        assert np.max(np.abs(yj_forward(lam, yj_inverse(lam, eta)) - eta) / (1 + np.abs(eta))) <= 1e-12

    def test_outside_range(self):
        # lam = 2.5: positive branch unbounded, negative branch bounded below by -2
        lo, hi = yj_range(2.5)
        assert lo == pytest.approx(-2.0) and hi == np.inf
        with pytest.raises(DomainError):
            yj_inverse(2.5, -2.5)
        with pytest.raises(DomainError):
            yj_inverse(-1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(-3, 5), st.floats(-20, 20))
def test_roundtrip_property(lam, x):
    back = yj_inverse(lam, yj_forward(lam, x))
    assert abs(back - x) <= 1e-10 * (1 + abs(x))


class TestInverseDerivative:
    def test_identity(self):
        assert yj_inverse_deriv(1.0, 2.0) == pytest.approx(1.0, abs=1e-8)

    def test_log_branch(self):
        assert yj_inverse_deriv(0.0, 1.0) == pytest.approx(math.e, abs=1e-5)

    def test_positive_on_grid(self):
        for lam in np.linspace(-3, 5, 17):
            lo, hi = yj_range(lam)
            eta = np.linspace(max(lo, -5) + 0.05, min(hi, 5) - 0.05, 50)
            assert np.all(yj_inverse_deriv(lam, eta) > 0)

    def test_boundary(self):
        with pytest.raises(DomainError):
            yj_inverse_deriv(-1.0, 1.0 - 1e-9)


class TestFitLambda:
    def test_normal_column(self):
        x = np.random.default_rng(0).standard_normal(10000)
        assert 0.85 <= fit_lambda(x) <= 1.15

    def test_right_skewed_column(self):
        x = np.expm1(np.random.default_rng(1).standard_normal(5000))
        lam = fit_lambda(x)
        grid = np.linspace(-3, 5, 801)
        best = grid[np.argmax([yj_profile_loglik(g, x) for g in grid])]
        assert lam < 0.5
        assert abs(lam - best) <= 0.01

    def test_local_optimum(self, rng):
        x = rng.gamma(2.0, 1.0, 2000) - 1.0
        lam = fit_lambda(x)
        f = yj_profile_loglik(lam, x)
        assert f >= yj_profile_loglik(lam + 0.05, x)
        assert f >= yj_profile_loglik(lam - 0.05, x)

    def test_constant_column(self):
        with pytest.raises(DataError):
            fit_lambda(np.ones(100))

    def test_too_few_values(self):
        with pytest.raises(DataError):
            fit_lambda(np.arange(10.0))


class TestG:
    def test_identity_lambdas(self):
        assert np.allclose(build_G(np.array([0.5, 1.0, 2.0]), 1.0), np.ones((3, 3)))

    def test_outer_product(self):
        G = build_G(np.zeros(2), 1.0, scale=[2.0, 3.0])
        assert np.allclose(G, [[4, 6], [6, 9]])

    def test_symmetric_rank_one_positive(self, rng):
        lam = rng.uniform(0.2, 1.8, 5)
        G = build_G(rng.normal(0, 0.5, 5), lam)
        assert np.array_equal(G, G.T)
        assert np.linalg.matrix_rank(G) == 1
        assert np.all(G > 0)

    def test_hadamard_identity(self, rng):
        lam = rng.uniform(0.2, 1.8, 4)
        eta = rng.normal(0, 0.5, 4)
        G = build_G(eta, lam)
        D = np.diag(np.sqrt(np.diag(G)))
        A = rng.normal(size=(4, 4))
        J = A @ A.T
        assert np.max(np.abs(J * G - D @ J @ D)) <= 1e-12 * np.abs(J).max()


class TestYJTransform:
    def test_standardized_roundtrip(self, rng):
        X = rng.normal([3.0, -2.0], [0.1, 2.0], size=(500, 2))
        yj = YJTransform.fit(X, standardize=True)
        assert np.allclose(yj.inverse(yj.forward(X)), X, atol=1e-10)

    def test_standardization_removes_location_dependence(self, rng):
        x = rng.gamma(3.0, 0.3, 2000)
        a = YJTransform.fit(x[:, None], standardize=True).lambdas
        b = YJTransform.fit(x[:, None] - 5.0, standardize=True).lambdas
        assert a == pytest.approx(b, abs=1e-3)

    def test_clamp_counts(self):
        yj = YJTransform(np.array([2.5, 1.0]))
        E = np.array([[-3.0, 0.0], [0.0, 5.0], [-2.0, -9.0]])
        clamped, n = yj.clamp(E)
        assert n == 2
        assert np.all(clamped[:, 0] > -2.0)
        assert np.all(np.isfinite(yj.inverse(clamped)))


def gaussian_problem(n=3000, G=4, seed=0, M=10000):
    d = make_logit_data(n=n, G=G, seed=seed, n_psu=n // 5).normalized()
    prior = PriorSpec()
    init = np.zeros(d.layout.K)
    init[-1] = math.log(0.5)
    mode = find_mode(d, prior, init)
    H = -hessian_fd(lambda t: grad_log_pseudo_posterior(t, d, prior), mode)
    H[-1, -1] = max(H[-1, -1], 2 * G)
    draws = np.random.default_rng(seed + 1).multivariate_normal(
        mode, np.linalg.inv(condition_psd(H)[0]), M
    )
    return d, prior, draws


class TestYJAdjust:
    def test_identity_round_trip(self):
        d, prior, draws = gaussian_problem(n=500, M=2000)
        design = make_half_sample_bootstrap(d, R=20)
        res = yj_adjust(draws, d, prior, design, force_identity=True)
        assert np.max(np.abs(res.adjusted_draws - draws)) <= 1e-10 * (1 + np.abs(draws).max())
        med_in, med_out = np.median(draws, axis=0), np.median(res.adjusted_draws, axis=0)
        assert np.max(np.abs(med_in - med_out)) <= 1e-10

    @pytest.mark.parametrize("standardize", [True, False])
    def test_unit_lambdas_match_prior_curvature(self, standardize):
        d, prior, draws = gaussian_problem(n=500, M=2000)
        design = make_half_sample_bootstrap(d, R=50, seed=3)
        yj = yj_adjust(draws, d, prior, design, lambdas=1.0, standardize=standardize)
        curv = build_curvature("prior_curvature", draws, d, prior, design,
                               h_source="posterior_cov", h_mode="at_mean")
        pc = apply_adjustment(draws, curv)
        assert np.max(np.abs(yj.adjusted_draws - pc.adjusted_draws)) <= 1e-8

    def test_well_specified_collapses(self):
        d, prior, draws = gaussian_problem(n=3000, M=10000)
        design = make_half_sample_bootstrap(d, R=400, seed=4)
        res = yj_adjust(draws, d, prior, design)
        q = [0.025, 0.5, 0.975]
        shift = np.abs(np.quantile(res.adjusted_draws, q, axis=0) - np.quantile(draws, q, axis=0))
        assert shift.max() <= 0.02 or np.all(shift <= 0.02 * (1 + np.abs(draws.mean(axis=0))))
        assert res.clamp_count == 0

    def test_prior_space_eta(self):
        d, prior, draws = gaussian_problem(n=500, M=2000)
        design = make_half_sample_bootstrap(d, R=30)
        res = yj_adjust(draws, d, prior, design, prior_space="eta")
        assert np.all(np.isfinite(res.adjusted_draws))
        with pytest.raises(ValueError):
            yj_adjust(draws, d, prior, design, prior_space="both")

    def test_dispatch(self):
        d, prior, draws = gaussian_problem(n=500, M=2000)
        design = make_half_sample_bootstrap(d, R=30, seed=5)
        a = adjust_draws("yeo_johnson", draws, d, prior, design)
        b = yj_adjust(draws, d, prior, design)
        assert np.array_equal(a.adjusted_draws, b.adjusted_draws)
        assert a.lambdas is not None and len(a.lambdas) == d.layout.K
