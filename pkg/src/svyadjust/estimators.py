"""Scikit-learn style wrappers around the sampler and the draw adjustment."""

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_consistent_length, check_is_fitted

from .model import PriorSpec, SurveyDataset
from .replication import make_design
from .sampler import PosteriorDraws, SamplerConfig, sample_pseudo_posterior
from .sandwich import VARIANTS, adjust_draws
from .transform import YJTransform


def _as_dataset(X, y, group, weight, psu=None, stratum=None, feature_names=None):
    X = check_array(X, dtype=float, ensure_all_finite=True)
    y = np.asarray(y, dtype=float).ravel()
    group = np.asarray(group).ravel()
    weight = np.asarray(weight, dtype=float).ravel()
    arrays = [X, y, group, weight]
    arrays += [np.asarray(a).ravel() for a in (psu, stratum) if a is not None]
    check_consistent_length(*arrays)
    return SurveyDataset.from_arrays(
        y, X, group, weight, psu=psu, stratum=stratum, feature_names=feature_names
    )


class SurveyMixedLogit(ClassifierMixin, BaseEstimator):
    """Random-intercept logistic regression fitted to the survey-weighted
    pseudo-posterior by MCMC.

    ``X`` should contain an intercept column if one is wanted. Weights are
    normalized to sum to the sample size before sampling.

    Attributes set by :meth:`fit`: ``draws_`` (:class:`PosteriorDraws`),
    ``dataset_``, ``coef_``, ``random_effects_``, ``sigma_alpha_``,
    ``rhat_``, ``classes_``.
    """

    def __init__(self, n_chains=4, n_warmup=1000, n_keep=1000, seed=0,
                 adaptation="hmc", beta_prior_sd=10.0, sigma_prior="half_normal",
                 sigma_prior_scale=1.0):
        self.n_chains = n_chains
        self.n_warmup = n_warmup
        self.n_keep = n_keep
        self.seed = seed
        self.adaptation = adaptation
        self.beta_prior_sd = beta_prior_sd
        self.sigma_prior = sigma_prior
        self.sigma_prior_scale = sigma_prior_scale

    def _configs(self):
        sampler = SamplerConfig(
            n_chains=self.n_chains, n_warmup=self.n_warmup, n_keep=self.n_keep,
            seed=self.seed, adaptation=self.adaptation,
        )
        prior = PriorSpec(
            beta_prior_sd=self.beta_prior_sd, sigma_prior=self.sigma_prior,
            sigma_prior_scale=self.sigma_prior_scale,
        )
        return sampler, prior

    def fit(self, X, y, *, group, sample_weight=None, psu=None, stratum=None,
            feature_names=None):
        if sample_weight is None:
            sample_weight = np.ones(np.shape(y)[0])
        data = _as_dataset(X, y, group, sample_weight, psu, stratum, feature_names)
        sampler, prior = self._configs()
        self.dataset_ = data.normalized()
        self.prior_ = prior
        self.draws_ = sample_pseudo_posterior(self.dataset_, prior, sampler)
        layout = self.dataset_.layout
        mean = self.draws_.draws.mean(axis=0)
        self.coef_ = mean[layout.beta]
        self.random_effects_ = mean[layout.alpha]
        self.sigma_alpha_ = float(np.exp(self.draws_.draws[:, layout.log_sigma]).mean())
        self.rhat_ = self.draws_.rhat
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = data.p
        return self

    def _group_codes(self, group):
        labels = {lab: k for k, lab in enumerate(self.dataset_.group_labels.tolist())}
        codes = np.array([labels.get(g, -1) for g in np.asarray(group).ravel().tolist()])
        return codes

    def predict_proba(self, X, *, group):
        """Posterior-mean probabilities; unseen groups get a zero random effect."""
        check_is_fitted(self, "draws_")
        X = check_array(X, dtype=float)
        codes = self._group_codes(group)
        check_consistent_length(X, codes)
        layout = self.dataset_.layout
        D = self.draws_.draws
        alpha = np.where(codes[None, :] >= 0, D[:, layout.alpha][:, np.maximum(codes, 0)], 0.0)
        p = expit(D[:, layout.beta] @ X.T + alpha).mean(axis=0)
        return np.column_stack([1.0 - p, p])

    def predict(self, X, *, group):
        return (self.predict_proba(X, group=group)[:, 1] >= 0.5).astype(int)


class SandwichAdjuster(TransformerMixin, BaseEstimator):
    """Post-hoc adjustment of pseudo-posterior draws.

    ``fit`` estimates the curvature pieces from a draw matrix and its dataset;
    ``transform`` applies the fitted affine map (or, for ``yeo_johnson``, the
    fitted transform-adjust-back-transform) to draws with the same columns.
    """

    def __init__(self, variant="yeo_johnson", replication="delete_a_group_jackknife",
                 n_replicates=100, seed=0, prior=None):
        self.variant = variant
        self.replication = replication
        self.n_replicates = n_replicates
        self.seed = seed
        self.prior = prior

    def fit(self, draws, dataset, design=None):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        X = draws.draws if isinstance(draws, PosteriorDraws) else check_array(draws)
        prior = self.prior if self.prior is not None else PriorSpec()
        if design is None:
            design = make_design(dataset, self.replication, R=self.n_replicates, seed=self.seed)
        res = adjust_draws(self.variant, X, dataset, prior, design)
        self.design_ = design
        self.result_ = res
        self.curvature_ = res.curvature
        self.T_ = res.T
        self.center_ = res.center
        self.design_effect_ = res.design_effect
        self.lambdas_ = res.lambdas
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, draws):
        check_is_fitted(self, "T_")
        X = draws.draws if isinstance(draws, PosteriorDraws) else check_array(draws)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} columns, got {X.shape[1]}")
        if self.variant == "yeo_johnson":
            extras = self.curvature_.extras
            yj = YJTransform(self.lambdas_, loc=extras["loc"], scale=extras["scale"])
            E = yj.forward(X)
            eta_bar = yj.forward(self.center_)
            E_adj, _ = yj.clamp((E - eta_bar) @ self.T_ + eta_bar)
            out = yj.inverse(E_adj)
        else:
            out = (X - self.center_) @ self.T_ + self.center_
        if isinstance(draws, PosteriorDraws):
            return draws.with_draws(out)
        return out

    def fit_transform(self, draws, dataset=None, design=None):
        self.fit(draws, dataset, design)
        return self.result_.adjusted_draws
