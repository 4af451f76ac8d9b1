"""Weighted random-intercept logistic model.

The parameter vector is packed flat as ``(beta[0:p], alpha[0:G], log_sigma_alpha)``
and every curvature or score quantity in the package lives in that unconstrained
space. Survey weights enter the likelihood as exponents on each unit's Bernoulli
contribution; the prior is left unweighted.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import optimize, sparse
from scipy.special import expit

from .exceptions import ConvergenceError, DataError, DimensionError, NonFiniteError

_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


def _codes(values, n_levels=None, name="labels"):
    """Factorize ``values`` into 0-based integer codes and their labels."""
    values = np.asarray(values)
    if n_levels is not None:
        codes = np.asarray(values, dtype=np.int64)
        if codes.size and (codes.min() < 0 or codes.max() >= n_levels):
            raise DataError(f"{name} codes must lie in [0, {n_levels})")
        return codes, np.arange(n_levels)
    labels, codes = np.unique(values, return_inverse=True)
    return codes.astype(np.int64), labels


@dataclass(frozen=True, eq=False)
class SurveyDataset:
    """Sample data for the weighted multilevel logistic model.

    ``group``, ``psu`` and ``stratum`` are stored as 0-based integer codes; the
    original labels are kept alongside. ``weight_scale`` records the factor by
    which weights were multiplied in :meth:`normalized`.
    """

    y: np.ndarray
    X: np.ndarray
    group: np.ndarray
    w: np.ndarray
    psu: np.ndarray
    stratum: np.ndarray
    n_groups: int
    feature_names: tuple = ()
    group_labels: np.ndarray = None
    psu_labels: np.ndarray = None
    stratum_labels: np.ndarray = None
    weight_scale: float = 1.0
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(
        cls,
        y,
        X,
        group,
        w,
        psu=None,
        stratum=None,
        *,
        n_groups=None,
        feature_names=None,
        allow_zero_weights=True,
    ):
        """Validate raw arrays and build a dataset.

        If ``n_groups`` is given, ``group`` must already hold codes in
        ``[0, n_groups)``; otherwise arbitrary labels are factorized. A missing
        ``psu`` makes every unit its own PSU; a missing ``stratum`` puts all
        units in one stratum.
        """
        y = np.asarray(y, dtype=float).ravel()
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        n = y.shape[0]
        if n < 1:
            raise DataError("dataset must contain at least one unit")
        if X.shape[0] != n:
            raise DimensionError(f"X has {X.shape[0]} rows but y has {n} entries")
        if not np.all(np.isin(y, (0.0, 1.0))):
            raise DataError("y must be binary (0/1)")
        if not np.all(np.isfinite(X)):
            raise DataError("X contains non-finite values")
        zero_cols = np.flatnonzero(~np.any(X != 0.0, axis=0))
        if zero_cols.size:
            raise DataError(f"X column(s) {zero_cols.tolist()} are all zero")

        w = np.asarray(w, dtype=float).ravel()
        if w.shape[0] != n:
            raise DimensionError(f"weight has {w.shape[0]} entries, expected {n}")
        if not np.all(np.isfinite(w)):
            raise DataError("weights must be finite")
        if allow_zero_weights:
            if np.any(w < 0):
                raise DataError("weights must be nonnegative")
        elif np.any(w <= 0):
            raise DataError("weights must be strictly positive")

        group = np.asarray(group).ravel()
        if group.shape[0] != n:
            raise DimensionError(f"group has {group.shape[0]} entries, expected {n}")
        group_codes, group_labels = _codes(group, n_groups, "group")
        G = int(n_groups) if n_groups is not None else len(group_labels)
        if G < 1:
            raise DataError("need at least one group")

        if psu is None:
            psu = np.arange(n)
        psu = np.asarray(psu).ravel()
        if psu.shape[0] != n:
            raise DimensionError(f"psu has {psu.shape[0]} entries, expected {n}")
        if psu.dtype.kind in "OUS" and np.any(np.char.str_len(psu.astype(str)) == 0):
            raise DataError("psu labels must be nonempty")
        if stratum is None:
            stratum = np.zeros(n, dtype=np.int64)
        stratum = np.asarray(stratum).ravel()
        if stratum.shape[0] != n:
            raise DimensionError(f"stratum has {stratum.shape[0]} entries, expected {n}")
        stratum_codes, stratum_labels = _codes(stratum, name="stratum")
        # PSUs are nested in strata: the same label in two strata is two PSUs.
        psu_keys = np.char.add(
            np.char.add(stratum_codes.astype(str), "\x1f"), psu.astype(str)
        )
        psu_codes, _ = _codes(psu_keys, name="psu")
        _, first = np.unique(psu_codes, return_index=True)
        psu_labels = psu[first]

        p = X.shape[1]
        if feature_names is None:
            feature_names = tuple(f"x{k}" for k in range(p))
        feature_names = tuple(str(f) for f in feature_names)
        if len(feature_names) != p:
            raise DimensionError("feature_names length does not match X columns")

        return cls(
            y=y,
            X=X,
            group=group_codes,
            w=w,
            psu=psu_codes,
            stratum=stratum_codes,
            n_groups=G,
            feature_names=feature_names,
            group_labels=group_labels,
            psu_labels=psu_labels,
            stratum_labels=stratum_labels,
        )

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.X.shape[1]

    @property
    def G(self):
        return self.n_groups

    @property
    def layout(self):
        return ParamLayout(self.p, self.n_groups)

    @property
    def n_psu(self):
        return int(self.psu.max()) + 1

    def with_weights(self, w):
        """Copy of the dataset with a new weight vector (zeros allowed)."""
        w = np.asarray(w, dtype=float).ravel()
        if w.shape != self.w.shape:
            raise DimensionError(f"weight vector must have length {self.n}")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DataError("weights must be finite and nonnegative")
        return replace(self, w=w, weight_scale=1.0)

    def normalized(self):
        """Copy with weights rescaled to sum to ``n``; the factor is recorded."""
        total = self.w.sum()
        if total <= 0:
            raise DataError("cannot normalize weights that sum to zero")
        scale = self.n / total
        return replace(self, w=self.w * scale, weight_scale=self.weight_scale * scale)

    def group_indicator(self):
        """Sparse ``n x G`` one-hot matrix of group membership."""
        return sparse.csr_matrix(
            (np.ones(self.n), (np.arange(self.n), self.group)),
            shape=(self.n, self.n_groups),
        )

    def param_names(self):
        labels = self.group_labels if self.group_labels is not None else range(self.G)
        return self.layout.names(self.feature_names, labels)


@dataclass(frozen=True)
class ParamVector:
    """Unpacked view of a flat parameter vector."""

    beta: np.ndarray
    alpha: np.ndarray
    log_sigma_alpha: float

    @property
    def sigma_alpha(self):
        return float(np.exp(self.log_sigma_alpha))

    def pack(self):
        return np.concatenate([self.beta, self.alpha, [self.log_sigma_alpha]])


@dataclass(frozen=True)
class ParamLayout:
    """Fixed ordering between :class:`ParamVector` and flat length-``K`` arrays."""

    p: int
    G: int

    @property
    def K(self):
        return self.p + self.G + 1

    @property
    def beta(self):
        return slice(0, self.p)

    @property
    def alpha(self):
        return slice(self.p, self.p + self.G)

    @property
    def log_sigma(self):
        return self.p + self.G

    def pack(self, beta, alpha, log_sigma_alpha):
        beta = np.asarray(beta, dtype=float).ravel()
        alpha = np.asarray(alpha, dtype=float).ravel()
        if beta.shape[0] != self.p or alpha.shape[0] != self.G:
            raise DimensionError(
                f"expected beta of length {self.p} and alpha of length {self.G}"
            )
        return np.concatenate([beta, alpha, [float(log_sigma_alpha)]])

    def unpack(self, theta):
        theta = self.check(theta)
        return ParamVector(
            beta=theta[self.beta].copy(),
            alpha=theta[self.alpha].copy(),
            log_sigma_alpha=float(theta[self.log_sigma]),
        )

    def check(self, theta):
        theta = np.asarray(theta, dtype=float)
        if theta.shape[-1] != self.K:
            raise DimensionError(
                f"parameter vector has length {theta.shape[-1]}, expected "
                f"K = p + G + 1 = {self.K}"
            )
        return theta

    def names(self, feature_names=None, group_labels=None):
        if feature_names is None:
            feature_names = [f"x{k}" for k in range(self.p)]
        if group_labels is None:
            group_labels = range(self.G)
        beta = [f"beta[{f}]" for f in feature_names]
        alpha = [f"alpha[{g}]" for g in group_labels]
        return beta + alpha + ["log_sigma_alpha"]


# Hyperpriors on sigma_alpha: log density and d/d(log sigma) of it, as functions
# of (sigma, scale).
_HYPERPRIORS = {
    "half_normal": (
        lambda s, c: 0.5 * np.log(2.0 / np.pi) - np.log(c) - 0.5 * (s / c) ** 2,
        lambda s, c: -((s / c) ** 2),
    ),
    "half_cauchy": (
        lambda s, c: np.log(2.0 / (np.pi * c)) - np.log1p((s / c) ** 2),
        lambda s, c: -2.0 * s**2 / (c**2 + s**2),
    ),
    "exponential": (
        lambda s, c: -np.log(c) - s / c,
        lambda s, c: -s / c,
    ),
}


@dataclass(frozen=True)
class PriorSpec:
    """Independent normal priors on ``beta`` and a hyperprior on ``sigma_alpha``.

    ``beta_prior_sd`` is a scalar or a length-``p`` vector (a diagonal prior
    covariance). ``sigma_prior`` names the hyperprior family and
    ``sigma_prior_scale`` its scale.
    """

    beta_prior_sd: object = 10.0
    sigma_prior: str = "half_normal"
    sigma_prior_scale: float = 1.0

    def __post_init__(self):
        sd = np.asarray(self.beta_prior_sd, dtype=float)
        if not np.all(np.isfinite(sd)) or np.any(sd <= 0):
            raise ValueError("beta_prior_sd must be strictly positive")
        if self.sigma_prior not in _HYPERPRIORS:
            raise ValueError(
                f"unknown sigma_prior {self.sigma_prior!r}; "
                f"choose from {sorted(_HYPERPRIORS)}"
            )
        if not (np.isfinite(self.sigma_prior_scale) and self.sigma_prior_scale > 0):
            raise ValueError("sigma_prior_scale must be strictly positive")

    def beta_sd(self, p):
        sd = np.broadcast_to(np.asarray(self.beta_prior_sd, dtype=float), (p,))
        return sd.astype(float)

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        known = {"beta_prior_sd", "sigma_prior", "sigma_prior_scale"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown prior settings: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self):
        sd = self.beta_prior_sd
        if isinstance(sd, np.ndarray):
            sd = sd.tolist()
        return {
            "beta_prior_sd": sd,
            "sigma_prior": self.sigma_prior,
            "sigma_prior_scale": self.sigma_prior_scale,
        }


def _check_dims(theta, data):
    layout = data.layout
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != layout.K:
        raise DimensionError(
            f"theta has length {theta.shape[-1]} but data implies K = {layout.K} "
            f"(p={layout.p}, G={layout.G})"
        )
    return theta, layout


def _linear_predictor(thetas, data):
    """``n x C`` linear predictors for a ``C x K`` batch of parameter vectors."""
    layout = data.layout
    B = thetas[:, layout.beta]
    A = thetas[:, layout.alpha]
    return data.X @ B.T + A[:, data.group].T


def loglik_batch(thetas, data, weights=None):
    """Weighted Bernoulli-logit log-likelihood for each row of ``thetas``."""
    w = data.w if weights is None else weights
    eta = _linear_predictor(thetas, data)
    ll = data.y[:, None] * eta - np.logaddexp(0.0, eta)
    return w @ ll


def log_prior_batch(thetas, prior, layout):
    """Log prior density (with the log-scale Jacobian) for each row of ``thetas``."""
    sd = prior.beta_sd(layout.p)
    B = thetas[:, layout.beta]
    A = thetas[:, layout.alpha]
    u = thetas[:, layout.log_sigma]
    lp_beta = np.sum(-0.5 * (B / sd) ** 2 - np.log(sd) - _HALF_LOG_2PI, axis=1)
    with np.errstate(over="ignore"):
        inv_var = np.exp(-2.0 * u)
    lp_alpha = (
        -0.5 * inv_var * np.sum(A**2, axis=1) - layout.G * (u + _HALF_LOG_2PI)
    )
    log_density, _ = _HYPERPRIORS[prior.sigma_prior]
    lp_hyper = log_density(np.exp(u), prior.sigma_prior_scale) + u
    return lp_beta + lp_alpha + lp_hyper


def log_pseudo_posterior_batch(thetas, data, prior):
    """Unnormalized log pseudo-posterior for a ``C x K`` batch (no error checks)."""
    return loglik_batch(thetas, data) + log_prior_batch(thetas, prior, data.layout)


def log_likelihood(theta, data):
    """Weighted log-likelihood ``sum_i w_i * l_i(theta)``."""
    theta, _ = _check_dims(theta, data)
    return float(loglik_batch(theta[None, :], data)[0])


def log_prior(theta, prior, layout):
    theta = layout.check(theta)
    return float(log_prior_batch(theta[None, :], prior, layout)[0])


def log_pseudo_posterior(theta, data, prior):
    """Log survey-weighted pseudo-posterior density, up to a constant.

    Sum of each unit's Bernoulli-logit log-likelihood times its weight, plus the
    normal prior on ``beta``, the ``alpha_j | sigma_alpha`` normal density, and
    the hyperprior on ``sigma_alpha`` including the log-scale Jacobian.

    Raises:
        DimensionError: ``theta`` does not match ``(p, G)`` of ``data``.
        NonFiniteError: the likelihood or prior part is not finite.
    """
    theta, layout = _check_dims(theta, data)
    with np.errstate(over="ignore", invalid="ignore"):
        ll = loglik_batch(theta[None, :], data)[0]
        lp = log_prior_batch(theta[None, :], prior, layout)[0]
    if not np.isfinite(ll):
        raise NonFiniteError("log-likelihood is not finite", term="likelihood")
    if not np.isfinite(lp):
        raise NonFiniteError("log prior is not finite", term="prior")
    return float(ll + lp)


def unit_scores(theta, data):
    """Per-unit likelihood scores, an ``n x K`` matrix.

    Row ``i`` is the gradient of unit ``i``'s unweighted log-likelihood. The
    ``log_sigma_alpha`` column is identically zero because ``sigma_alpha`` only
    enters through the prior.
    """
    theta, layout = _check_dims(theta, data)
    eta = _linear_predictor(theta[None, :], data)[:, 0]
    resid = data.y - expit(eta)
    S = np.zeros((data.n, layout.K))
    S[:, layout.beta] = resid[:, None] * data.X
    S[np.arange(data.n), layout.p + data.group] = resid
    return S


def grad_log_likelihood(theta, data, weights=None):
    theta, layout = _check_dims(theta, data)
    w = data.w if weights is None else weights
    eta = _linear_predictor(theta[None, :], data)[:, 0]
    r = w * (data.y - expit(eta))
    g = np.zeros(layout.K)
    g[layout.beta] = data.X.T @ r
    g[layout.alpha] = np.bincount(data.group, weights=r, minlength=layout.G)
    return g


def grad_log_prior(theta, prior, layout):
    theta = layout.check(theta)
    sd = prior.beta_sd(layout.p)
    beta = theta[layout.beta]
    alpha = theta[layout.alpha]
    u = theta[layout.log_sigma]
    inv_var = np.exp(-2.0 * u)
    _, dlog_du = _HYPERPRIORS[prior.sigma_prior]
    g = np.empty(layout.K)
    g[layout.beta] = -beta / sd**2
    g[layout.alpha] = -alpha * inv_var
    g[layout.log_sigma] = (
        -layout.G
        + inv_var * np.sum(alpha**2)
        + dlog_du(np.exp(u), prior.sigma_prior_scale)
        + 1.0
    )
    return g


def grad_log_pseudo_posterior(theta, data, prior):
    """Analytic gradient of :func:`log_pseudo_posterior`.

    Equals the weighted column sum of :func:`unit_scores` plus the prior gradient.
    """
    theta, layout = _check_dims(theta, data)
    with np.errstate(over="ignore", invalid="ignore"):
        g = grad_log_likelihood(theta, data) + grad_log_prior(theta, prior, layout)
    bad = np.flatnonzero(~np.isfinite(g))
    if bad.size:
        raise NonFiniteError(
            f"gradient is not finite at coordinate(s) {bad.tolist()}",
            term=f"gradient[{bad[0]}]",
        )
    return g


def _group_sum_matrix(data):
    # Dense one-hot is faster than sparse for the small G used here.
    if data.n * data.n_groups <= 5_000_000:
        Z = np.zeros((data.n, data.n_groups))
        Z[np.arange(data.n), data.group] = 1.0
        return Z
    return data.group_indicator()


def value_and_grad_batch(thetas, data, prior, group_sum=None):
    """Log pseudo-posterior and its gradient for a ``C x K`` batch in one pass."""
    layout = data.layout
    Z = _group_sum_matrix(data) if group_sum is None else group_sum
    B = thetas[:, layout.beta]
    A = thetas[:, layout.alpha]
    u = thetas[:, layout.log_sigma]
    eta = data.X @ B.T + Z @ A.T
    y = data.y[:, None]
    # Shared exp(-|eta|) gives both softplus(eta) and expit(eta) stably.
    e = np.exp(-np.abs(eta))
    softplus = np.maximum(eta, 0.0) + np.log1p(e)
    prob = np.where(eta >= 0, 1.0, e) / (1.0 + e)
    ll = data.w @ (y * eta - softplus)
    R = data.w[:, None] * (y - prob)
    sd = prior.beta_sd(layout.p)
    inv_var = np.exp(-2.0 * u)
    sum_a2 = np.sum(A**2, axis=1)
    log_density, dlog_du = _HYPERPRIORS[prior.sigma_prior]
    sigma = np.exp(u)
    lp = (
        ll
        + np.sum(-0.5 * (B / sd) ** 2 - np.log(sd) - _HALF_LOG_2PI, axis=1)
        - 0.5 * inv_var * sum_a2
        - layout.G * (u + _HALF_LOG_2PI)
        + log_density(sigma, prior.sigma_prior_scale)
        + u
    )
    g = np.empty_like(thetas)
    g[:, layout.beta] = (data.X.T @ R).T - B / sd**2
    g[:, layout.alpha] = (Z.T @ R).T - A * inv_var[:, None]
    g[:, layout.log_sigma] = (
        -layout.G + inv_var * sum_a2 + dlog_du(sigma, prior.sigma_prior_scale) + 1.0
    )
    return lp, g


def grad_log_pseudo_posterior_batch(thetas, data, prior):
    """Gradients for a ``C x K`` batch."""
    return value_and_grad_batch(thetas, data, prior)[1]


def _fd_steps(theta, step):
    return step * (1.0 + np.abs(theta))


def hessian_fd(grad_fn, theta, step=1e-5):
    """Symmetrized central-difference Jacobian of a gradient function.

    Coordinate ``k`` is perturbed by ``step * (1 + |theta_k|)``. The result is
    the Hessian of whatever ``grad_fn`` differentiates; callers negate it to
    obtain curvature (information) matrices.

    Raises:
        ValueError: ``step`` is not positive.
        NonFiniteError: a difference quotient is not finite.
    """
    if not step > 0:
        raise ValueError("step must be positive")
    theta = np.asarray(theta, dtype=float)
    K = theta.shape[0]
    h = _fd_steps(theta, step)
    A = np.empty((K, K))
    for k in range(K):
        e = np.zeros(K)
        e[k] = h[k]
        A[:, k] = (np.asarray(grad_fn(theta + e)) - np.asarray(grad_fn(theta - e))) / (
            2.0 * h[k]
        )
        if not np.all(np.isfinite(A[:, k])):
            raise NonFiniteError(
                f"finite-difference Hessian is not finite when perturbing "
                f"coordinate {k}",
                term=f"hessian[{k}]",
            )
    return 0.5 * (A + A.T)


def prior_curvature(theta, prior, layout, step=1e-5, kind="observed"):
    """Negative Hessian of the log prior alone.

    The ``beta`` and ``alpha | sigma_alpha`` blocks are analytic; the
    hyperprior's contribution to the ``log_sigma_alpha`` diagonal is a central
    difference of its derivative, so any registered family works.

    ``kind="expected"`` replaces the ``alpha | sigma_alpha`` block by its
    expectation over ``alpha ~ N(0, sigma_alpha)``: the ``alpha``-``log_sigma``
    cross terms vanish and ``2 exp(-2u) sum(alpha^2)`` becomes ``2G``. Unlike the
    observed curvature of the hierarchical prior, which is indefinite at every
    point, the expected form is positive definite.
    """
    if kind not in ("observed", "expected"):
        raise ValueError("kind must be 'observed' or 'expected'")
    theta = layout.check(theta)
    K = layout.K
    sd = prior.beta_sd(layout.p)
    alpha = theta[layout.alpha]
    u = theta[layout.log_sigma]
    inv_var = np.exp(-2.0 * u)
    H0 = np.zeros((K, K))
    b = np.arange(layout.p)
    H0[b, b] = 1.0 / sd**2
    a = np.arange(layout.p, layout.p + layout.G)
    H0[a, a] = inv_var
    _, dlog_du = _HYPERPRIORS[prior.sigma_prior]
    scale = prior.sigma_prior_scale
    h = step * (1.0 + abs(u))
    d2_hyper = (dlog_du(np.exp(u + h), scale) - dlog_du(np.exp(u - h), scale)) / (2 * h)
    if kind == "observed":
        H0[a, layout.log_sigma] = H0[layout.log_sigma, a] = -2.0 * alpha * inv_var
        H0[layout.log_sigma, layout.log_sigma] = 2.0 * inv_var * np.sum(alpha**2) - d2_hyper
    else:
        H0[layout.log_sigma, layout.log_sigma] = 2.0 * layout.G - d2_hyper
    return H0


def find_mode(data, prior, init, free=None, max_iter=500, tol=None):
    """Maximize the log pseudo-posterior over the ``free`` coordinates.

    The joint density of a centered hierarchy is unbounded as
    ``sigma_alpha -> 0`` with ``alpha = 0``, so by default ``log_sigma_alpha``
    is held at its initial value and the conditional mode is returned. Pass a
    boolean mask as ``free`` to choose other coordinates.

    BFGS does the bulk of the work; a few Newton steps on the finite-difference
    Hessian then drive the free gradient norm below ``tol`` (default
    ``1e-6 * K``).

    Raises:
        ConvergenceError: the tolerance was not met; ``best`` holds the last
            iterate.
    """
    theta0, layout = _check_dims(init, data)
    theta0 = theta0.astype(float).copy()
    K = layout.K
    if free is None:
        free = np.ones(K, dtype=bool)
        free[layout.log_sigma] = False
    free = np.asarray(free, dtype=bool)
    if tol is None:
        tol = 1e-6 * K

    def full(x):
        t = theta0.copy()
        t[free] = x
        return t

    def neg(x):
        t = full(x)
        try:
            return -log_pseudo_posterior(t, data, prior), -grad_log_pseudo_posterior(
                t, data, prior
            )[free]
        except NonFiniteError:
            return np.inf, np.full(x.shape, np.nan)

    res = optimize.minimize(
        neg,
        theta0[free],
        jac=True,
        method="BFGS",
        options={"gtol": tol, "maxiter": max_iter},
    )
    x = res.x
    f, g = neg(x)
    for _ in range(50):
        if np.linalg.norm(g) <= tol:
            return full(x)
        H = hessian_fd(lambda z: neg(z)[1], x)
        try:
            direction = -np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            direction = -g
        if direction @ g >= 0:
            direction = -g
        t = 1.0
        while t > 1e-10:
            f_new, g_new = neg(x + t * direction)
            if f_new <= f + 1e-4 * t * (direction @ g):
                break
            t *= 0.5
        else:
            break
        x, f, g = x + t * direction, f_new, g_new
    if np.linalg.norm(g) <= tol:
        return full(x)
    raise ConvergenceError(
        f"mode search stopped with gradient norm {np.linalg.norm(g):.3g} > {tol:.3g}",
        best=full(x),
        grad_norm=float(np.linalg.norm(g)),
    )
