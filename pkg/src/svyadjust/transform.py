"""Yeo-Johnson transforms and the transformed-space sandwich adjustment.

Each parameter's draws get their own exponent ``lambda``. The adjustment runs in
the transformed space with the information taken from the posterior covariance
there, the replication score variance (plus prior curvature) pushed through the
chain rule, and the adjusted draws mapped back.
"""

import hashlib
from dataclasses import dataclass

import numpy as np

from .exceptions import DataError, DomainError, NonFiniteError
from .model import prior_curvature
from .replication import estimate_J
from .sampler import PosteriorDraws, posterior_cov
from .sandwich import AdjustmentResult, CurvatureSet, apply_adjustment, condition_psd

_EPS = 1e-12
LAMBDA_BOUNDS = (-3.0, 5.0)


def yj_forward(lam, x):
    """Yeo-Johnson transform ``psi(lam, x)``; broadcasts over arrays."""
    lam = np.asarray(lam, dtype=float)
    x = np.asarray(x, dtype=float)
    lam, x = np.broadcast_arrays(lam, x)
    mu = 2.0 - lam
    pos = x >= 0
    with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
        lp = np.log1p(np.where(pos, x, 0.0))
        ln = np.log1p(np.where(pos, 0.0, -x))
        safe_lam = np.where(np.abs(lam) > _EPS, lam, 1.0)
        safe_mu = np.where(np.abs(mu) > _EPS, mu, 1.0)
        out_pos = np.where(np.abs(lam) > _EPS, np.expm1(lam * lp) / safe_lam, lp)
        out_neg = np.where(np.abs(mu) > _EPS, -np.expm1(mu * ln) / safe_mu, -ln)
        out = np.where(pos, out_pos, out_neg)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("Yeo-Johnson transform overflowed", term="yj_forward")
    return out[()] if out.ndim == 0 else out


def yj_range(lam):
    """Open interval ``(lo, hi)`` of values taken by ``psi(lam, .)``."""
    lo = 1.0 / (2.0 - lam) if lam > 2.0 + _EPS else -np.inf
    hi = -1.0 / lam if lam < -_EPS else np.inf
    return lo, hi


def yj_inverse(lam, eta):
    """Inverse transform; raises :class:`DomainError` outside the range."""
    lam = np.asarray(lam, dtype=float)
    eta = np.asarray(eta, dtype=float)
    lam, eta = np.broadcast_arrays(lam, eta)
    mu = 2.0 - lam
    pos = eta >= 0
    # 1 + lam*eta (positive branch) and 1 - mu*eta (negative branch) must be > 0.
    t_pos = np.where(pos, lam * eta, 0.0)
    t_neg = np.where(pos, 0.0, -mu * eta)
    if np.any(t_pos <= -1.0) or np.any(t_neg <= -1.0):
        raise DomainError("eta lies outside the range of the Yeo-Johnson transform")
    with np.errstate(over="ignore"):
        safe_lam = np.where(np.abs(lam) > _EPS, lam, 1.0)
        safe_mu = np.where(np.abs(mu) > _EPS, mu, 1.0)
        x_pos = np.where(
            np.abs(lam) > _EPS, np.expm1(np.log1p(t_pos) / safe_lam), np.expm1(eta * pos)
        )
        x_neg = np.where(
            np.abs(mu) > _EPS,
            -np.expm1(np.log1p(t_neg) / safe_mu),
            -np.expm1(-eta * ~pos),
        )
        out = np.where(pos, x_pos, x_neg)
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("Yeo-Johnson inverse overflowed", term="yj_inverse")
    return out[()] if out.ndim == 0 else out


def yj_inverse_deriv(lam, eta, rel_step=1e-6):
    """Central-difference derivative of :func:`yj_inverse` in ``eta``.

    The step is ``rel_step * (1 + |eta|)``; both evaluation points must lie
    inside the transform's range.
    """
    eta = np.asarray(eta, dtype=float)
    h = rel_step * (1.0 + np.abs(eta))
    lo, hi = yj_range(float(lam))
    if np.any(eta - h <= lo) or np.any(eta + h >= hi):
        raise DomainError("eta is too close to the boundary of the transform's range")
    return (yj_inverse(lam, eta + h) - yj_inverse(lam, eta - h)) / (2.0 * h)


def yj_profile_loglik(lam, x):
    """Normal profile log-likelihood of ``psi(lam, x)`` (up to a constant)."""
    x = np.asarray(x, dtype=float)
    try:
        z = yj_forward(lam, x)
    except NonFiniteError:
        return -np.inf
    var = z.var()
    if not var > 0:
        return -np.inf
    return -0.5 * x.size * np.log(var) + (lam - 1.0) * np.sum(
        np.sign(x) * np.log1p(np.abs(x))
    )


def _golden_max(f, a, b, tol):
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def fit_lambda(column, bounds=LAMBDA_BOUNDS, tol=1e-4):
    """Exponent maximizing the normal profile likelihood, by golden section.

    Raises:
        DataError: fewer than 50 values, or a constant column.
    """
    x = np.asarray(column, dtype=float).ravel()
    if x.size < 50:
        raise DataError("need at least 50 values to fit a Yeo-Johnson exponent")
    if np.ptp(x) == 0:
        raise DataError("cannot fit a Yeo-Johnson exponent to a constant column")
    return float(_golden_max(lambda lam: yj_profile_loglik(lam, x), *bounds, tol))


def build_G(eta_bar, lambdas, scale=1.0):
    """Chain-rule matrix ``d d'`` with ``d_k = scale_k * d psi^-1 / d eta`` at ``eta_bar``."""
    eta_bar = np.asarray(eta_bar, dtype=float)
    lambdas = np.broadcast_to(np.asarray(lambdas, dtype=float), eta_bar.shape)
    scale = np.broadcast_to(np.asarray(scale, dtype=float), eta_bar.shape)
    d = scale * np.array([yj_inverse_deriv(l, e) for l, e in zip(lambdas, eta_bar)])
    return np.outer(d, d)


@dataclass
class YJTransform:
    """Per-column exponents fitted on a draw matrix.

    Column ``k`` maps as ``eta = psi(lambda_k, (x - loc_k) / scale_k)``. With
    ``loc = 0`` and ``scale = 1`` this is the plain transform of the raw values.
    """

    lambdas: np.ndarray
    loc: np.ndarray = 0.0
    scale: np.ndarray = 1.0
    fitted_on: str = None

    @classmethod
    def fit(cls, draws, standardize=False):
        """Fit exponents, on standardized columns if ``standardize`` is set."""
        X = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
        if standardize:
            loc, scale = X.mean(axis=0), X.std(axis=0)
            if np.any(scale == 0):
                raise DataError("cannot fit a Yeo-Johnson exponent to a constant column")
        else:
            loc, scale = np.zeros(X.shape[1]), np.ones(X.shape[1])
        Z = (X - loc) / scale
        lambdas = np.array([fit_lambda(Z[:, k]) for k in range(X.shape[1])])
        return cls(lambdas=lambdas, loc=loc, scale=scale, fitted_on=_fingerprint(X))

    def forward(self, X):
        return yj_forward(self.lambdas, (np.asarray(X, float) - self.loc) / self.scale)

    def inverse(self, E):
        return self.loc + self.scale * yj_inverse(self.lambdas, E)

    def G(self, eta_bar):
        return build_G(eta_bar, self.lambdas, self.scale)

    def clamp(self, E, margin=1e-8):
        """Clip each column into its open range; returns ``(E, n_clamped)``."""
        E = np.array(E, dtype=float, copy=True)
        count = 0
        for k, lam in enumerate(self.lambdas):
            lo, hi = yj_range(lam)
            col = E[:, k]
            # Keep clear of the floating-point edge where 1 + lam*eta rounds to 0.
            lo_c = lo + margin * max(1.0, abs(lo)) if np.isfinite(lo) else lo
            hi_c = hi - margin * max(1.0, abs(hi)) if np.isfinite(hi) else hi
            out = (col <= lo_c) | (col >= hi_c)
            count += int(out.sum())
            E[:, k] = np.clip(col, lo_c, hi_c)
        return E, count


def _fingerprint(X):
    return hashlib.sha1(np.ascontiguousarray(X).tobytes()).hexdigest()[:16]


def yj_adjust(draws, data, prior, design, lambdas=None, prior_space="theta",
              prior_info="expected", standardize=True, force_identity=False):
    """Yeo-Johnson variant of the sandwich adjustment.

    1. Fit one exponent per column (or use ``lambdas``) and transform the draws.
    2. ``H_eta`` is the inverse posterior covariance of the transformed draws.
    3. ``J`` is estimated in the original space at ``psi^-1(eta_bar)``, the prior
       curvature is added, and the sum is mapped to the transformed space by
       element-wise multiplication with ``G(eta_bar)``. With
       ``prior_space="eta"`` the prior curvature is added after the mapping.
    4. The draws are adjusted in the transformed space and mapped back;
       values outside the inverse's domain are clamped and counted.

    ``prior_info`` selects the observed or expected prior curvature.
    ``standardize`` centers and scales each column before the transform, which
    makes the fitted exponents independent of where a parameter sits; fitted on
    raw values, a column far from zero can land next to a finite end of the
    transform's range and the back-transform then explodes.
    ``force_identity`` skips the adjustment (T = I), leaving only the round trip.
    """
    X = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
    if lambdas is None:
        yj = YJTransform.fit(X, standardize=standardize)
    else:
        yj = YJTransform(np.broadcast_to(np.asarray(lambdas, float), (X.shape[1],)).copy())
        if standardize:
            yj.loc, yj.scale = X.mean(axis=0), X.std(axis=0)
    E = yj.forward(X)
    eta_bar = E.mean(axis=0)
    theta_bar = yj.inverse(eta_bar)

    H_eta = np.linalg.inv(condition_psd(posterior_cov(E))[0])
    J, rank = estimate_J(theta_bar, data, design)
    H0 = prior_curvature(theta_bar, prior, data.layout, kind=prior_info)
    G = yj.G(eta_bar)
    if prior_space == "theta":
        J_eta = (J + H0) * G
    elif prior_space == "eta":
        J_eta = J * G + H0
    else:
        raise ValueError("prior_space must be 'theta' or 'eta'")
    if force_identity:
        J_eta = H_eta
    curv = CurvatureSet(
        variant="yeo_johnson", H=H_eta, H0=H0, J=J, H_used=H_eta, J_used=J_eta,
        center=theta_bar, J_rank=rank,
        extras={"lambdas": yj.lambdas, "G": G, "eta_bar": eta_bar,
                "prior_space": prior_space, "prior_info": prior_info,
                "loc": yj.loc, "scale": yj.scale},
    )
    if force_identity:
        E_adj = E.copy()
        T = R1 = R2 = np.eye(X.shape[1])
    else:
        res = apply_adjustment(E, curv, center=eta_bar)
        E_adj, T, R1, R2 = res.adjusted_draws, res.T, res.R1, res.R2
    E_adj, n_clamped = yj.clamp(E_adj)
    adjusted = yj.inverse(E_adj)
    var_in = X.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        deff = np.where(var_in > 0, adjusted.var(axis=0) / var_in, 1.0)
    return AdjustmentResult(
        adjusted_draws=adjusted, R1=R1, R2=R2, T=T, design_effect=deff,
        center=theta_bar, curvature=curv, lambdas=yj.lambdas, clamp_count=n_clamped,
    )
