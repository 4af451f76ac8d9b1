"""Curvature estimates and the post-hoc sandwich adjustment of posterior draws.

Draws are row vectors. With upper-triangular square roots ``R1' R1 = H^-1 J H^-1``
and ``R2' R2 = H^-1``, each centered draw is mapped to
``(theta_m - theta_bar) @ inv(R2) @ R1 + theta_bar``, which turns a draw
covariance of ``H^-1`` into ``H^-1 J H^-1``.
"""

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .exceptions import ConditioningError, DimensionError, NonFiniteError
from .model import (
    grad_log_likelihood,
    grad_log_pseudo_posterior,
    hessian_fd,
    prior_curvature,
)
from .replication import estimate_J
from .sampler import PosteriorDraws, posterior_cov, posterior_mean

logger = logging.getLogger(__name__)

VARIANTS = ("unadjusted", "naive", "prior_curvature", "yeo_johnson")


def _as_matrix(draws):
    if isinstance(draws, PosteriorDraws):
        return draws.draws
    X = np.asarray(draws, dtype=float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise DimensionError("draws must be a non-empty M x K matrix")
    return X


@dataclass
class CurvatureSet:
    """Curvature pieces at the posterior center.

    ``H`` is the likelihood-only information (negative Hessian of the weighted
    log-likelihood), ``H0`` the prior curvature and ``J`` the replication
    estimate of the score variance. ``H_used`` and ``J_used`` are the
    matrices the chosen variant feeds into the adjustment.
    """

    variant: str
    H: np.ndarray
    H0: np.ndarray
    J: np.ndarray
    H_used: np.ndarray
    J_used: np.ndarray
    center: np.ndarray
    J_rank: int = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("H", "H0", "J", "H_used", "J_used"):
            M = np.asarray(getattr(self, name), dtype=float)
            setattr(self, name, 0.5 * (M + M.T))

    def to_dict(self):
        out = {
            "variant": self.variant,
            "center": np.asarray(self.center).tolist(),
            "J_rank": self.J_rank,
        }
        for name in ("H", "H0", "J", "H_used", "J_used"):
            out[name] = getattr(self, name).tolist()
        out.update({k: _jsonable(v) for k, v in self.extras.items()})
        return out


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer)):
        return v.item()
    return v


@dataclass
class AdjustmentResult:
    """Adjusted draws plus the matrices that produced them.

    ``design_effect`` is the per-parameter ratio of adjusted to unadjusted
    marginal variance. ``lambdas`` and ``clamp_count`` are only set by the
    Yeo-Johnson variant.
    """

    adjusted_draws: np.ndarray
    R1: np.ndarray
    R2: np.ndarray
    T: np.ndarray
    design_effect: np.ndarray
    center: np.ndarray
    curvature: CurvatureSet = None
    lambdas: np.ndarray = None
    clamp_count: int = 0

    def to_dict(self):
        out = {
            "R1": self.R1.tolist(),
            "R2": self.R2.tolist(),
            "T": self.T.tolist(),
            "design_effect": self.design_effect.tolist(),
            "center": np.asarray(self.center).tolist(),
            "clamp_count": int(self.clamp_count),
        }
        if self.lambdas is not None:
            out["lambdas"] = np.asarray(self.lambdas).tolist()
        if self.curvature is not None:
            out["curvature"] = self.curvature.to_dict()
        return out


def condition_psd(A, neg_tol=None):
    """Symmetrize and shift ``A`` so its smallest eigenvalue is ``1e-10 * trace``.

    Returns the conditioned matrix and the shift ``lam`` added to the diagonal.
    If ``neg_tol`` is given, an eigenvalue below ``-neg_tol * max|eig|`` is
    treated as a genuine failure rather than round-off.

    Raises:
        NonFiniteError: ``A`` has NaN or infinite entries.
        ConditioningError: negative trace, or an eigenvalue below the floor.
    """
    A = np.asarray(A, dtype=float)
    if not np.all(np.isfinite(A)):
        raise NonFiniteError("curvature matrix has non-finite entries", term="curvature")
    A = 0.5 * (A + A.T)
    evals = np.linalg.eigvalsh(A)
    trace = float(np.trace(A))
    if trace < 0:
        raise ConditioningError(
            f"matrix has negative trace {trace:.3g}", eigenvalues=evals
        )
    if neg_tol is not None and evals[0] < -neg_tol * np.abs(evals).max():
        raise ConditioningError(
            f"smallest eigenvalue {evals[0]:.3g} is below the tolerance floor "
            f"(-{neg_tol:g} x {np.abs(evals).max():.3g})",
            eigenvalues=evals,
        )
    lam = max(0.0, 1e-10 * trace - evals[0])
    if lam > 0:
        logger.debug("PSD conditioning added %.3g to the diagonal", lam)
    return A + lam * np.eye(A.shape[0]), lam


def sqrt_matrix(A, neg_tol=None):
    """Upper-triangular ``R`` with ``R' R`` equal to the conditioned ``A``.

    A zero matrix maps to a zero matrix.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DimensionError("sqrt_matrix needs a square matrix")
    if not np.any(A):
        return np.zeros_like(A)
    A_cond, _ = condition_psd(A, neg_tol)
    try:
        return linalg.cholesky(A_cond, lower=False)
    except linalg.LinAlgError as err:
        raise ConditioningError(
            f"Cholesky failed after conditioning: {err}",
            eigenvalues=np.linalg.eigvalsh(A_cond),
        ) from err


def _eval_rows(X, mode, n_eval):
    if mode == "at_mean":
        return X.mean(axis=0)[None, :]
    if mode == "averaged":
        idx = np.unique(np.linspace(0, X.shape[0] - 1, min(n_eval, X.shape[0])).astype(int))
        return X[idx]
    raise ValueError("mode must be 'at_mean' or 'averaged'")


def estimate_H(draws, data, prior=None, mode="at_mean", n_eval=40, step=1e-5,
               include_prior=False):
    """Negative finite-difference Hessian of the weighted log-likelihood.

    ``mode="at_mean"`` evaluates at the posterior mean; ``"averaged"`` averages
    over ``n_eval`` evenly spaced draws. With ``include_prior=True`` the full
    log pseudo-posterior is differentiated instead.
    """
    X = _as_matrix(draws)
    if include_prior:
        grad = lambda t: grad_log_pseudo_posterior(t, data, prior)  # noqa: E731
    else:
        grad = lambda t: grad_log_likelihood(t, data)  # noqa: E731
    return -np.mean([hessian_fd(grad, t, step) for t in _eval_rows(X, mode, n_eval)], axis=0)


def estimate_H0(draws, prior, layout, mode="at_mean", kind="expected", n_eval=40):
    """Prior curvature at the posterior mean or averaged over draws."""
    X = _as_matrix(draws)
    rows = _eval_rows(X, mode, n_eval)
    return np.mean([prior_curvature(t, prior, layout, kind=kind) for t in rows], axis=0)


def build_curvature(variant, draws, data, prior, design, h_source="hessian",
                    h_mode="averaged", prior_info="expected", n_eval=40):
    """Assemble the curvature set for the ``naive`` or ``prior_curvature`` variant.

    naive
        ``H_used = H + H0``, the curvature of the full log pseudo-posterior,
        and ``J_used`` the replication estimate, which carries no prior term.
    prior_curvature
        ``H_used = H + H0`` and ``J_used = J + H0``.

    ``h_mode`` chooses between the plug-in at the posterior mean and the
    average over ``n_eval`` draws, for both ``H`` and ``H0``. ``prior_info``
    selects the observed or expected curvature of the random-effect prior
    (see :func:`prior_curvature`). ``h_source="posterior_cov"`` replaces
    ``H_used`` by the inverse posterior covariance of the draws.
    ``unadjusted`` yields ``J_used = H_used``.
    """
    X = _as_matrix(draws)
    theta_bar = posterior_mean(X)
    H = estimate_H(X, data, prior, mode=h_mode, n_eval=n_eval)
    H0 = estimate_H0(X, prior, data.layout, mode=h_mode, kind=prior_info, n_eval=n_eval)
    J, rank = estimate_J(theta_bar, data, design)
    if rank < J.shape[0]:
        logger.info("J has rank %d < K = %d", rank, J.shape[0])

    if h_source == "posterior_cov":
        H_used = np.linalg.inv(condition_psd(posterior_cov(X))[0])
    elif h_source == "hessian":
        H_used = H + H0
    else:
        raise ValueError("h_source must be 'hessian' or 'posterior_cov'")

    if variant == "naive":
        J_used = J
    elif variant == "prior_curvature":
        J_used = J + H0
    elif variant == "unadjusted":
        J_used = H_used
    else:
        raise ValueError(
            f"build_curvature handles 'unadjusted', 'naive' and 'prior_curvature', "
            f"not {variant!r}"
        )
    return CurvatureSet(
        variant=variant, H=H, H0=H0, J=J, H_used=H_used, J_used=J_used,
        center=theta_bar, J_rank=rank,
        extras={"h_source": h_source, "h_mode": h_mode, "prior_info": prior_info},
    )


def adjustment_matrices(H_used, J_used, neg_tol=None):
    """Return ``(R1, R2, T)`` with ``T = inv(R2) @ R1``."""
    H_used = np.asarray(H_used, dtype=float)
    K = H_used.shape[0]
    if H_used.shape != (K, K) or np.shape(J_used) != (K, K):
        raise DimensionError("H_used and J_used must both be K x K")
    H_cond, _ = condition_psd(H_used, neg_tol)
    H_inv = np.linalg.inv(H_cond)
    H_inv = 0.5 * (H_inv + H_inv.T)
    R2 = sqrt_matrix(H_inv, neg_tol)
    R1 = sqrt_matrix(H_inv @ J_used @ H_inv, neg_tol)
    diag = np.abs(np.diag(R2))
    if diag.min() <= 1e-14 * diag.max():
        raise ConditioningError("R2 is singular", eigenvalues=np.linalg.eigvalsh(H_inv))
    T = linalg.solve_triangular(R2, R1, lower=False)
    return R1, R2, T


def apply_adjustment(draws, curv, center=None, neg_tol=None):
    """Apply the sandwich adjustment to each draw (row vector).

    Centered draws are multiplied on the right by ``T = inv(R2) @ R1`` and
    re-centered at the column means (or at ``center`` when given). The
    ``unadjusted`` variant returns the draws unchanged.
    """
    X = _as_matrix(draws)
    K = X.shape[1]
    if curv.H_used.shape != (K, K):
        raise DimensionError(
            f"curvature matrices are {curv.H_used.shape}, draws have K = {K}"
        )
    mean = X.mean(axis=0) if center is None else np.asarray(center, float)
    if curv.variant == "unadjusted":
        eye = np.eye(K)
        return AdjustmentResult(
            adjusted_draws=X.copy(), R1=eye, R2=eye, T=eye,
            design_effect=np.ones(K), center=mean, curvature=curv,
        )
    R1, R2, T = adjustment_matrices(curv.H_used, curv.J_used, neg_tol)
    adjusted = (X - mean) @ T + mean
    var_in = X.var(axis=0)
    var_out = adjusted.var(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        deff = np.where(var_in > 0, var_out / var_in, 1.0)
    return AdjustmentResult(
        adjusted_draws=adjusted, R1=R1, R2=R2, T=T, design_effect=deff,
        center=mean, curvature=curv,
    )


def adjust_draws(variant, draws, data, prior, design, **kwargs):
    """Run one adjustment variant end to end and return its result."""
    if variant == "yeo_johnson":
        from .transform import yj_adjust

        return yj_adjust(draws, data, prior, design, **kwargs)
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {VARIANTS}")
    curv = build_curvature(variant, draws, data, prior, design, **kwargs)
    return apply_adjustment(draws, curv)
