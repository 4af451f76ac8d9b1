"""MCMC for the weighted pseudo-posterior.

Chains advance in lockstep so the log-density is evaluated for all chains in one
vectorized call, but each chain has its own RNG stream (seeded from
``(seed, chain_id)``), its own step size and its own proposal covariance or
metric. Output is merged in chain order, so it is deterministic given the seed.

Two families are available. ``"dense"``, ``"diag"`` and ``"mala"`` are adaptive
Metropolis schemes (random walk or Langevin) with a Robbins-Monro scale and a
proposal covariance re-estimated over doubling warmup windows. ``"hmc"`` is
static-length Hamiltonian Monte Carlo with the same windowed dense metric and
dual-averaging step size; it is the default for the multilevel model because
random-walk proposals mix poorly in ``K ~ 20+`` dimensions.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConvergenceError, SamplerDivergence
from .model import (
    _group_sum_matrix,
    find_mode,
    grad_log_pseudo_posterior,
    hessian_fd,
    value_and_grad_batch,
)

ADAPTATION_SCHEMES = ("hmc", "dense", "diag", "mala")
PARAMETERIZATIONS = ("noncentered", "centered")


@dataclass(frozen=True)
class SamplerConfig:
    """MCMC settings.

    ``thin`` keeps every ``thin``-th post-warmup iteration; ``n_leapfrog`` is
    only used by ``"hmc"``. ``parameterization`` picks the space the chains
    move in for the multilevel model: ``"noncentered"`` samples
    ``z = alpha / sigma_alpha`` and maps draws back, ``"centered"`` samples
    ``alpha`` directly. Draws are always reported in the centered packing.
    """

    n_chains: int = 4
    n_warmup: int = 1000
    n_keep: int = 1000
    seed: int = 0
    target_accept: float = None
    adaptation: str = "hmc"
    thin: int = 1
    n_leapfrog: int = 10
    parameterization: str = "noncentered"

    def __post_init__(self):
        if self.n_chains < 1:
            raise ValueError("n_chains must be at least 1")
        if self.n_warmup < 100:
            raise ValueError("n_warmup must be at least 100")
        if self.n_keep < 100:
            raise ValueError("n_keep must be at least 100")
        if self.thin < 1:
            raise ValueError("thin must be at least 1")
        if self.n_leapfrog < 1:
            raise ValueError("n_leapfrog must be at least 1")
        if self.adaptation not in ADAPTATION_SCHEMES:
            raise ValueError(f"adaptation must be one of {ADAPTATION_SCHEMES}")
        if self.parameterization not in PARAMETERIZATIONS:
            raise ValueError(f"parameterization must be one of {PARAMETERIZATIONS}")
        if self.target_accept is not None and not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")

    @property
    def accept_target(self):
        if self.target_accept is not None:
            return self.target_accept
        return {"hmc": 0.8, "mala": 0.574}.get(self.adaptation, 0.234)

    def to_dict(self):
        return {
            "n_chains": self.n_chains,
            "n_warmup": self.n_warmup,
            "n_keep": self.n_keep,
            "seed": self.seed,
            "target_accept": self.accept_target,
            "adaptation": self.adaptation,
            "thin": self.thin,
            "n_leapfrog": self.n_leapfrog,
            "parameterization": self.parameterization,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d or {})
        if d.get("target_accept") is None:
            d.pop("target_accept", None)
        return cls(**d)


@dataclass
class PosteriorDraws:
    """Post-warmup draws, one row per kept iteration, chains stacked in order."""

    draws: np.ndarray
    lp: np.ndarray
    param_names: list
    chain_id: np.ndarray
    rhat: np.ndarray = None
    accept_rate: np.ndarray = None
    warnings: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.draws = np.asarray(self.draws, dtype=float)
        self.lp = np.asarray(self.lp, dtype=float)
        self.chain_id = np.asarray(self.chain_id, dtype=np.int64)
        if self.draws.ndim != 2:
            raise ValueError("draws must be a 2-d array")
        M, K = self.draws.shape
        if self.lp.shape != (M,) or self.chain_id.shape != (M,):
            raise ValueError("lp and chain_id must have one entry per draw")
        if len(self.param_names) != K:
            raise ValueError("param_names must have one entry per column")
        if not np.all(np.isfinite(self.draws)):
            raise ValueError("draws contain non-finite values")
        self.param_names = list(self.param_names)

    @property
    def M(self):
        return self.draws.shape[0]

    @property
    def K(self):
        return self.draws.shape[1]

    @property
    def n_chains(self):
        return len(np.unique(self.chain_id))

    def by_chain(self):
        """``n_chains x n_per_chain x K`` array (requires equal chain lengths)."""
        chains = np.unique(self.chain_id)
        return np.stack([self.draws[self.chain_id == c] for c in chains])

    def with_draws(self, draws):
        """Same labels and chains, new draw matrix; ``lp`` becomes NaN."""
        return PosteriorDraws(
            draws=draws,
            lp=np.full(np.shape(draws)[0], np.nan),
            param_names=list(self.param_names),
            chain_id=self.chain_id.copy(),
        )


def posterior_mean(draws):
    """Column means of a draw matrix (or :class:`PosteriorDraws`)."""
    X = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ValueError("need at least one draw")
    return X.mean(axis=0)


def posterior_cov(draws):
    """Unbiased sample covariance (divisor ``M - 1``), symmetrized."""
    X = draws.draws if isinstance(draws, PosteriorDraws) else np.asarray(draws, float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two draws")
    D = X - X.mean(axis=0)
    C = D.T @ D / (X.shape[0] - 1)
    return 0.5 * (C + C.T)


def split_rhat(chains):
    """Split-chain potential scale reduction for a ``C x N x K`` array."""
    chains = np.asarray(chains, dtype=float)
    N = chains.shape[1]
    half = N // 2
    if half < 2:
        return np.full(chains.shape[2], np.nan)
    parts = np.concatenate([chains[:, :half], chains[:, N - half :]], axis=0)
    n = parts.shape[1]
    B = n * parts.mean(axis=1).var(axis=0, ddof=1)
    W = parts.var(axis=1, ddof=1).mean(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        rhat = np.sqrt(((n - 1) / n * W + B / n) / W)
    return np.where(W > 0, rhat, 1.0)


def effective_sample_size(chains):
    """Multi-chain ESS per coordinate using Geyer's initial positive sequence."""
    chains = np.asarray(chains, dtype=float)
    C, N, K = chains.shape
    out = np.empty(K)
    for k in range(K):
        x = chains[:, :, k] - chains[:, :, k].mean(axis=1, keepdims=True)
        if x.var() == 0:
            out[k] = C * N
            continue
        f = np.fft.rfft(x, n=2 * N, axis=1)
        acf = np.fft.irfft(f * np.conj(f), axis=1)[:, :N].mean(axis=0)
        acf /= acf[0]
        tau = 1.0
        for lag in range(1, N - 1, 2):
            pair = acf[lag] + acf[lag + 1]
            if pair < 0:
                break
            tau += 2.0 * pair
        out[k] = C * N / tau
    return out


def _chol_or_diag(S):
    S = 0.5 * (S + S.T)
    try:
        return np.linalg.cholesky(S)
    except np.linalg.LinAlgError:
        return np.diag(np.sqrt(np.maximum(np.diag(S), 1e-12)))


def _window_ends(W):
    """Ends of the covariance-estimation windows: 15% initial buffer, doubling
    windows, and a 10% terminal buffer left for step-size tuning only."""
    first = max(int(0.15 * W), 1)
    last = int(0.9 * W)
    ends, start, width = [], first, max(25, int(0.05 * W))
    while start + width <= last:
        nxt = start + width
        if nxt + 2 * width > last:
            nxt = last
        ends.append(nxt)
        start, width = nxt, 2 * width
    return first, ends


def _window_cov(history, K):
    n = history.shape[0]
    S = np.atleast_2d(np.cov(history.T))
    # Shrink toward a small diagonal for short windows.
    S = (n / (n + 5.0)) * S + 1e-3 * (5.0 / (n + 5.0)) * np.eye(K)
    return 0.5 * (S + S.T)


def _draws_result(keep_x, keep_lp, names, accept, diagnostics):
    C, N, K = keep_x.shape
    rhat = split_rhat(keep_x)
    result = PosteriorDraws(
        draws=keep_x.reshape(-1, K),
        lp=keep_lp.reshape(-1),
        param_names=list(names),
        chain_id=np.repeat(np.arange(C), N),
        rhat=rhat,
        accept_rate=accept,
        diagnostics=diagnostics,
    )
    bad = np.flatnonzero(rhat > 1.05)
    if bad.size:
        msg = f"split R-hat > 1.05 for {bad.size} parameter(s): " + ", ".join(
            f"{names[k]}={rhat[k]:.3f}" for k in bad[:5]
        )
        result.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
    return result


def _start(init, C):
    init = np.asarray(init, dtype=float)
    if init.ndim == 1:
        init = np.tile(init, (C, 1))
    if init.shape[0] != C:
        raise ValueError(f"init must have one row per chain ({C})")
    return init.copy()


def adaptive_metropolis(log_density, init, config, grad=None, names=None, init_cov=None):
    """Adaptive random-walk (or Langevin) Metropolis on a batched log-density.

    Args:
        log_density: maps a ``C x K`` array to ``C`` log-density values.
        init: ``K`` vector (shared start) or ``C x K`` array of starting points.
        config: :class:`SamplerConfig` with ``adaptation`` in
            ``{"dense", "diag", "mala"}``.
        grad: batched gradient, required for ``"mala"``.
        names: column labels for the output.
        init_cov: initial proposal covariance (default ``0.01 * I``).

    Proposals evaluating to ``-inf`` are rejected; a NaN raises
    :class:`SamplerDivergence`.
    """
    C = config.n_chains
    x = _start(init, C)
    K = x.shape[1]
    names = names or [f"theta[{k}]" for k in range(K)]
    mala = config.adaptation == "mala"
    if config.adaptation == "hmc":
        raise ValueError("use hmc() for adaptation='hmc'")
    if mala and grad is None:
        raise ValueError("adaptation='mala' needs a gradient function")
    rngs = [np.random.default_rng([config.seed, c]) for c in range(C)]
    target = config.accept_target
    base_scale = np.log((1.65 if mala else 2.38) / np.sqrt(K))

    if init_cov is None:
        init_cov = np.eye(K) * 0.01
    L = np.tile(_chol_or_diag(np.asarray(init_cov, float)), (C, 1, 1))
    log_scale = np.full(C, base_scale)

    lp = np.asarray(log_density(x), dtype=float)
    if not np.all(np.isfinite(lp)):
        raise SamplerDivergence(
            "log-density is not finite at the initial state", iteration=0, state=x
        )
    g = grad(x) if mala else None

    W = config.n_warmup
    window_start, ends = _window_ends(W)
    history = np.empty((W, C, K))
    n_iter = W + config.n_keep * config.thin
    keep_x = np.empty((C, config.n_keep, K))
    keep_lp = np.empty((C, config.n_keep))
    accepted = np.zeros(C)
    tail_accepted, tail_start = np.zeros(C), ends[-1] if ends else 0
    Sigma, t_adapt = None, 0

    for it in range(n_iter):
        z = np.stack([r.standard_normal(K) for r in rngs])
        log_u = np.log([r.random() for r in rngs])
        scale = np.exp(log_scale)
        step = scale[:, None] * np.einsum("ckl,cl->ck", L, z)
        if mala:
            Sigma = np.einsum("ckl,cml->ckm", L, L)
            drift = 0.5 * scale[:, None] ** 2 * np.einsum("ckl,cl->ck", Sigma, g)
            prop = x + drift + step
        else:
            prop = x + step
        with np.errstate(over="ignore", invalid="ignore"):
            lp_prop = np.asarray(log_density(prop), dtype=float)
        if np.any(np.isnan(lp_prop)):
            c = int(np.flatnonzero(np.isnan(lp_prop))[0])
            raise SamplerDivergence(
                f"log-density is NaN at iteration {it} in chain {c}",
                iteration=it,
                state=prop[c],
            )
        log_ratio = lp_prop - lp
        if mala:
            g_prop = grad(prop)
            drift_back = 0.5 * scale[:, None] ** 2 * np.einsum(
                "ckl,cl->ck", Sigma, g_prop
            )
            fwd = np.linalg.solve(L, (prop - x - drift)[..., None])[..., 0]
            bwd = np.linalg.solve(L, (x - prop - drift_back)[..., None])[..., 0]
            log_ratio = log_ratio + 0.5 * (
                np.sum(fwd**2, axis=1) - np.sum(bwd**2, axis=1)
            ) / scale**2
        acc = log_u < log_ratio
        x = np.where(acc[:, None], prop, x)
        lp = np.where(acc, lp_prop, lp)
        if mala:
            g = np.where(acc[:, None], g_prop, g)

        if it < W:
            accept_prob = np.exp(np.minimum(0.0, log_ratio))
            # Robbins-Monro gain restarts with every metric update
            t_adapt += 1
            log_scale += t_adapt**-0.6 * (accept_prob - target)
            history[it] = x
            if it >= tail_start:
                tail_accepted += acc
            if it + 1 in ends:
                for c in range(C):
                    S = _window_cov(history[window_start : it + 1, c], K)
                    if config.adaptation == "diag":
                        L[c] = np.diag(np.sqrt(np.diag(S)))
                    else:
                        L[c] = _chol_or_diag(S)
                log_scale[:] = base_scale
                window_start, t_adapt = it + 1, 0
        else:
            accepted += acc
            j = it - W
            if (j + 1) % config.thin == 0:
                keep_x[:, j // config.thin] = x
                keep_lp[:, j // config.thin] = lp

    diagnostics = {
        "warmup_accept_rate": tail_accepted / max(W - tail_start, 1),
        "step_scale": np.exp(log_scale),
    }
    return _draws_result(
        keep_x, keep_lp, names, accepted / (n_iter - W), diagnostics
    )


def hmc(value_and_grad, init, config, names=None, init_cov=None):
    """Static-length HMC with a windowed dense metric and dual-averaging step size.

    Args:
        value_and_grad: maps a ``C x K`` array to ``(lp, grad)`` with shapes
            ``(C,)`` and ``(C, K)``.
        init, names, init_cov: as in :func:`adaptive_metropolis`.

    Trajectories whose energy is not finite are rejected and counted as
    divergent in ``diagnostics["divergences"]``.
    """
    C = config.n_chains
    x = _start(init, C)
    K = x.shape[1]
    names = names or [f"theta[{k}]" for k in range(K)]
    rngs = [np.random.default_rng([config.seed, c]) for c in range(C)]
    target = config.accept_target
    n_leap = config.n_leapfrog

    if init_cov is None:
        init_cov = np.eye(K) * 0.01
    inv_metric = np.tile(0.5 * (init_cov + init_cov.T), (C, 1, 1))
    chol_metric = np.stack([_chol_or_diag(np.linalg.inv(S)) for S in inv_metric])

    lp, g = value_and_grad(x)
    if not np.all(np.isfinite(lp)):
        raise SamplerDivergence(
            "log-density is not finite at the initial state", iteration=0, state=x
        )

    # Dual averaging state (Hoffman & Gelman style constants).
    eps = np.full(C, 0.5 / np.sqrt(K))
    mu, h_bar, log_eps_bar, t_adapt = np.log(10 * eps), np.zeros(C), np.zeros(C), 0

    W = config.n_warmup
    window_start, ends = _window_ends(W)
    history = np.empty((W, C, K))
    n_iter = W + config.n_keep * config.thin
    keep_x = np.empty((C, config.n_keep, K))
    keep_lp = np.empty((C, config.n_keep))
    accepted = np.zeros(C)
    divergences = np.zeros(C, dtype=int)
    tail_accepted, tail_start = np.zeros(C), ends[-1] if ends else 0

    def kinetic(p):
        return 0.5 * np.einsum("ck,ckl,cl->c", p, inv_metric, p)

    for it in range(n_iter):
        z = np.stack([r.standard_normal(K) for r in rngs])
        log_u = np.log([r.random() for r in rngs])
        jitter = np.array([r.uniform(0.8, 1.2) for r in rngs])
        step = (eps if it < W else np.exp(log_eps_bar)) * jitter

        p = np.einsum("ckl,cl->ck", chol_metric, z)
        h0 = -lp + kinetic(p)
        q = x.copy()
        with np.errstate(all="ignore"):
            p_half = p + 0.5 * step[:, None] * g
            for leap in range(n_leap):
                q = q + step[:, None] * np.einsum("ckl,cl->ck", inv_metric, p_half)
                lq, gq = value_and_grad(q)
                if leap < n_leap - 1:
                    p_half = p_half + step[:, None] * gq
            p_end = p_half + 0.5 * step[:, None] * gq
            h1 = -lq + kinetic(p_end)
        log_ratio = h0 - h1
        divergent = ~np.isfinite(log_ratio)
        log_ratio = np.where(divergent, -np.inf, log_ratio)
        acc = log_u < log_ratio
        x = np.where(acc[:, None], q, x)
        lp = np.where(acc, lq, lp)
        g = np.where(acc[:, None], gq, g)

        if it < W:
            t_adapt += 1
            accept_prob = np.exp(np.minimum(0.0, log_ratio))
            eta = 1.0 / (t_adapt + 10)
            h_bar = (1 - eta) * h_bar + eta * (target - accept_prob)
            log_eps = mu - np.sqrt(t_adapt) / 0.05 * h_bar
            eps = np.exp(log_eps)
            kappa = t_adapt**-0.75
            log_eps_bar = kappa * log_eps + (1 - kappa) * log_eps_bar
            history[it] = x
            if it >= tail_start:
                tail_accepted += accept_prob
            if it + 1 in ends:
                for c in range(C):
                    S = _window_cov(history[window_start : it + 1, c], K)
                    inv_metric[c] = S
                    chol_metric[c] = _chol_or_diag(np.linalg.inv(S))
                window_start = it + 1
                mu = np.log(10 * eps)
                h_bar[:], log_eps_bar[:], t_adapt = 0.0, 0.0, 0
        else:
            accepted += acc
            divergences += divergent
            j = it - W
            if (j + 1) % config.thin == 0:
                keep_x[:, j // config.thin] = x
                keep_lp[:, j // config.thin] = lp

    diagnostics = {
        "warmup_accept_rate": tail_accepted / max(W - tail_start, 1),
        "step_size": np.exp(log_eps_bar),
        "divergences": divergences,
    }
    result = _draws_result(keep_x, keep_lp, names, accepted / (n_iter - W), diagnostics)
    n_div = int(divergences.sum())
    if n_div > 0.01 * (n_iter - W) * C:
        msg = f"{n_div} divergent transitions after warmup"
        result.warnings.append(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    return result


def run_chains(value_and_grad, init, config, names=None, init_cov=None):
    """Dispatch on ``config.adaptation`` for a combined value-and-gradient target."""
    if config.adaptation == "hmc":
        return hmc(value_and_grad, init, config, names=names, init_cov=init_cov)
    return adaptive_metropolis(
        lambda t: value_and_grad(t)[0],
        init,
        config,
        grad=lambda t: value_and_grad(t)[1],
        names=names,
        init_cov=init_cov,
    )


def laplace_start(data, prior, log_sigma=np.log(0.5)):
    """Conditional mode (``sigma_alpha`` held fixed) and a Laplace covariance.

    Negative curvature directions are floored so the covariance is always
    positive definite; it only seeds the warmup.
    """
    layout = data.layout
    init = np.zeros(layout.K)
    init[layout.log_sigma] = log_sigma
    try:
        mode = find_mode(data, prior, init)
    except ConvergenceError as err:
        mode = err.best
    H = -hessian_fd(lambda t: grad_log_pseudo_posterior(t, data, prior), mode)
    evals, evecs = np.linalg.eigh(H)
    floor = 1e-3 * max(evals.max(), 1.0)
    cov = (evecs / np.maximum(evals, floor)) @ evecs.T
    return mode, cov


class _NonCentered:
    """Map between centered ``(beta, alpha, u)`` and ``(beta, z, u)`` with
    ``alpha = exp(u) * z``; the target picks up the Jacobian ``exp(G * u)``."""

    def __init__(self, layout):
        self.layout = layout

    def to_centered(self, t):
        t = np.array(t, dtype=float, copy=True)
        L = self.layout
        t[..., L.alpha] *= np.exp(t[..., [L.log_sigma]])
        return t

    def from_centered(self, t):
        t = np.array(t, dtype=float, copy=True)
        L = self.layout
        t[..., L.alpha] *= np.exp(-t[..., [L.log_sigma]])
        return t

    def wrap(self, value_and_grad):
        L = self.layout

        def vg(z):
            c = self.to_centered(z)
            lp, g = value_and_grad(c)
            sigma = np.exp(z[:, L.log_sigma])
            gz = g.copy()
            gz[:, L.alpha] = g[:, L.alpha] * sigma[:, None]
            gz[:, L.log_sigma] = (
                g[:, L.log_sigma] + np.sum(g[:, L.alpha] * c[:, L.alpha], axis=1) + L.G
            )
            return lp + L.G * z[:, L.log_sigma], gz

        return vg

    def cov_to_space(self, cov, at):
        """Push a centered-space covariance through the Jacobian at ``at``."""
        L = self.layout
        J = np.eye(L.K)
        s = np.exp(at[L.log_sigma])
        J[L.alpha, L.alpha] = np.eye(L.G) / s
        J[L.alpha, L.log_sigma] = -at[L.alpha] / s
        return J @ cov @ J.T


def sample_pseudo_posterior(data, prior, config, init=None):
    """Draw from the survey-weighted pseudo-posterior of ``data``.

    Chains start from a Laplace approximation at the conditional mode (with
    ``sigma_alpha = 0.5``), jittered per chain, whose covariance also seeds the
    proposal. Draws are returned in the centered ``(beta, alpha, log_sigma)``
    packing whatever space the chains moved in. Deterministic given
    ``config.seed``.

    Raises:
        SamplerDivergence: the log-density is not finite at the start, or a
            Metropolis proposal evaluates to NaN.
    """
    layout = data.layout
    Z = _group_sum_matrix(data)

    def vg(t):
        return value_and_grad_batch(t, data, prior, Z)

    mode, cov = laplace_start(data, prior)
    # sigma_alpha is held fixed in the conditional mode, so its Laplace variance
    # is meaningless; cap it before it seeds the metric or the start jitter.
    u = layout.log_sigma
    if cov[u, u] > 0.25:
        shrink = np.ones(layout.K)
        shrink[u] = 0.5 / np.sqrt(cov[u, u])
        cov = cov * np.outer(shrink, shrink)
    if init is None:
        jitter_rng = np.random.default_rng([config.seed, 2**31 - 1])
        chol = _chol_or_diag(cov)
        jitter = 0.5 * jitter_rng.standard_normal((config.n_chains, layout.K)) @ chol.T
        init = mode + np.clip(jitter, -1.0, 1.0)
    init = _start(init, config.n_chains)

    if config.parameterization == "noncentered":
        nc = _NonCentered(layout)
        result = run_chains(
            nc.wrap(vg),
            nc.from_centered(init),
            config,
            names=data.param_names(),
            init_cov=nc.cov_to_space(cov, mode),
        )
        result.draws = nc.to_centered(result.draws)
        result.rhat = split_rhat(result.by_chain())
        result.lp = np.asarray(vg(result.draws)[0])
        return result
    return run_chains(vg, init, config, names=data.param_names(), init_cov=cov)
