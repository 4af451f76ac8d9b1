"""Coverage studies under simple random and PPS sampling.

A finite population of grouped binary outcomes is generated once per study;
each replication draws a sample, fits the weighted pseudo-posterior, applies the
adjustment variants and records whether each 95% interval covers the truth.
"""

import csv
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.special import expit

from .model import PriorSpec, SurveyDataset
from .replication import make_design
from .sampler import SamplerConfig, sample_pseudo_posterior
from .sandwich import VARIANTS, adjust_draws

logger = logging.getLogger(__name__)

PARAM_CLASSES = ("fixed", "random", "sigma_alpha")


def geometric_group_sizes(N, G, largest=2000, smallest=100):
    """Group sizes decaying geometrically from ``largest`` to ``smallest``,
    rescaled (largest-remainder rounding) to sum to exactly ``N``."""
    raw = np.geomspace(largest, smallest, G)
    share = raw / raw.sum() * N
    sizes = np.floor(share).astype(np.int64)
    short = N - sizes.sum()
    sizes[np.argsort(share - sizes)[::-1][:short]] += 1
    return sizes


@dataclass(frozen=True)
class PopulationSpec:
    N: int = 100_000
    G: int = 20
    group_sizes: tuple = None
    beta0: float = -2.0
    beta1: float = 1.0
    sigma_alpha_sq: float = 0.25
    seed: int = 0

    def sizes(self):
        if self.group_sizes is not None:
            sizes = np.asarray(self.group_sizes, dtype=np.int64)
        else:
            sizes = geometric_group_sizes(self.N, self.G)
        if sizes.shape != (self.G,) or sizes.sum() != self.N or np.any(sizes <= 0):
            raise ValueError("group sizes must be positive and sum to N")
        return sizes

    @property
    def sigma_alpha(self):
        return float(np.sqrt(self.sigma_alpha_sq))


@dataclass
class Population:
    spec: PopulationSpec
    x: np.ndarray
    y: np.ndarray
    group: np.ndarray
    alpha: np.ndarray
    mu: np.ndarray

    @property
    def N(self):
        return self.x.shape[0]

    def truth(self):
        """True values in the packed order ``(beta0, beta1, alpha_1..G, sigma)``."""
        return np.concatenate(
            [[self.spec.beta0, self.spec.beta1], self.alpha, [self.spec.sigma_alpha]]
        )


def generate_population(spec):
    """Draw group effects, covariates and outcomes for the whole population."""
    rng = np.random.default_rng(spec.seed)
    sizes = spec.sizes()
    group = np.repeat(np.arange(spec.G), sizes)
    alpha = rng.normal(0.0, spec.sigma_alpha, spec.G)
    x = rng.standard_normal(spec.N)
    mu = spec.beta0 + spec.beta1 * x + alpha[group]
    y = (rng.random(spec.N) < expit(mu)).astype(float)
    return Population(spec=spec, x=x, y=y, group=group, alpha=alpha, mu=mu)


def _to_dataset(pop, idx, w, n_clusters, cluster_size):
    n = idx.size
    psu = np.arange(n) // cluster_size
    data = SurveyDataset.from_arrays(
        pop.y[idx],
        np.column_stack([np.ones(n), pop.x[idx]]),
        pop.group[idx],
        w,
        psu=psu,
        n_groups=pop.spec.G,
        feature_names=("intercept", "x"),
    )
    data.extras["unit_ids"] = idx
    return data


def draw_srs_sample(pop, n_clusters=100, cluster_size=10, seed=0):
    """Simple random sample without replacement, split at random into
    ``n_clusters`` PSU labels of ``cluster_size`` units; weights ``N / n``."""
    n = n_clusters * cluster_size
    if n > pop.N:
        raise ValueError("sample larger than the population")
    rng = np.random.default_rng(seed)
    idx = rng.choice(pop.N, n, replace=False)
    return _to_dataset(pop, idx, np.full(n, pop.N / n), n_clusters, cluster_size)


def pps_size_measure(pop):
    """``max(0.1, (mu - min mu) + 5 * alpha_group)`` for every unit."""
    return np.maximum(0.1, (pop.mu - pop.mu.min()) + 5.0 * pop.alpha[pop.group])


def inclusion_probabilities(size, n):
    """``n * s / sum(s)`` with iterative capping at 1 so the total stays ``n``.

    Returns the probabilities and the number of certainty units.
    """
    size = np.asarray(size, dtype=float)
    pi = n * size / size.sum()
    certain = np.zeros(size.shape, dtype=bool)
    while np.any(pi[~certain] >= 1.0):
        certain |= pi >= 1.0
        rest = ~certain
        pi[certain] = 1.0
        pi[rest] = (n - certain.sum()) * size[rest] / size[rest].sum()
    return pi, int(certain.sum())


def systematic_pps(pi, rng):
    """Systematic PPS selection over a random ordering of units."""
    order = rng.permutation(pi.size)
    cum = np.cumsum(pi[order])
    n = int(round(cum[-1]))
    points = rng.random() + np.arange(n)
    pos = np.minimum(np.searchsorted(cum, points, side="right"), pi.size - 1)
    return order[pos]


def draw_pps_sample(pop, n_clusters=100, cluster_size=10, seed=0):
    """PPS sample on :func:`pps_size_measure`; weights ``1 / pi`` scaled to sum to n.

    Units are grouped into PSUs of ``cluster_size`` in selection order.
    """
    n = n_clusters * cluster_size
    rng = np.random.default_rng(seed)
    pi, n_certain = inclusion_probabilities(pps_size_measure(pop), n)
    if n_certain > 0.05 * n:
        warnings.warn(
            f"{n_certain} units have inclusion probability 1", RuntimeWarning, stacklevel=2
        )
    idx = systematic_pps(pi, rng)
    w = 1.0 / pi[idx]
    data = _to_dataset(pop, idx, w * n / w.sum(), n_clusters, cluster_size)
    data.extras["pi"] = pi[idx]
    data.extras["n_certain"] = n_certain
    return data


@dataclass(frozen=True)
class StudyConfig:
    """Everything that defines a coverage study, including its master seed."""

    design: str = "srs"
    n_reps: int = 100
    variants: tuple = VARIANTS
    population: PopulationSpec = PopulationSpec()
    sampler: SamplerConfig = SamplerConfig(n_warmup=500, n_keep=500)
    prior: PriorSpec = PriorSpec()
    replication: str = "delete_a_group_jackknife"
    n_replicates: int = 100
    n_clusters: int = 100
    cluster_size: int = 10
    seed: int = 0
    regenerate_population: bool = False
    n_jobs: int = 1

    def to_dict(self):
        d = asdict(self)
        d["variants"] = list(self.variants)
        d["sampler"] = self.sampler.to_dict()
        d["prior"] = self.prior.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "population" in d:
            d["population"] = PopulationSpec(**d["population"])
        if "sampler" in d:
            d["sampler"] = SamplerConfig.from_dict(d["sampler"])
        if "prior" in d:
            d["prior"] = PriorSpec.from_dict(d["prior"])
        if "variants" in d:
            d["variants"] = tuple(d["variants"])
        return cls(**d)


def _rep_seed(master, rep, stream):
    return int(np.random.SeedSequence([master, rep, stream]).generate_state(1)[0])


def equal_tailed_intervals(draws, level=0.95):
    """Per-column equal-tailed interval bounds, shape ``(K, 2)``."""
    a = (1.0 - level) / 2.0
    return np.quantile(draws, [a, 1.0 - a], axis=0).T


def score_intervals(draws, truth, layout):
    """Coverage indicators and lengths on the natural scale of each parameter.

    ``log_sigma_alpha`` draws are exponentiated first, so the last entry
    refers to ``sigma_alpha``.
    """
    natural = np.array(draws, dtype=float, copy=True)
    natural[:, layout.log_sigma] = np.exp(natural[:, layout.log_sigma])
    bounds = equal_tailed_intervals(natural)
    covered = (bounds[:, 0] <= truth) & (truth <= bounds[:, 1])
    return covered, bounds[:, 1] - bounds[:, 0]


def _replication(rep, cfg, pop):
    if cfg.regenerate_population:
        pop = generate_population(replace(cfg.population, seed=_rep_seed(cfg.seed, rep, 0)))
    draw = draw_srs_sample if cfg.design == "srs" else draw_pps_sample
    data = draw(pop, cfg.n_clusters, cfg.cluster_size, seed=_rep_seed(cfg.seed, rep, 1))
    data = data.normalized()
    sampler = replace(cfg.sampler, seed=_rep_seed(cfg.seed, rep, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        draws = sample_pseudo_posterior(data, cfg.prior, sampler)
    design = make_design(
        data, cfg.replication, R=cfg.n_replicates, seed=_rep_seed(cfg.seed, rep, 3)
    )
    truth = pop.truth()
    out = {"rep": rep, "max_rhat": float(np.nanmax(draws.rhat))}
    for variant in cfg.variants:
        res = adjust_draws(variant, draws.draws, data, cfg.prior, design)
        covered, length = score_intervals(res.adjusted_draws, truth, data.layout)
        out[variant] = {"covered": covered, "length": length, "clamped": res.clamp_count}
    return out


def _safe_replication(args):
    rep, cfg, pop = args
    try:
        return _replication(rep, cfg, pop)
    except Exception as err:  # noqa: BLE001 - failures are counted, not fatal
        logger.warning("replication %d failed: %s", rep, err)
        return {"rep": rep, "error": f"{type(err).__name__}: {err}"}


@dataclass
class CoverageReport:
    """Interval length and coverage (%) per variant and parameter class.

    ``length`` is the mean over replications of the per-replication average
    length; ``median_length`` is the median of the same quantity, which is
    robust to the rare replication where a back-transform is clamped.
    """

    rows: list
    n_reps: int
    n_failed: int
    config: dict = field(default_factory=dict)
    raw: list = field(default_factory=list)

    def cell(self, variant, param_class):
        for row in self.rows:
            if row["variant"] == variant and row["param_class"] == param_class:
                return row
        raise KeyError((variant, param_class))

    def coverage(self, variant, param_class):
        return self.cell(variant, param_class)["coverage"]

    def length(self, variant, param_class):
        return self.cell(variant, param_class)["length"]

    def to_csv(self, path):
        fields = ["variant", "param_class", "length", "length_se", "median_length",
                  "coverage", "coverage_se", "n_reps", "reps_clamped"]
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=fields)
            writer.writeheader()
            for row in self.rows:
                writer.writerow({k: row[k] for k in fields})

    def raw_to_csv(self, path):
        """One row per replication x variant x parameter for audit."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["rep", "variant", "param", "covered", "length"])
            for rec in self.raw:
                if "error" in rec:
                    continue
                for variant in self.config.get("variants", []):
                    r = rec[variant]
                    for k, (c, l) in enumerate(zip(r["covered"], r["length"])):
                        writer.writerow([rec["rep"], variant, k, int(c), repr(float(l))])

    def to_table(self):
        """Plain-text table: mean and median interval length and coverage %."""
        block = f"{'Fixed':>8}{'Random':>8}{'sigma':>8} |"
        head = f"{'Adjustment':<16}|" + block * 3
        lines = [
            f"{'':<16}|{'Mean length':^25}|{'Median length':^25}|{'Coverage %':^25}|",
            head,
            "-" * len(head),
        ]
        variants = []
        for row in self.rows:
            if row["variant"] not in variants:
                variants.append(row["variant"])
        for v in variants:
            cells = [self.cell(v, c) for c in PARAM_CLASSES]
            lines.append(
                f"{v:<16}|"
                + "".join(_num(c["length"]) for c in cells) + " |"
                + "".join(_num(c["median_length"]) for c in cells) + " |"
                + "".join(f"{c['coverage']:8.1f}" for c in cells) + " |"
            )
        lines.append(f"({self.n_reps} replications, {self.n_failed} failed)")
        return "\n".join(lines)


def _num(x):
    return f"{x:8.3f}" if abs(x) < 1e4 else f"{x:8.1e}"


def summarize(records, variants, layout, config=None):
    """Aggregate per-replication records into a :class:`CoverageReport`."""
    ok = [r for r in records if "error" not in r]
    classes = {
        "fixed": np.arange(layout.p),
        "random": np.arange(layout.p, layout.p + layout.G),
        "sigma_alpha": np.array([layout.log_sigma]),
    }
    rows = []
    for v in variants:
        for name, idx in classes.items():
            cov = np.array([r[v]["covered"][idx].mean() for r in ok]) * 100.0
            length = np.array([r[v]["length"][idx].mean() for r in ok])
            m = max(len(ok), 1)
            clamped = sum(1 for r in ok if r[v].get("clamped", 0) > 0)
            rows.append({
                "variant": v,
                "param_class": name,
                "coverage": float(cov.mean()) if ok else float("nan"),
                "coverage_se": float(cov.std(ddof=1) / np.sqrt(m)) if m > 1 else float("nan"),
                "length": float(length.mean()) if ok else float("nan"),
                "length_se": float(length.std(ddof=1) / np.sqrt(m)) if m > 1 else float("nan"),
                "median_length": float(np.median(length)) if ok else float("nan"),
                "n_reps": len(ok),
                "reps_clamped": clamped,
            })
    return CoverageReport(
        rows=rows, n_reps=len(ok), n_failed=len(records) - len(ok),
        config=config or {}, raw=records,
    )


def run_study(config=None, progress=None, **overrides):
    """Run a full coverage study; keyword overrides patch ``config`` fields.

    Replications are independent and keyed by ``(seed, rep)``, so the result
    does not depend on ``n_jobs``. Failed replications are logged, excluded
    and counted in ``n_failed``.
    """
    cfg = replace(config or StudyConfig(), **overrides)
    if cfg.design not in ("srs", "pps"):
        raise ValueError("design must be 'srs' or 'pps'")
    pop = generate_population(replace(cfg.population, seed=_rep_seed(cfg.seed, -1 % 2**32, 0)))
    jobs = [(rep, cfg, pop) for rep in range(cfg.n_reps)]
    if cfg.n_jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            records = list(pool.map(_safe_replication, jobs))
    else:
        records = []
        for job in jobs:
            records.append(_safe_replication(job))
            if progress is not None:
                progress(job[0] + 1, cfg.n_reps)
    layout = SurveyDataset.from_arrays(
        [0, 1], np.ones((2, 2)) + np.eye(2), [0, 1], [1, 1], n_groups=cfg.population.G
    ).layout
    return summarize(records, cfg.variants, layout, config=cfg.to_dict())


def brute_force_replication_fit(data, design, prior, config):
    """Refit the pseudo-posterior under every replicate weight set.

    Every refit reuses ``config.seed`` (common random numbers), so identical
    replicate weights give identical posterior means. Returns the replicate
    variance ``sum_r c_r (m_r - m_bar)^2`` of the posterior means per
    parameter, together with the ``R x K`` matrix of means.
    """
    means = []
    for r in range(design.R):
        rep_data = data.with_weights(design.rep_weights(data.w)[r])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            draws = sample_pseudo_posterior(rep_data, prior, config)
        means.append(draws.draws.mean(axis=0))
    means = np.asarray(means)
    dev = means - means.mean(axis=0)
    variances = design.scale @ dev**2
    return variances, means
