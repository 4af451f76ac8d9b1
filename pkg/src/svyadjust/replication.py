"""Replicate-weight designs and the between-replicate score variance.

Replicate weights are stored as PSU-constant multipliers of the base weights,
so the same design can be applied to normalized or raw weights.
"""

import json
from dataclasses import dataclass

import numpy as np

from .exceptions import DesignError, DimensionError
from .model import unit_scores

DESIGN_KINDS = ("half_sample_bootstrap", "delete_a_group_jackknife")


@dataclass(frozen=True, eq=False)
class ReplicateDesign:
    """``R`` replicate multiplier rows over ``n`` units.

    ``rep_weights(w)`` returns ``multipliers * w``; ``scale`` holds the
    per-replicate variance constants ``c_r``; ``psu_map`` the PSU code of
    each unit.
    """

    kind: str
    multipliers: np.ndarray
    scale: np.ndarray
    psu_map: np.ndarray
    seed: int = None
    groups: np.ndarray = None

    def __post_init__(self):
        if self.kind not in DESIGN_KINDS:
            raise DesignError(f"unknown design kind {self.kind!r}")
        if self.multipliers.ndim != 2 or self.scale.shape != (self.R,):
            raise DesignError("multipliers must be R x n and scale length R")

    @property
    def R(self):
        return self.multipliers.shape[0]

    @property
    def n(self):
        return self.multipliers.shape[1]

    def rep_weights(self, w):
        w = np.asarray(w, dtype=float)
        if w.shape != (self.n,):
            raise DimensionError(f"base weights must have length {self.n}")
        return self.multipliers * w

    def to_csv(self, path):
        """Write the ``R x n`` multiplier matrix, one replicate per row."""
        header = ",".join(f"unit{i}" for i in range(self.n))
        np.savetxt(path, self.multipliers, delimiter=",", header=header,
                   comments="", fmt="%.17g")

    def metadata(self):
        return {
            "kind": self.kind,
            "R": self.R,
            "n": self.n,
            "seed": self.seed,
            "scale": self.scale.tolist(),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2)


def _psu_strata(data):
    """Stratum code of every PSU code."""
    strata = np.empty(data.n_psu, dtype=np.int64)
    strata[data.psu] = data.stratum
    return strata


def make_half_sample_bootstrap(data, R=100, seed=0):
    """Half-sample bootstrap: per stratum, a random half of PSUs get weight x2.

    Within a stratum of ``n_h`` PSUs, exactly ``ceil(n_h / 2)`` PSUs are drawn
    without replacement in each replicate and doubled; the rest are zeroed.
    Variance constants are ``c_r = 1 / R``.

    Raises:
        DesignError: ``R < 2`` or a stratum has fewer than two PSUs.
    """
    if R < 2:
        raise DesignError("need at least two replicates")
    rng = np.random.default_rng(seed)
    psu_stratum = _psu_strata(data)
    psu_mult = np.zeros((R, data.n_psu))
    for h in np.unique(psu_stratum):
        members = np.flatnonzero(psu_stratum == h)
        if members.size < 2:
            raise DesignError(f"stratum {h} has fewer than two PSUs")
        n_pick = -(-members.size // 2)
        for r in range(R):
            psu_mult[r, rng.choice(members, n_pick, replace=False)] = 2.0
    return ReplicateDesign(
        kind="half_sample_bootstrap",
        multipliers=psu_mult[:, data.psu],
        scale=np.full(R, 1.0 / R),
        psu_map=data.psu.copy(),
        seed=seed,
    )


def make_delete_a_group_jackknife(data, n_groups=100, seed=0):
    """Delete-a-group jackknife over randomly formed PSU groups.

    PSUs are shuffled within each stratum and dealt round-robin into
    ``n_groups`` groups, continuing across strata. Replicate ``r`` zeroes the
    PSUs of group ``r`` and multiplies every other unit by
    ``n_groups / (n_groups - 1)``; ``c_r = (n_groups - 1) / n_groups``.

    Raises:
        DesignError: ``n_groups < 2`` or more groups than PSUs.
    """
    if n_groups < 2:
        raise DesignError("n_groups must be at least 2")
    if n_groups > data.n_psu:
        raise DesignError(
            f"n_groups={n_groups} exceeds the number of PSUs ({data.n_psu})"
        )
    rng = np.random.default_rng(seed)
    psu_stratum = _psu_strata(data)
    order = np.concatenate(
        [rng.permutation(np.flatnonzero(psu_stratum == h)) for h in np.unique(psu_stratum)]
    )
    group_of_psu = np.empty(data.n_psu, dtype=np.int64)
    group_of_psu[order] = np.arange(order.size) % n_groups
    psu_mult = np.full((n_groups, data.n_psu), n_groups / (n_groups - 1.0))
    psu_mult[group_of_psu, np.arange(data.n_psu)] = 0.0
    return ReplicateDesign(
        kind="delete_a_group_jackknife",
        multipliers=psu_mult[:, data.psu],
        scale=np.full(n_groups, (n_groups - 1.0) / n_groups),
        psu_map=data.psu.copy(),
        seed=seed,
        groups=group_of_psu,
    )


def make_design(data, kind="delete_a_group_jackknife", R=100, seed=0):
    """Build either design kind; ``R`` is the replicate (or group) count."""
    if kind == "half_sample_bootstrap":
        return make_half_sample_bootstrap(data, R=R, seed=seed)
    if kind == "delete_a_group_jackknife":
        return make_delete_a_group_jackknife(data, n_groups=min(R, data.n_psu), seed=seed)
    raise DesignError(f"unknown design kind {kind!r}; choose from {DESIGN_KINDS}")


def replicate_score_totals(theta_hat, data, design, score_fn=unit_scores):
    """``R x K`` weighted score totals, one row per replicate."""
    if design.n != data.n:
        raise DimensionError("design and dataset have different numbers of units")
    S = score_fn(theta_hat, data)
    return design.rep_weights(data.w) @ S


def estimate_J(theta_hat, data, design, score_fn=unit_scores):
    """Between-replicate variance of the weighted score total.

    Scores are computed once at ``theta_hat`` and re-weighted per replicate:
    ``J = sum_r c_r (s_r - s_bar)(s_r - s_bar)^T``. Weights are whatever
    ``data.w`` holds, so ``J`` follows the same normalization as the
    curvature estimates computed from ``data``.

    Returns:
        (J, rank): the symmetrized ``K x K`` estimate and its numerical rank.
        A rank below ``K`` (e.g. ``R < K`` or the structurally zero
        ``log_sigma_alpha`` score) is a diagnostic, not an error.
    """
    totals = replicate_score_totals(theta_hat, data, design, score_fn)
    dev = totals - totals.mean(axis=0)
    J = (dev * design.scale[:, None]).T @ dev
    J = 0.5 * (J + J.T)
    if np.any(J):
        rank = int(np.linalg.matrix_rank(J, tol=1e-10 * np.abs(np.diag(J)).max()))
    else:
        rank = 0
    return J, rank
