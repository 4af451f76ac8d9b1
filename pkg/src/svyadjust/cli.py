"""Command-line entry point: ``svyadjust {fit,adjust,simulate,oracle}``.

Settings come from an optional JSON config file and are overridden by flags.
A seed is mandatory. Exit codes: 0 success, 2 configuration error, 3 data
error, 4 numerical failure.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .exceptions import (
    ConditioningError,
    ConvergenceError,
    DataError,
    DesignError,
    DimensionError,
    DomainError,
    NonFiniteError,
    SamplerDivergence,
)
from .model import PriorSpec
from .replication import DESIGN_KINDS, make_design
from .sampler import SamplerConfig, sample_pseudo_posterior
from .sandwich import VARIANTS, adjust_draws
from .simulation import (
    StudyConfig,
    brute_force_replication_fit,
    equal_tailed_intervals,
    run_study,
)

logger = logging.getLogger("svyadjust")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class ConfigError(Exception):
    pass


def _load_config(args):
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = io.read_json(path)
        except ValueError as err:
            raise ConfigError(f"config file is not valid JSON: {err}") from None
    if args.seed is not None:
        cfg["seed"] = args.seed
    if cfg.get("seed") is None:
        raise ConfigError("a seed is required (--seed or \"seed\" in the config file)")
    cfg["seed"] = int(cfg["seed"])
    return cfg


def _sampler_config(cfg, args):
    s = dict(cfg.get("sampler", {}))
    for key in ("n_chains", "n_warmup", "n_keep", "adaptation"):
        value = getattr(args, key, None)
        if value is not None:
            s[key] = value
    s["seed"] = cfg["seed"]
    try:
        sampler = SamplerConfig.from_dict(s)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid sampler settings: {err}") from None
    cfg["sampler"] = sampler.to_dict()
    return sampler


def _prior(cfg):
    try:
        prior = PriorSpec.from_dict(cfg.get("prior", {}))
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid prior settings: {err}") from None
    cfg["prior"] = prior.to_dict()
    return prior


def _replication(cfg, args):
    r = dict(cfg.get("replication", {}))
    if getattr(args, "replication", None):
        r["kind"] = args.replication
    if getattr(args, "replicates", None):
        r["R"] = args.replicates
    r.setdefault("kind", "delete_a_group_jackknife")
    r.setdefault("R", 100)
    if r["kind"] not in DESIGN_KINDS:
        raise ConfigError(f"unknown replication kind {r['kind']!r}; choose from {DESIGN_KINDS}")
    cfg["replication"] = r
    return r


def _variants(cfg, args):
    v = args.variants or cfg.get("variants") or "all"
    if isinstance(v, str):
        v = list(VARIANTS) if v == "all" else [x.strip() for x in v.split(",") if x.strip()]
    bad = [x for x in v if x not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant(s) {bad}; choose from {VARIANTS}")
    cfg["variants"] = list(v)
    return list(v)


def _out_dir(args):
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as err:
        raise ConfigError(f"cannot create output directory {out}: {err}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory {out} is not writable")
    return out


def _input(path, what):
    if path is None:
        raise ConfigError(f"missing {what} path")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def _summary_rows(names, D, rhat):
    q = equal_tailed_intervals(D)
    return [
        [n, float(m), float(s), float(lo), float(hi), float(r)]
        for n, m, s, (lo, hi), r in zip(names, D.mean(0), D.std(0, ddof=1), q, rhat)
    ]


def cmd_fit(args):
    cfg = _load_config(args)
    data_path = _input(args.data or cfg.get("data"), "dataset")
    cfg["data"] = str(data_path)
    sampler, prior = _sampler_config(cfg, args), _prior(cfg)
    out = _out_dir(args)
    data = io.read_dataset(data_path).normalized()
    draws = sample_pseudo_posterior(data, prior, sampler)
    io.write_draws(out / "draws.csv", draws)
    io.write_table(out / "summary.csv", ["param", "mean", "sd", "q2.5", "q97.5", "rhat"],
                   _summary_rows(draws.param_names, draws.draws, draws.rhat))
    outputs = {"draws": out / "draws.csv", "summary": out / "summary.csv"}
    io.write_json(out / "manifest.json", io.manifest(
        "fit", cfg, outputs,
        extra={"weight_scale": data.weight_scale, "warnings": draws.warnings,
               "max_rhat": float(np.nanmax(draws.rhat))},
    ))
    print(f"wrote {len(draws.param_names)} parameters x {draws.M} draws to {out / 'draws.csv'}")
    return 0


def cmd_adjust(args):
    cfg = _load_config(args)
    data_path = _input(args.data or cfg.get("data"), "dataset")
    draws_path = _input(args.draws or cfg.get("draws"), "draws")
    cfg["data"], cfg["draws"] = str(data_path), str(draws_path)
    prior, rep, variants = _prior(cfg), _replication(cfg, args), _variants(cfg, args)
    out = _out_dir(args)
    data = io.read_dataset(data_path).normalized()
    draws = io.read_draws(draws_path, expected_names=data.param_names())
    design = make_design(data, rep["kind"], R=int(rep["R"]), seed=cfg["seed"])
    design.to_json(out / "replicate_design.json")
    names = list(draws.param_names)
    deff_rows = {n: [n] for n in names}
    outputs = {}
    for v in variants:
        res = adjust_draws(v, draws.draws, data, prior, design)
        adjusted = draws.with_draws(res.adjusted_draws)
        io.write_draws(out / f"adjusted_{v}.csv", adjusted)
        io.write_json(out / f"curvature_{v}.json", res.to_dict())
        q = equal_tailed_intervals(res.adjusted_draws)
        io.write_table(out / f"intervals_{v}.csv", ["param", "mean", "q2.5", "q97.5", "length"],
                       [[n, float(m), float(lo), float(hi), float(hi - lo)]
                        for n, m, (lo, hi) in zip(names, res.adjusted_draws.mean(0), q)])
        for n, d in zip(names, res.design_effect):
            deff_rows[n].append(float(d))
        outputs[f"adjusted_{v}"] = out / f"adjusted_{v}.csv"
        if res.clamp_count:
            logger.warning("%s: %d transformed values clamped to the inverse's domain",
                           v, res.clamp_count)
    io.write_table(out / "design_effects.csv", ["param"] + variants, list(deff_rows.values()))
    outputs["design_effects"] = out / "design_effects.csv"
    io.write_json(out / "manifest.json", io.manifest("adjust", cfg, outputs))
    print(f"adjusted {draws.M} draws with {', '.join(variants)}; results in {out}")
    return 0


def cmd_simulate(args):
    cfg = _load_config(args)
    study = dict(cfg.get("study", {}))
    if args.design:
        study["design"] = args.design
    if args.reps is not None:
        study["n_reps"] = args.reps
    study["n_jobs"] = args.jobs if args.jobs is not None else study.get("n_jobs", os.cpu_count() or 1)
    study["seed"] = cfg["seed"]
    if "variants" in cfg or args.variants:
        study["variants"] = _variants(cfg, args)
    sampler_cfg = dict(cfg.get("sampler", {"n_warmup": 500, "n_keep": 500}))
    for key in ("n_chains", "n_warmup", "n_keep", "adaptation"):
        if getattr(args, key, None) is not None:
            sampler_cfg[key] = getattr(args, key)
    study["sampler"] = sampler_cfg
    if "prior" in cfg:
        study["prior"] = cfg["prior"]
    if "population" in cfg:
        study["population"] = cfg["population"]
    rep = cfg.get("replication")
    if rep or args.replication or args.replicates:
        rep = _replication(cfg, args)
        study["replication"], study["n_replicates"] = rep["kind"], int(rep["R"])
    try:
        config = StudyConfig.from_dict(study)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"invalid study settings: {err}") from None
    if config.design not in ("srs", "pps"):
        raise ConfigError("design must be 'srs' or 'pps'")
    out = _out_dir(args)

    def progress(i, n):
        if not args.quiet:
            print(f"\rreplication {i}/{n}", end="", file=sys.stderr, flush=True)

    report = run_study(config, progress=progress)
    if not args.quiet:
        print(file=sys.stderr)
    report.to_csv(out / "coverage.csv")
    (out / "coverage.txt").write_text(report.to_table() + "\n")
    outputs = {"coverage": out / "coverage.csv", "table": out / "coverage.txt"}
    if args.raw:
        report.raw_to_csv(out / "replications.csv")
        outputs["replications"] = out / "replications.csv"
    failures = [r["error"] for r in report.raw if "error" in r]
    io.write_json(out / "manifest.json", io.manifest(
        "simulate", config.to_dict(), outputs,
        extra={"n_reps": report.n_reps, "n_failed": report.n_failed, "failures": failures},
    ))
    print(report.to_table())
    return 0


def cmd_oracle(args):
    cfg = _load_config(args)
    data_path = _input(args.data or cfg.get("data"), "dataset")
    cfg["data"] = str(data_path)
    sampler, prior, rep = _sampler_config(cfg, args), _prior(cfg), _replication(cfg, args)
    out = _out_dir(args)
    data = io.read_dataset(data_path).normalized()
    design = make_design(data, rep["kind"], R=int(rep["R"]), seed=cfg["seed"])
    draws = sample_pseudo_posterior(data, prior, sampler)
    brute, _ = brute_force_replication_fit(data, design, prior, sampler)
    yj = adjust_draws("yeo_johnson", draws.draws, data, prior, design)
    rows = [
        [n, float(b), float(u), float(a), float(a / b) if b > 0 else float("nan")]
        for n, b, u, a in zip(draws.param_names, brute, draws.draws.var(0, ddof=1),
                              yj.adjusted_draws.var(0, ddof=1))
    ]
    io.write_table(out / "oracle_variances.csv",
                   ["param", "replicate_refit", "unadjusted", "yeo_johnson", "ratio"], rows)
    io.write_json(out / "manifest.json",
                  io.manifest("oracle", cfg, {"variances": out / "oracle_variances.csv"}))
    print(f"replicate-refit variances written to {out / 'oracle_variances.csv'}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="svyadjust",
        description="Survey-weighted multilevel logistic regression with sandwich-adjusted draws.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, help="master seed (required here or in the config)")
        p.add_argument("--out", default="out", help="output directory")
        if data:
            p.add_argument("--data", help="dataset CSV")

    def sampler_flags(p):
        p.add_argument("--chains", dest="n_chains", type=int)
        p.add_argument("--warmup", dest="n_warmup", type=int)
        p.add_argument("--keep", dest="n_keep", type=int)
        p.add_argument("--adaptation", choices=("hmc", "dense", "diag", "mala"))

    def rep_flags(p):
        p.add_argument("--replication", choices=DESIGN_KINDS)
        p.add_argument("--replicates", type=int, help="replicates (or jackknife groups)")

    p = sub.add_parser("fit", help="sample the pseudo-posterior of a dataset CSV")
    common(p)
    sampler_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("adjust", help="adjust a draws CSV")
    common(p)
    p.add_argument("--draws", help="draws CSV from 'fit' or an external sampler")
    p.add_argument("--variants", help="comma-separated variants or 'all'")
    rep_flags(p)
    p.set_defaults(func=cmd_adjust)

    p = sub.add_parser("simulate", help="run an SRS or PPS coverage study")
    common(p, data=False)
    p.add_argument("--design", choices=("srs", "pps"))
    p.add_argument("--reps", type=int, help="number of replications")
    p.add_argument("--jobs", type=int, help="worker processes (default: CPU count)")
    p.add_argument("--variants", help="comma-separated variants or 'all'")
    p.add_argument("--raw", action="store_true", help="also write per-replication results")
    p.add_argument("--quiet", action="store_true")
    sampler_flags(p)
    rep_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("oracle", help="refit under every replicate (slow cross-check)")
    common(p)
    sampler_flags(p)
    rep_flags(p)
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"configuration error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DimensionError, DesignError) as err:
        print(f"data error: {err}", file=sys.stderr)
        return EXIT_DATA
    except (NonFiniteError, ConvergenceError, SamplerDivergence, ConditioningError,
            DomainError) as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
