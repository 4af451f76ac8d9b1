"""CSV and JSON readers and writers.

Dataset CSV columns: ``y, weight, group, psu`` (required), ``stratum``
(optional) and any number of numeric covariates; an intercept column is
added. Draws CSV columns: one per parameter, then ``lp`` and ``chain``.
Floats are written with 17 significant digits so files round-trip exactly.
"""

import csv
import hashlib
import json
import math
import platform
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .exceptions import DataError, DimensionError
from .model import SurveyDataset
from .sampler import PosteriorDraws, split_rhat

REQUIRED_COLUMNS = ("y", "weight", "group", "psu")
RESERVED_COLUMNS = REQUIRED_COLUMNS + ("stratum",)


def _fmt(x):
    return format(float(x), ".17g")


def _parse_float(text, line, column):
    try:
        value = float(text)
    except ValueError:
        raise DataError(f"{column}: cannot parse {text!r} as a number", line, column) from None
    if not math.isfinite(value):
        raise DataError(f"{column}: non-finite value {text!r}", line, column)
    return value


def read_dataset(path, intercept=True):
    """Load a dataset CSV into a :class:`SurveyDataset`.

    Group, PSU and stratum values are treated as labels. Weights must be
    strictly positive and outcomes 0 or 1.

    Raises:
        DataError: missing column, unparsable or invalid value; the message
            carries the 1-based file line number.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty dataset file", line=1) from None
        missing = [c for c in REQUIRED_COLUMNS if c not in header]
        if missing:
            raise DataError(f"missing required column(s): {', '.join(missing)}", line=1,
                            column=missing[0])
        if len(set(header)) != len(header):
            raise DataError("duplicate column names in header", line=1)
        pos = {name: i for i, name in enumerate(header)}
        covariates = [h for h in header if h not in RESERVED_COLUMNS]
        rows = {name: [] for name in header}
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(
                    f"expected {len(header)} fields, found {len(row)}", line=lineno
                )
            for name in header:
                rows[name].append(row[pos[name]].strip())
            y = _parse_float(rows["y"][-1], lineno, "y")
            if y not in (0.0, 1.0):
                raise DataError(f"y must be 0 or 1, got {rows['y'][-1]!r}", lineno, "y")
            w = _parse_float(rows["weight"][-1], lineno, "weight")
            if w <= 0:
                raise DataError(f"weight must be positive, got {w:g}", lineno, "weight")
            for name in covariates:
                _parse_float(rows[name][-1], lineno, name)
    if not rows["y"]:
        raise DataError("dataset has no rows", line=2)

    cols = [np.asarray(rows[c], dtype=float) for c in covariates]
    names = list(covariates)
    if intercept:
        cols.insert(0, np.ones(len(rows["y"])))
        names.insert(0, "intercept")
    X = np.column_stack(cols) if cols else np.empty((len(rows["y"]), 0))
    stratum = rows.get("stratum")
    return SurveyDataset.from_arrays(
        np.asarray(rows["y"], dtype=float),
        X,
        rows["group"],
        np.asarray(rows["weight"], dtype=float),
        psu=rows["psu"],
        stratum=stratum,
        feature_names=tuple(names),
        allow_zero_weights=False,
    )


def write_dataset(path, data):
    """Write ``data`` in the dataset CSV layout (intercept column dropped)."""
    keep = [j for j, n in enumerate(data.feature_names) if n != "intercept"]
    header = ["y", "weight", "group", "psu", "stratum"] + [data.feature_names[j] for j in keep]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(data.n):
            writer.writerow(
                [int(data.y[i]), _fmt(data.w[i]), data.group_labels[data.group[i]],
                 data.psu_labels[data.psu[i]], data.stratum_labels[data.stratum[i]]]
                + [_fmt(data.X[i, j]) for j in keep]
            )


def write_draws(path, draws):
    """Write draws as CSV: parameter columns, ``lp`` and ``chain``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(draws.param_names) + ["lp", "chain"])
        for row, lp, chain in zip(draws.draws, draws.lp, draws.chain_id):
            writer.writerow([_fmt(v) for v in row] + [_fmt(lp), int(chain)])


def read_draws(path, expected_names=None):
    """Read a draws CSV written by :func:`write_draws` (or an external sampler).

    ``lp`` and ``chain`` columns are optional; without ``chain`` all draws are
    treated as one chain. ``lp`` may be NaN (adjusted draws carry no density).

    Raises:
        DataError: unparsable values (with line numbers).
        DimensionError: parameter names differ from ``expected_names``.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("empty draws file", line=1) from None
        params = [h for h in header if h not in ("lp", "chain")]
        if expected_names is not None and list(expected_names) != params:
            raise DimensionError(
                f"draws have {len(params)} parameters {params[:3]}..., expected "
                f"{len(expected_names)} {list(expected_names)[:3]}..."
            )
        values = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataError(f"expected {len(header)} fields, found {len(row)}", lineno)
            values.append([
                _parse_float(v, lineno, header[k]) if header[k] != "lp" else float(v)
                for k, v in enumerate(row)
            ])
    if not values:
        raise DataError("draws file has no rows", line=2)
    A = np.asarray(values)
    idx = [header.index(p) for p in params]
    D = A[:, idx]
    lp = A[:, header.index("lp")] if "lp" in header else np.full(len(A), np.nan)
    chain = A[:, header.index("chain")].astype(int) if "chain" in header else np.zeros(len(A), int)
    rhat = _rhat_from(D, chain)
    return PosteriorDraws(draws=D, lp=lp, param_names=params, chain_id=chain, rhat=rhat)


def _rhat_from(D, chain):
    ids, counts = np.unique(chain, return_counts=True)
    if ids.size < 2 or counts.min() < 4:
        return np.full(D.shape[1], np.nan)
    n = counts.min()
    stacked = np.stack([D[chain == c][:n] for c in ids])
    return split_rhat(stacked)


def file_sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def write_json(path, payload):
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, default=_default, allow_nan=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)


def manifest(command, config, outputs=None, extra=None):
    """Run manifest: resolved config, seed, versions and output file hashes."""
    out = {
        "command": command,
        "config": config,
        "seed": config.get("seed"),
        "package_version": __version__,
        "numpy_version": np.__version__,
        "python_version": platform.python_version(),
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
    }
    if outputs:
        out["outputs"] = {name: {"path": str(p), "sha256": file_sha256(p)}
                          for name, p in outputs.items()}
    if extra:
        out.update(extra)
    return out


def write_table(path, header, rows):
    """Write a list of row sequences as CSV, formatting floats exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
