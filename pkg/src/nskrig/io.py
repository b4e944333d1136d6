"""CSV ingestion and export.

Every export writes to a temporary file in the destination directory and
renames it into place, so a failed run never leaves a partial file.
Floats are written with 17 significant digits and round-trip exactly.
"""

import csv
import io
import logging
import math
import os
import tempfile

import numpy as np

from .engine import SpatialDataset
from .errors import InputError

log = logging.getLogger(__name__)

REQUIRED_COLUMNS = ("x", "y", "value")


def fmt(v):
    return format(float(v), ".17g")


def _parse(text, line, column):
    try:
        v = float(text)
    except ValueError:
        raise InputError(f"row {line}: cannot parse {column}={text!r} as a number") from None
    if not math.isfinite(v):
        raise InputError(f"row {line}: non-finite {column}={text!r}")
    return v


def ingest_csv(path):
    """Read ``x, y, value`` rows plus optional ``replicate`` and ``cov_*`` columns.

    With a replicate column, every replicate must cover the same location set;
    locations are ordered by first appearance. Lines starting with ``#`` are
    comments. Row numbers in errors are file line numbers.
    """
    with open(path, newline="") as fh:
        numbered = [(i, ln) for i, ln in enumerate(fh, start=1) if ln.strip() and not ln.lstrip().startswith("#")]
    if not numbered:
        raise InputError(f"{path}: no header row")
    reader = csv.reader([ln for _, ln in numbered])
    header = [h.strip() for h in next(reader)]
    missing = [c for c in REQUIRED_COLUMNS if c not in header]
    if missing:
        raise InputError(f"{path}: missing required column(s) {', '.join(missing)}")
    col = {h: j for j, h in enumerate(header)}
    cov_cols = [h for h in header if h.startswith("cov_")]
    has_rep = "replicate" in col

    rows = []
    for (line, _), rec in zip(numbered[1:], reader):
        if len(rec) != len(header):
            raise InputError(f"row {line}: expected {len(header)} fields, got {len(rec)}")
        x = _parse(rec[col["x"]], line, "x")
        y = _parse(rec[col["y"]], line, "y")
        v = _parse(rec[col["value"]], line, "value")
        r = rec[col["replicate"]].strip() if has_rep else "1"
        c = tuple(_parse(rec[col[h]], line, h) for h in cov_cols)
        rows.append((line, r, (x, y), v, c))
    if not rows:
        raise InputError(f"{path}: zero data rows")

    loc_index, locations, covariates = {}, [], []
    rep_index = {}
    for line, r, xy, _, c in rows:
        if xy not in loc_index:
            loc_index[xy] = len(locations)
            locations.append(xy)
            covariates.append(c)
        elif covariates[loc_index[xy]] != c:
            raise InputError(f"row {line}: covariates differ from an earlier row at the same location")
        rep_index.setdefault(r, len(rep_index))
    values = np.full((len(rep_index), len(locations)), np.nan)
    for line, r, xy, v, _ in rows:
        i, k = loc_index[xy], rep_index[r]
        if not np.isnan(values[k, i]):
            raise InputError(f"row {line}: location ({xy[0]}, {xy[1]}) repeated within replicate {r}")
        values[k, i] = v
    if np.any(np.isnan(values)):
        k, i = np.argwhere(np.isnan(values))[0]
        rep = list(rep_index)[k]
        raise InputError(f"replicate {rep} has no value at location ({locations[i][0]}, {locations[i][1]})")
    log.info("read %d rows (%d locations, %d replicates) from %s", len(rows), len(locations), len(rep_index), path)
    return SpatialDataset(
        np.array(locations),
        values,
        np.array(covariates) if cov_cols else None,
        tuple(cov_cols),
    )


def _table(header, columns, comments=()):
    buf = io.StringIO()
    for c in comments:
        buf.write(f"# {c}\n")
    buf.write(",".join(header) + "\n")
    for row in zip(*columns):
        buf.write(",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n")
    return buf.getvalue()


def dataset_csv(data, comments=()):
    n, R = data.n, data.replicates
    header = ["x", "y", "value", "replicate"] + list(data.covariate_names or
                                                     [f"cov_{j + 1}" for j in range(0 if data.covariates is None else data.covariates.shape[1])])
    cols = [np.tile(data.locations[:, 0], R), np.tile(data.locations[:, 1], R), data.values.ravel(),
            [str(r + 1) for r in range(R) for _ in range(n)]]
    if data.covariates is not None:
        cols += [np.tile(data.covariates[:, j], R) for j in range(data.covariates.shape[1])]
    return _table(header, cols, comments)


def realization_csv(realization, comments=()):
    X, V = realization.locations, realization.values
    R, n = V.shape
    return _table(
        ["x", "y", "value", "replicate"],
        [np.tile(X[:, 0], R), np.tile(X[:, 1], R), V.ravel(), [str(r + 1) for r in range(R) for _ in range(n)]],
        comments,
    )


def predictions_csv(result, comments=()):
    X = result.locations
    return _table(["x", "y", "mean", "se"], [X[:, 0], X[:, 1], result.mean, result.se], comments)


def ellipses_csv(records, comments=()):
    return _table(["x", "y", "lambda1", "lambda2", "angle", "sigma", "kappa"], list(records.T), comments)


def eofs_csv(basis, comments=()):
    n, k = basis.vectors.shape
    loc = [str(i) for i in range(n) for _ in range(k)]
    comp = [str(j + 1) for _ in range(n) for j in range(k)]
    return _table(["location_index", "component_index", "loading"], [loc, comp, basis.vectors.ravel()], comments)


def write_atomic(files):
    """Write ``{path: text}`` via temp files, renaming only after all succeed."""
    staged = []
    try:
        for path, text in files.items():
            directory = os.path.dirname(os.path.abspath(path))
            os.makedirs(directory, exist_ok=True)
            fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
            staged.append((tmp, path))
            with os.fdopen(fd, "w", newline="") as fh:
                fh.write(text)
    except BaseException:
        for tmp, _ in staged:
            os.unlink(tmp)
        raise
    for tmp, path in staged:
        os.replace(tmp, path)
