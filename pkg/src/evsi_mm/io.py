"""Plain-text tables: comma separated, header row mandatory, UTF-8, LF endings.

Floats are written with 12 significant digits so reproducibility can be
checked on the decimal rendering.
"""
from __future__ import annotations

import csv
import json
from pathlib import Path

import numpy as np

from .moment_matching import EXPORT_DIGITS, PosteriorVariancePoint

__all__ = [
    "fmt",
    "write_table",
    "read_table",
    "write_variance_points",
    "read_variance_points",
    "write_curve",
    "read_curve",
    "write_posterior_draws",
    "write_residuals",
    "write_psa_summary",
    "write_oracle",
    "write_comparison",
    "read_fitted_values",
    "write_fitted_values",
    "write_json",
    "TableError",
]


class TableError(ValueError):
    """A delimited table is malformed."""


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    v = float(value)
    if v == 0.0:
        return "0"      # folds -0
    return f"{v:.{EXPORT_DIGITS}g}"


def write_table(path, header, rows) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            if len(row) != len(header):
                raise TableError(f"row width {len(row)} does not match header width {len(header)}")
            w.writerow([fmt(v) for v in row])
    return path


def read_table(path, required=None) -> tuple[list[str], list[list[str]]]:
    with open(path, encoding="utf-8", newline="") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise TableError(f"{path}: empty table (a header row is required)")
    header = [h.strip() for h in rows[0]]
    if _numeric(header):
        raise TableError(f"{path}: first row looks numeric; a header row is required")
    if required is not None and header != list(required):
        raise TableError(f"{path}: expected header {','.join(required)}, got {','.join(header)}")
    body = rows[1:]
    for k, r in enumerate(body, start=2):
        if len(r) != len(header):
            raise TableError(f"{path}: line {k} has {len(r)} fields, expected {len(header)}")
    return header, body


def _numeric(cells) -> bool:
    try:
        [float(c) for c in cells]
    except ValueError:
        return False
    return True


def _floats(body, path) -> np.ndarray:
    try:
        return np.array([[float(c) for c in r] for r in body], dtype=float)
    except ValueError as exc:
        raise TableError(f"{path}: non-numeric cell ({exc})") from None


VARIANCE_HEADER = ("q", "n", "i", "j", "sigma")


def write_variance_points(path, points) -> Path:
    """One row per design point and upper-triangle element, 1-based i, j."""
    rows = []
    for p in points:
        sig = np.atleast_2d(p.sigma)
        k = sig.shape[0]
        for i in range(k):
            for j in range(i, k):
                rows.append((int(p.q), int(p.n), i + 1, j + 1, float(sig[i, j])))
    return write_table(path, VARIANCE_HEADER, rows)


def read_variance_points(path) -> list[PosteriorVariancePoint]:
    _, body = read_table(path, VARIANCE_HEADER)
    if not body:
        raise TableError(f"{path}: no variance points")
    vals = _floats(body, path)
    q, n, i, j = (vals[:, c].astype(int) for c in range(4))
    k = int(max(i.max(), j.max()))
    out = []
    for qq in sorted(set(q.tolist())):
        sel = q == qq
        ns = set(n[sel].tolist())
        if len(ns) != 1:
            raise TableError(f"{path}: design point q={qq} has several sample sizes")
        sig = np.full((k, k), np.nan)
        for a, b, v in zip(i[sel], j[sel], vals[sel, 4]):
            sig[a - 1, b - 1] = sig[b - 1, a - 1] = v
        if np.isnan(sig).any():
            raise TableError(f"{path}: design point q={qq} is missing covariance elements")
        out.append(PosteriorVariancePoint(int(qq), ns.pop(), sig))
    return out


CURVE_HEADER = ("n", "level", "sigma_x", "evsi")


def write_curve(path, curve) -> Path:
    rows = [(float(n), float(p), float(curve.sigma_x[a, b]), float(curve.evsi[a, b]))
            for b, n in enumerate(curve.grid) for a, p in enumerate(curve.levels)]
    return write_table(path, CURVE_HEADER, rows)


def read_curve(path) -> tuple[np.ndarray, tuple, np.ndarray, np.ndarray]:
    """Return ``(grid, levels, sigma_x L x G, evsi L x G)``."""
    _, body = read_table(path, CURVE_HEADER)
    vals = _floats(body, path)
    if vals.size == 0:
        raise TableError(f"{path}: empty curve")
    grid = np.unique(vals[:, 0])
    levels = tuple(np.unique(vals[:, 1]).tolist())
    if len(vals) != len(grid) * len(levels):
        raise TableError(f"{path}: curve is not a full grid x level table")
    sig = np.empty((len(levels), len(grid)))
    ev = np.empty_like(sig)
    gi = {v: k for k, v in enumerate(grid.tolist())}
    li = {v: k for k, v in enumerate(levels)}
    for n, p, s, e in vals:
        sig[li[p], gi[n]] = s
        ev[li[p], gi[n]] = e
    return grid, levels, sig, ev


def write_posterior_draws(path, fits: dict) -> Path:
    """``chain,iter,h,sigma_eps``; several elements add leading ``i,j`` columns."""
    multi = len(fits) > 1
    header = (("i", "j") if multi else ()) + ("chain", "iter", "h", "sigma_eps")
    rows = []
    for (i, j), post in sorted(fits.items()):
        if post is None:
            continue
        prefix = (i + 1, j + 1) if multi else ()
        for c in range(post.h.shape[0]):
            for t in range(post.h.shape[1]):
                rows.append(prefix + (c + 1, t + 1, float(post.h[c, t]),
                                      float(post.sigma_eps[c, t])))
    return write_table(path, header, rows)


RESIDUAL_HEADER = ("i", "j", "q", "n", "y", "fitted", "residual", "standardized")


def write_residuals(path, diagnostics: dict) -> Path:
    """``diagnostics`` maps (i, j) to :func:`nlreg.residual_diagnostics` output."""
    rows = []
    for (i, j), d in sorted(diagnostics.items()):
        for q in range(len(d["n"])):
            rows.append((i + 1, j + 1, q + 1, int(d["n"][q]), float(d["y"][q]),
                         float(d["fitted"][q]), float(d["residual"][q]),
                         float(d["standardized"][q])))
    return write_table(path, RESIDUAL_HEADER, rows)


def write_psa_summary(path, moments, s: int, evppi: float | None = None) -> Path:
    """``quantity,i,j,value`` rows: draws, INB means, INB covariance, optional EVPPI."""
    rows = [("draws", 0, 0, int(s))]
    mean = np.ravel(moments.mean)
    cov = np.atleast_2d(moments.covariance)
    rows += [("mean", i + 1, 0, float(mean[i])) for i in range(mean.size)]
    rows += [("cov", i + 1, j + 1, float(cov[i, j]))
             for i in range(mean.size) for j in range(i, mean.size)]
    if evppi is not None:
        rows.append(("evppi", 0, 0, float(evppi)))
    return write_table(path, ("quantity", "i", "j", "value"), rows)


def write_oracle(path, results) -> Path:
    rows = [(n, e.evsi, e.se, e.s_out, e.m_in, e.evaluations) for n, e in results]
    return write_table(path, ("n", "evsi", "se", "s_out", "m_in", "evaluations"), rows)


def write_comparison(curve_path, summary_path, designs) -> tuple[Path, Path]:
    rows = [(d.label, float(n), float(e), float(c), float(v))
            for d in designs for n, e, c, v in zip(d.grid, d.evsi, d.cost, d.net_value)]
    a = write_table(curve_path, ("label", "n", "evsi", "cost", "net_value"), rows)
    summary = [(d.label, d.optimal_n, d.optimal_net_value, bool(d.never_worthwhile))
               for d in designs]
    b = write_table(summary_path, ("label", "optimal_n", "optimal_net_value",
                                   "never_worthwhile"), summary)
    return a, b


def read_fitted_values(path) -> np.ndarray:
    """S x (T-1) fitted values, one column per non-reference arm."""
    header, body = read_table(path)
    vals = _floats(body, path)
    if vals.shape[0] < 2:
        raise TableError(f"{path}: need at least two fitted-value rows")
    if not np.all(np.isfinite(vals)):
        raise TableError(f"{path}: non-finite fitted values")
    return vals.reshape(len(body), len(header))


def write_fitted_values(path, fitted, labels=None) -> Path:
    fitted = np.atleast_2d(np.asarray(fitted, dtype=float).T).T
    labels = labels or [f"inb{k + 1}" for k in range(fitted.shape[1])]
    return write_table(path, labels, fitted.tolist())


def write_json(path, payload) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")
    return path


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")
