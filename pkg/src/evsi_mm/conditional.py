"""Conditional expectation of incremental net benefit given focal parameters.

The regression is a penalized B-spline smoother with smoothing parameters
chosen by generalized cross-validation:

* d = 1: cubic P-spline, second-difference penalty;
* d = 2: tensor-product P-spline, one penalty per margin;
* d >= 3: unpenalized intercept and linear terms, penalized additive
  smooths (linear part removed) and penalized pairwise interactions built
  from sum-to-zero constrained margins.

In every case intercept and linear terms sit in the penalty null space, so
linear functions of the focal parameters are reproduced exactly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize
from scipy.interpolate import BSpline

__all__ = [
    "SmootherConfig",
    "ConditionalInb",
    "fit_conditional_inb",
    "conditional_from_fitted",
    "evppi",
]

_DEGREE = 3


@dataclass
class SmootherConfig:
    k_1d: int = 20            # basis size, single focal parameter
    k_tensor: int = 10        # per-margin basis size, two parameters
    k_main: int = 10          # additive smooth basis size, d >= 3
    k_interaction: int = 5    # per-margin basis size of pairwise terms
    fit_size: int | None = None   # rows used for fitting; None = all when d <= 2
    fit_size_high_d: int = 20_000  # rows used when d >= 3 and fit_size is None
    log10_lambda_grid: tuple[float, float] = (-6.0, 8.0)


@dataclass(eq=False)
class ConditionalInb:
    fitted: np.ndarray            # S x (T-1)
    mean: np.ndarray
    cov: np.ndarray
    config: dict = field(default_factory=dict)

    @property
    def sigma2_phi(self) -> float:
        if self.cov.shape != (1, 1):
            raise ValueError("scalar variance only defined for two arms")
        return float(self.cov[0, 0])


class _Margin:
    """Cubic B-spline basis on uniform knots over a fixed range."""

    def __init__(self, x: np.ndarray, k: int):
        lo, hi = float(np.min(x)), float(np.max(x))
        if hi <= lo:
            raise ValueError("focal parameter column is constant; basis is rank-deficient")
        pad = 1e-6 * (hi - lo)
        lo, hi = lo - pad, hi + pad
        nseg = k - _DEGREE
        dx = (hi - lo) / nseg
        self.knots = lo + dx * np.arange(-_DEGREE, nseg + _DEGREE + 1)
        self.lo, self.hi, self.k = lo, hi, k
        d = np.diff(np.eye(k), 2, axis=0)
        self.penalty = d.T @ d

    def design(self, x: np.ndarray) -> np.ndarray:
        x = np.clip(x, self.lo, self.hi)
        return BSpline.design_matrix(x, self.knots, _DEGREE).toarray()


def _rowwise_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


class _Basis:
    """Design matrix builder plus its penalty blocks for one focal dimension."""

    def __init__(self, phi: np.ndarray, cfg: SmootherConfig):
        n, d = phi.shape
        self.d = d
        if d == 1:
            self.margins = [_Margin(phi[:, 0], cfg.k_1d)]
            self.penalties = [self.margins[0].penalty]
        elif d == 2:
            m1, m2 = _Margin(phi[:, 0], cfg.k_tensor), _Margin(phi[:, 1], cfg.k_tensor)
            self.margins = [m1, m2]
            i1, i2 = np.eye(m1.k), np.eye(m2.k)
            self.penalties = [np.kron(m1.penalty, i2), np.kron(i1, m2.penalty)]
        else:
            self._init_additive(phi, cfg)

    def _init_additive(self, phi, cfg):
        d = self.d
        self.loc = phi.mean(axis=0)
        self.scale = phi.std(axis=0)
        self.mains, self.main_proj = [], []
        self.inter, self.inter_proj = [], []
        main_pen, inter_pen = [], []
        for j in range(d):
            m = _Margin(phi[:, j], cfg.k_main)
            w, v = np.linalg.eigh(m.penalty)
            keep = w > 1e-8 * w.max()
            self.mains.append(m)
            self.main_proj.append(v[:, keep])
            main_pen.append(np.diag(w[keep]))
        for j in range(d):
            for k in range(j + 1, d):
                mj = _Margin(phi[:, j], cfg.k_interaction)
                mk = _Margin(phi[:, k], cfg.k_interaction)
                zj = linalg.null_space(mj.design(phi[:, j]).sum(axis=0)[None, :])
                zk = linalg.null_space(mk.design(phi[:, k]).sum(axis=0)[None, :])
                sj, sk = zj.T @ mj.penalty @ zj, zk.T @ mk.penalty @ zk
                self.inter.append((j, k, mj, mk))
                self.inter_proj.append((zj, zk))
                inter_pen.append(np.kron(sj, np.eye(sk.shape[0])) + np.kron(np.eye(sj.shape[0]), sk))
        sizes = [d + 1] + [p.shape[0] for p in main_pen] + [p.shape[0] for p in inter_pen]
        total = sum(sizes)
        offsets = np.cumsum([0] + sizes)
        pen_main = np.zeros((total, total))
        pen_inter = np.zeros((total, total))
        for i, p in enumerate(main_pen):
            a = offsets[1 + i]
            pen_main[a:a + p.shape[0], a:a + p.shape[0]] = p
        for i, p in enumerate(inter_pen):
            a = offsets[1 + d + i]
            pen_inter[a:a + p.shape[0], a:a + p.shape[0]] = p
        self.penalties = [pen_main, pen_inter] if inter_pen else [pen_main]

    def design(self, phi: np.ndarray) -> np.ndarray:
        if self.d == 1:
            return self.margins[0].design(phi[:, 0])
        if self.d == 2:
            return _rowwise_kron(self.margins[0].design(phi[:, 0]),
                                 self.margins[1].design(phi[:, 1]))
        z = (phi - self.loc) / np.where(self.scale > 0, self.scale, 1.0)
        cols = [np.ones((phi.shape[0], 1)), z]
        for j, (m, u) in enumerate(zip(self.mains, self.main_proj)):
            cols.append(m.design(phi[:, j]) @ u)
        for (j, k, mj, mk), (zj, zk) in zip(self.inter, self.inter_proj):
            cols.append(_rowwise_kron(mj.design(phi[:, j]) @ zj, mk.design(phi[:, k]) @ zk))
        return np.hstack(cols)


def _gcv_fit(x: np.ndarray, y: np.ndarray, penalties, grid):
    """Minimize GCV over log10 smoothing parameters; return (beta, lambdas, gcv, edf)."""
    n = x.shape[0]
    xtx = x.T @ x
    xty = x.T @ y
    yty = y @ y
    norm = np.linalg.norm(xtx)
    pens = [p * (norm / np.linalg.norm(p)) for p in penalties]
    ridge = 1e-12 * np.trace(xtx) / xtx.shape[0]

    def solve(loglam):
        a = xtx + sum(10.0 ** l * p for l, p in zip(loglam, pens))
        a[np.diag_indices_from(a)] += ridge
        try:
            c = linalg.cho_factor(a)
        except linalg.LinAlgError:
            return None
        beta = linalg.cho_solve(c, xty)
        edf = np.trace(linalg.cho_solve(c, xtx))
        rss = max(yty - 2.0 * beta @ xty + beta @ xtx @ beta, 0.0)
        return beta, edf, rss

    def gcv(loglam):
        out = solve(loglam)
        if out is None:
            return np.inf
        _, edf, rss = out
        denom = max(n - edf, 1e-8)
        return n * rss / denom ** 2

    lo, hi = grid
    axis = np.arange(lo, hi + 0.5, 1.0)
    if len(pens) == 1:
        cands = [(a,) for a in axis]
    else:
        cands = [(a, b) for a in axis for b in axis]
        if len(pens) > 2:
            cands = [c + (c[-1],) * (len(pens) - 2) for c in cands]
    scores = [gcv(c) for c in cands]
    start = np.array(cands[int(np.argmin(scores))], dtype=float)
    res = optimize.minimize(lambda v: gcv(np.clip(v, lo - 4, hi + 4)), start,
                            method="Nelder-Mead",
                            options={"xatol": 0.05, "fatol": 1e-10, "maxiter": 200})
    best = np.clip(res.x, lo - 4, hi + 4) if res.fun <= min(scores) else start
    out = solve(best)
    if out is None:
        raise np.linalg.LinAlgError("penalized normal equations are singular")
    beta, edf, _ = out
    return beta, 10.0 ** best, gcv(best), edf


def fit_conditional_inb(inb, phi_draws, config: SmootherConfig | None = None) -> ConditionalInb:
    """Regress each INB column on the focal-parameter draws.

    Parameters
    ----------
    inb : InbDraws or ndarray (S,) / (S, T-1)
    phi_draws : ndarray (S, d)
        Focal-parameter columns of the PSA sample.
    config : SmootherConfig, optional

    Raises
    ------
    ValueError
        If there are no focal parameters, fewer than two draws, or the
        intercept/linear block is rank-deficient.
    """
    cfg = config or SmootherConfig()
    y_all = getattr(inb, "values", inb)
    y_all = np.asarray(y_all, dtype=float)
    if y_all.ndim == 1:
        y_all = y_all[:, None]
    phi = np.asarray(phi_draws, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    s, d = phi.shape
    if d == 0:
        raise ValueError("no focal parameters: the conditional expectation is undefined")
    if s < 2 or y_all.shape[0] != s:
        raise ValueError("need >= 2 draws with matching INB and focal rows")
    lin = np.column_stack([np.ones(s), phi - phi.mean(axis=0)])
    if np.linalg.matrix_rank(lin) < d + 1:
        raise ValueError("focal parameters are collinear or constant: rank-deficient basis")

    if cfg.fit_size is not None:
        n_fit = min(cfg.fit_size, s)
    else:
        n_fit = s if d <= 2 else min(cfg.fit_size_high_d, s)
    basis = _Basis(phi, cfg)
    x_fit = basis.design(phi[:n_fit])
    x_all = x_fit if n_fit == s else basis.design(phi)
    fitted = np.empty_like(y_all)
    lambdas, scores, edfs = [], [], []
    for c in range(y_all.shape[1]):
        beta, lam, score, edf = _gcv_fit(x_fit, y_all[:n_fit, c], basis.penalties,
                                         cfg.log10_lambda_grid)
        fitted[:, c] = x_all @ beta
        lambdas.append(lam.tolist())
        scores.append(float(score))
        edfs.append(float(edf))
    # re-absorb the intercept over all rows
    fitted += y_all.mean(axis=0) - fitted.mean(axis=0)
    record = {
        "focal_dimension": d,
        "basis_columns": x_fit.shape[1],
        "fit_rows": n_fit,
        "lambdas": lambdas,
        "gcv": scores,
        "edf": edfs,
    }
    return conditional_from_fitted(fitted, record)


def conditional_from_fitted(fitted, record: dict | None = None) -> ConditionalInb:
    """Wrap externally computed fitted values (one column per non-reference arm)."""
    fitted = np.asarray(fitted, dtype=float)
    if fitted.ndim == 1:
        fitted = fitted[:, None]
    if fitted.shape[0] < 2:
        raise ValueError("need at least two fitted values")
    cov = np.atleast_2d(np.cov(fitted, rowvar=False, ddof=1))
    return ConditionalInb(fitted, fitted.mean(axis=0), cov, dict(record or {}))


def evppi(cond) -> float:
    """Expected value of partial perfect information from fitted values."""
    x = cond.fitted if isinstance(cond, ConditionalInb) else np.asarray(cond, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.size == 0:
        raise ValueError("no fitted values")
    best = np.maximum(x.max(axis=1), 0.0).mean()
    return float(max(best - max(x.mean(axis=0).max(), 0.0), 0.0))
