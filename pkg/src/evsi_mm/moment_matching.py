"""Moment-matching EVSI: design, posterior variances, pooling, rescaling."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import models
from .conditional import ConditionalInb
from .psa import InbMoments

__all__ = [
    "QuantileDesign",
    "PosteriorVariancePoint",
    "RescaledDraws",
    "DesignError",
    "sqrt_sample_sizes",
    "build_quantile_design",
    "estimate_posterior_variances",
    "pooled_sigma_x",
    "rescale_dual",
    "evsi_dual",
    "matrix_sqrt_spd",
    "project_psd",
    "rescale_multi",
    "evsi_multi",
    "q_seed",
    "round_significant",
    "EXPORT_DIGITS",
]

MAX_CORRELATION = 1e-3
MAX_ATTEMPTS = 100_000
_BATCH = 1000


class DesignError(ValueError):
    """A quantile design could not be constructed."""


@dataclass(eq=False)
class QuantileDesign:
    q: int
    phi_rows: np.ndarray          # Q x d
    n_values: np.ndarray          # Q, nondecreasing
    probabilities: np.ndarray     # (1:Q)/(Q+1)
    correlations: np.ndarray      # |cor(N, phi column)| per column
    attempts: np.ndarray          # permutations drawn per column


@dataclass(eq=False)
class PosteriorVariancePoint:
    q: int
    n: int
    sigma: np.ndarray             # (T-1) x (T-1)
    draws: int = 0
    seed: tuple = ()

    @property
    def variance(self) -> float:
        return float(self.sigma[0, 0])


@dataclass(eq=False)
class RescaledDraws:
    eta: np.ndarray               # S x (T-1)
    mu: np.ndarray
    sigma_phi: np.ndarray
    sigma_x: np.ndarray


EXPORT_DIGITS = 12


def round_significant(values, digits: int = EXPORT_DIGITS) -> np.ndarray:
    """Round to the decimal precision used by the exported tables.

    Variance points are held at this precision so that a run resumed from
    an exported table refits exactly the same numbers.
    """
    arr = np.asarray(values, dtype=float)
    return np.vectorize(lambda v: float(f"{v:.{digits}g}"), otypes=[float])(arr)


def q_seed(seed, q: int):
    """Seed stream for design point ``q``; independent of evaluation order."""
    return np.random.SeedSequence([int(seed), int(q)])


def sqrt_sample_sizes(q: int, n_min: int, n_max: int) -> np.ndarray:
    """``q`` sample sizes evenly spaced on the square-root scale, truncated."""
    grid = np.linspace(np.sqrt(n_min), np.sqrt(n_max), q) ** 2
    # guard against sqrt(n)**2 landing a hair below an integer
    return np.floor(grid + 1e-9).astype(int)


def _abs_corr(n: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """|correlation| of vector ``n`` with each row of ``cols`` (B x Q)."""
    nc = n - n.mean()
    cc = cols - cols.mean(axis=1, keepdims=True)
    denom = np.sqrt((nc @ nc) * np.einsum("ij,ij->i", cc, cc))
    num = cc @ nc
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(denom > 0, np.abs(num) / denom, 0.0)
    return r


def build_quantile_design(phi_draws, q: int, n_min: int, n_max: int, seed=None) -> QuantileDesign:
    """Pair decorrelated focal quantiles with sqrt-spaced sample sizes.

    Each focal column contributes its empirical quantiles at probabilities
    ``(1:Q)/(Q+1)``; the column is re-permuted until its absolute
    correlation with the sample sizes drops below 0.001.
    """
    phi = np.asarray(phi_draws, dtype=float)
    if phi.ndim == 1:
        phi = phi[:, None]
    d = phi.shape[1]
    if q < 2:
        raise DesignError(f"design size Q={q} is below 2")
    if d >= 1 and q < 3:
        raise DesignError(f"Q={q} is too small to decorrelate {d} focal column(s)")
    if not 1 <= n_min < n_max:
        raise DesignError(f"need 1 <= N_min < N_max, got {n_min}, {n_max}")
    n_values = sqrt_sample_sizes(q, n_min, n_max)
    probs = np.arange(1, q + 1) / (q + 1)
    rng = np.random.default_rng(seed)
    rows = np.empty((q, d))
    corrs = np.zeros(d)
    attempts = np.zeros(d, dtype=int)
    nf = n_values.astype(float)
    for j in range(d):
        col = np.quantile(phi[:, j], probs)
        r = _abs_corr(nf, col[None, :])[0]
        tried = 0
        while r >= MAX_CORRELATION:
            if tried >= MAX_ATTEMPTS:
                raise DesignError(
                    f"focal column {j} could not be decorrelated from N in {MAX_ATTEMPTS} permutations")
            batch = min(_BATCH, MAX_ATTEMPTS - tried)
            perms = rng.permuted(np.broadcast_to(col, (batch, q)), axis=1)
            rs = _abs_corr(nf, perms)
            ok = np.flatnonzero(rs < MAX_CORRELATION)
            if ok.size:
                tried += int(ok[0]) + 1
                col, r = perms[ok[0]], rs[ok[0]]
            else:
                tried += batch
        rows[:, j] = col
        corrs[j] = r
        attempts[j] = tried
    return QuantileDesign(q, rows, n_values, probs, corrs, attempts)


def _one_point(spec, study, design, idx, m, seed):
    ss = q_seed(seed, idx)
    data_seed, post_seed = ss.spawn(2)
    n = int(design.n_values[idx])
    sd = study.with_n(n)
    try:
        data = models.sample_data(sd, design.phi_rows[idx], data_seed)
        post = models.posterior_update(spec, sd, data)
        inb = models.posterior_inb_draws(post, spec, m, post_seed)
    except Exception as exc:
        raise type(exc)(f"design point q={idx + 1}: {exc}") from exc
    sigma = round_significant(np.atleast_2d(np.cov(inb, rowvar=False, ddof=1)))
    return PosteriorVariancePoint(idx + 1, n, sigma, m, (int(seed), idx))


def estimate_posterior_variances(design: QuantileDesign, spec, study, m: int,
                                 seed: int = 0, workers: int = 1) -> list[PosteriorVariancePoint]:
    """One simulated dataset and one posterior update per design row.

    ``seed`` must be an integer: point ``q`` draws from the stream
    ``SeedSequence([seed, q])`` so results do not depend on ``workers``.
    """
    if m < 2:
        raise ValueError(f"need at least 2 posterior draws per point, got {m}")
    idx = range(design.q)
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(lambda i: _one_point(spec, study, design, i, m, seed), idx))
    return [_one_point(spec, study, design, i, m, seed) for i in idx]


def project_psd(mat: np.ndarray) -> np.ndarray:
    """Nearest PSD matrix by clipping negative eigenvalues at zero."""
    mat = np.atleast_2d(mat)
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    return (v * np.clip(w, 0.0, None)) @ v.T


def pooled_sigma_x(moments, points) -> np.ndarray:
    """Law-of-total-variance estimate of the preposterior covariance.

    Negative scalars are floored at zero and matrices projected to PSD.
    """
    cov = moments.covariance if isinstance(moments, InbMoments) else np.atleast_2d(moments)
    if not points:
        raise ValueError("no posterior variance points")
    sig = [np.atleast_2d(p.sigma if isinstance(p, PosteriorVariancePoint) else p) for p in points]
    if any(s.shape != cov.shape for s in sig):
        raise ValueError("variance point dimension does not match the PSA covariance")
    diff = cov - np.mean(sig, axis=0)
    if diff.shape == (1, 1):
        return np.maximum(diff, 0.0)
    return project_psd(diff)


def rescale_dual(cond, mu, sigma2_phi, sigma2_x) -> RescaledDraws:
    x = cond.fitted[:, 0] if isinstance(cond, ConditionalInb) else np.ravel(cond)
    mu = float(np.ravel(mu)[0])
    sigma2_phi, sigma2_x = float(np.ravel(sigma2_phi)[0]), float(np.ravel(sigma2_x)[0])
    if sigma2_x < 0:
        raise ValueError("preposterior variance must be non-negative")
    if sigma2_phi <= 0:
        if sigma2_x > 0:
            raise ValueError("cannot rescale draws with zero variance to a positive variance")
        eta = np.full_like(x, mu, dtype=float)
    else:
        eta = (x - mu) * np.sqrt(sigma2_x / sigma2_phi) + mu
    return RescaledDraws(eta[:, None], np.array([mu]),
                         np.array([[sigma2_phi]]), np.array([[sigma2_x]]))


def evsi_dual(eta, mu) -> float:
    e = eta.eta[:, 0] if isinstance(eta, RescaledDraws) else np.ravel(eta)
    if e.size == 0:
        raise ValueError("no rescaled draws")
    return float(np.maximum(e, 0.0).mean() - max(float(np.ravel(mu)[0]), 0.0))


def _eig_checked(mat, what):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    scale = max(np.abs(mat).max(), 1e-300)
    tol = 1e-10 * scale
    if np.abs(mat - mat.T).max() > tol:
        raise ValueError(f"{what} is not symmetric")
    w, v = np.linalg.eigh(0.5 * (mat + mat.T))
    if w.min() < -tol:
        raise ValueError(f"{what} has a negative eigenvalue {w.min():.3g}")
    return np.clip(w, 0.0, None), v, tol


def matrix_sqrt_spd(mat) -> np.ndarray:
    """Principal square root of a symmetric PSD matrix."""
    w, v, _ = _eig_checked(mat, "matrix")
    return (v * np.sqrt(w)) @ v.T


def _inverse_sqrt(mat):
    w, v, tol = _eig_checked(mat, "Sigma_phi")
    keep = w > max(tol, 1e-12 * w.max())
    if not keep.any():
        return None
    vk = v[:, keep]
    return (vk / np.sqrt(w[keep])) @ vk.T


def rescale_multi(cond, mu, sigma_phi, sigma_x) -> RescaledDraws:
    """Rescale fitted INB rows so their covariance becomes ``sigma_x``.

    A singular ``sigma_phi`` (for example two arms with identical net
    benefit) uses the pseudo-inverse square root; the centred rows lie in
    its range by construction. Only an all-zero ``sigma_phi`` paired with a
    nonzero ``sigma_x`` is rejected.
    """
    x = cond.fitted if isinstance(cond, ConditionalInb) else np.atleast_2d(cond)
    if x.shape[0] == 1 and np.ndim(cond) == 1:
        x = x.T
    mu = np.ravel(np.asarray(mu, dtype=float))
    sigma_phi = np.atleast_2d(np.asarray(sigma_phi, dtype=float))
    sigma_x = np.atleast_2d(np.asarray(sigma_x, dtype=float))
    if sigma_phi.shape != sigma_x.shape or sigma_phi.shape[0] != mu.size:
        raise ValueError("dimension mismatch between mu, Sigma_phi and Sigma_X")
    inv_root = _inverse_sqrt(sigma_phi)
    root_x = matrix_sqrt_spd(sigma_x)
    if inv_root is None:
        if np.abs(root_x).max() > 0:
            raise np.linalg.LinAlgError("Sigma_phi is zero; cannot rescale to a nonzero Sigma_X")
        eta = np.broadcast_to(mu, x.shape).copy()
    else:
        eta = (x - mu) @ inv_root @ root_x + mu
    return RescaledDraws(eta, mu, sigma_phi, sigma_x)


def evsi_multi(eta, mu) -> float:
    e = eta.eta if isinstance(eta, RescaledDraws) else np.atleast_2d(eta)
    if e.size == 0:
        raise ValueError("no rescaled draws")
    if e.ndim == 1:
        e = e[:, None]
    mu = np.ravel(np.asarray(mu, dtype=float))
    return float(np.maximum(e.max(axis=1), 0.0).mean() - max(mu.max(), 0.0))
