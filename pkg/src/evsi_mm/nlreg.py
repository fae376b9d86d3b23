"""Bayesian non-linear regression of preposterior variance on sample size.

Model, for design points (N_q, y_q) with y_q = sigma^2 - sigma^2_q:

    y_q ~ Normal(sigma_phi * N_q / (N_q + h), sigma_eps^2)
    h ~ Normal(N_max / 2, 200 * N_max), truncated at 0
    sigma_eps ~ Student-t(df, loc = sd(y) / 2, scale = sd(y)), truncated at 0

sampled by adaptive random-walk Metropolis on (log h, log sigma_eps).
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from ._backend import kernels
from .conditional import ConditionalInb, evppi
from .moment_matching import (evsi_dual, evsi_multi, project_psd, rescale_dual,
                              rescale_multi)

__all__ = [
    "DEFAULT_LEVELS",
    "PriorConfig",
    "McmcConfig",
    "VarianceObservations",
    "NlregPosterior",
    "EvsiCurve",
    "fit_variance_curve",
    "predict_sigma_x_quantiles",
    "evsi_curve",
    "fit_variance_surface_multi",
    "sigma_x_matrix",
    "evsi_curve_multi",
    "residual_diagnostics",
    "split_rhat",
]

DEFAULT_LEVELS = (0.025, 0.25, 0.5, 0.75, 0.975)
BAND_NOTE = ("bands propagate quantiles of the preposterior variance; "
             "they are not posterior credible intervals for the EVSI")


@dataclass
class PriorConfig:
    # "text": variance 200 * N_max; "code": variance 2000 * N_max
    h_variance: str = "text"
    sigma_df: float = 1.0
    n_max: float | None = None

    def h_moments(self, n_max: float) -> tuple[float, float]:
        factor = {"text": 200.0, "code": 2000.0}.get(self.h_variance)
        if factor is None:
            raise ValueError(f"unknown h prior variant {self.h_variance!r}")
        return n_max / 2.0, factor * n_max


@dataclass
class McmcConfig:
    chains: int = 4
    burn_in: int = 1000
    iterations: int = 3000
    adapt_every: int = 50
    target_acceptance: tuple[float, float] = (0.3, 0.5)
    rhat_threshold: float = 1.05


@dataclass(eq=False)
class VarianceObservations:
    n: np.ndarray
    y: np.ndarray
    sigma_phi: float

    def __post_init__(self):
        self.n = np.asarray(self.n, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.n.shape != self.y.shape or self.n.ndim != 1:
            raise ValueError("N and y must be matching vectors")
        if np.any(self.n < 1):
            raise ValueError("sample sizes must be >= 1")
        if not np.all(np.isfinite(self.y)):
            raise ValueError("non-finite variance observations")

    @classmethod
    def from_points(cls, moments_cov, points, sigma_phi, i: int = 0, j: int = 0):
        """Build element (i, j) observations from PSA covariance and variance points."""
        cov = np.atleast_2d(getattr(moments_cov, "covariance", moments_cov))
        n = [p.n for p in points]
        y = [cov[i, j] - np.atleast_2d(p.sigma)[i, j] for p in points]
        return cls(np.array(n), np.array(y), float(np.atleast_2d(sigma_phi)[i, j]))


@dataclass(eq=False)
class NlregPosterior:
    h: np.ndarray                 # chains x iterations
    sigma_eps: np.ndarray
    sigma_phi: float
    acceptance: np.ndarray        # per chain, sampling phase
    rhat: dict
    prior: dict
    degenerate: bool = False
    warnings: list = field(default_factory=list)

    @property
    def h_draws(self) -> np.ndarray:
        return self.h.ravel()

    @property
    def sigma_draws(self) -> np.ndarray:
        return self.sigma_eps.ravel()


@dataclass(eq=False)
class EvsiCurve:
    grid: np.ndarray              # G sample sizes
    levels: tuple                 # variance quantile levels
    sigma_x: np.ndarray           # L x G (trace of Sigma_X for several arms)
    evsi: np.ndarray              # L x G
    evppi: float
    note: str = BAND_NOTE
    provenance: dict = field(default_factory=dict)

    def level(self, p: float) -> np.ndarray:
        return self.evsi[list(self.levels).index(p)]


def split_rhat(chains: np.ndarray) -> float:
    """Split-chain potential scale reduction factor."""
    chains = np.atleast_2d(chains)
    half = chains.shape[1] // 2
    parts = np.vstack([chains[:, :half], chains[:, half:2 * half]])
    n = parts.shape[1]
    w = parts.var(axis=1, ddof=1).mean()
    b = n * parts.mean(axis=1).var(ddof=1)
    if w <= 0:
        return 1.0 if b <= 0 else math.inf
    var_plus = (n - 1) / n * w + b / n
    return float(math.sqrt(var_plus / w))


def _curve(n, sigma_phi, h):
    return sigma_phi * n / (n + h)


def fit_variance_curve(obs: VarianceObservations, prior: PriorConfig | None = None,
                       mcmc: McmcConfig | None = None, seed=0) -> NlregPosterior:
    """Sample the posterior of (h, sigma_eps) for one variance curve.

    ``obs.sigma_phi`` must be positive here; :func:`fit_variance_surface_multi`
    also accepts negative covariance elements.
    """
    if obs.sigma_phi <= 0:
        raise ValueError("sigma_phi must be positive")
    return _fit(obs, prior or PriorConfig(), mcmc or McmcConfig(), seed)


def _fit(obs, prior, mcmc, seed):
    q = obs.n.size
    if q < 3:
        raise ValueError(f"need at least 3 variance observations, got {q}")
    sp = float(obs.sigma_phi)
    if sp == 0 or not math.isfinite(sp):
        raise ValueError("sigma_phi must be finite and nonzero")
    n, y = np.ascontiguousarray(obs.n), np.ascontiguousarray(obs.y)
    n_max = prior.n_max if prior.n_max is not None else float(n.max())
    h_mean, h_var = prior.h_moments(n_max)
    notes = []

    sd_y = float(np.std(y, ddof=1))
    floor = 1e-9 * max(abs(sp), float(np.abs(y).max()))
    degenerate = sd_y <= floor
    if degenerate:
        notes.append("variance observations are (near) constant; sigma_eps posterior is degenerate")
        sd_y = max(floor, 1e-300)
    s_loc, s_scale, s_df = sd_y / 2.0, sd_y, float(prior.sigma_df)
    log_h_min = math.log(1e-8 * n_max)
    log_s_min = math.log(max(1e-9 * abs(sp), 1e-300))
    args = (n, y, sp, h_mean, h_var, s_loc, s_scale, s_df, log_h_min, log_s_min)

    # least-squares start
    def sse(u):
        r = y - _curve(n, sp, math.exp(u))
        return float(r @ r)

    res = optimize.minimize_scalar(sse, bounds=(log_h_min + 1e-6, math.log(1e4 * n_max)),
                                   method="bounded")
    u0 = float(res.x)
    v0 = math.log(max(math.sqrt(sse(u0) / q), s_scale * 1e-3, math.exp(log_s_min) * 10))

    total = mcmc.burn_in + mcmc.iterations
    h_out = np.empty((mcmc.chains, mcmc.iterations))
    s_out = np.empty((mcmc.chains, mcmc.iterations))
    acc = np.empty(mcmc.chains)
    for c in range(mcmc.chains):
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), c]))
        z = rng.standard_normal((total, 2))
        log_u = np.log(rng.random(total))
        jitter = rng.standard_normal(2)
        state = np.array([u0 + 0.5 * jitter[0], v0 + 0.5 * jitter[1]])
        state[0] = max(state[0], log_h_min + 1e-3)
        state[1] = max(state[1], log_s_min + 1e-3)
        trace = np.empty((total, 2))
        chol = np.diag([0.3, 0.3])
        scale = 1.0
        pos = 0
        lo, hi = mcmc.target_acceptance
        # covariance re-estimated twice so a transient start does not linger
        refits = [mcmc.burn_in // 2, 3 * mcmc.burn_in // 4]
        while pos < mcmc.burn_in:
            step = min(mcmc.adapt_every, mcmc.burn_in - pos)
            prop = np.ascontiguousarray(chol * scale)
            a = kernels.rwm_block(*args, state, prop, z[pos:pos + step],
                                  log_u[pos:pos + step], trace[pos:pos + step])
            rate = a / step
            if rate < lo:
                scale *= 0.7
            elif rate > hi:
                scale *= 1.3
            pos += step
            if refits and pos >= refits[0]:
                while refits and pos >= refits[0]:
                    refits.pop(0)
                if pos < 100:
                    continue
                emp = np.cov(trace[pos // 2:pos], rowvar=False)
                emp += 1e-10 * np.eye(2)
                try:
                    chol = np.linalg.cholesky(emp * 2.38 ** 2 / 2)
                    scale = 1.0
                except np.linalg.LinAlgError:
                    pass
        prop = np.ascontiguousarray(chol * scale)
        a = kernels.rwm_block(*args, state, prop, z[pos:], log_u[pos:], trace[pos:])
        acc[c] = a / mcmc.iterations
        h_out[c] = np.exp(trace[pos:, 0])
        s_out[c] = np.exp(trace[pos:, 1])

    rhat = {"h": split_rhat(np.log(h_out)), "sigma_eps": split_rhat(np.log(s_out))}
    if mcmc.chains > 1:
        for k, v in rhat.items():
            if not v < mcmc.rhat_threshold:
                msg = f"split R-hat for {k} is {v:.3f} (>= {mcmc.rhat_threshold})"
                notes.append(msg)
                warnings.warn(msg, RuntimeWarning, stacklevel=2)
    record = {"h_mean": h_mean, "h_var": h_var, "h_variant": prior.h_variance,
              "sigma_loc": s_loc, "sigma_scale": s_scale, "sigma_df": s_df,
              "chains": mcmc.chains, "burn_in": mcmc.burn_in,
              "iterations": mcmc.iterations, "seed": int(seed)}
    return NlregPosterior(h_out, s_out, sp, acc, rhat, record, degenerate, notes)


def predict_sigma_x_quantiles(post: NlregPosterior, sigma2_phi, n, levels=DEFAULT_LEVELS):
    """Quantiles of sigma_phi * N / (N + h) over the posterior of h.

    Returns shape (L,) for scalar ``n`` and (L, G) for a grid.
    """
    h = post.h_draws
    if h.size == 0:
        raise ValueError("empty posterior")
    n_arr = np.asarray(n, dtype=float)
    if np.any(n_arr < 0):
        raise ValueError("sample size must be non-negative")
    sp = float(sigma2_phi)
    # the curve is decreasing in h for sp > 0, so level p maps to h quantile 1 - p
    probs = [1.0 - p if sp >= 0 else p for p in levels]
    hq = np.quantile(h, probs)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = sp * n_arr[None, ...] / (n_arr[None, ...] + hq.reshape((-1,) + (1,) * n_arr.ndim))
    out = np.where(np.isnan(out), 0.0, out)
    if np.isinf(n_arr).any():
        out = np.where(np.isinf(n_arr)[None, ...], sp, out)
    return out


def evsi_curve(post: NlregPosterior, cond: ConditionalInb, mu, grid,
               levels=DEFAULT_LEVELS) -> EvsiCurve:
    """EVSI at every grid sample size for each variance-quantile level."""
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty sample-size grid")
    sp = cond.sigma2_phi
    mu = float(np.ravel(mu)[0])
    sig = predict_sigma_x_quantiles(post, sp, grid, levels)
    ev = np.empty_like(sig)
    for a in range(sig.shape[0]):
        for b in range(sig.shape[1]):
            ev[a, b] = evsi_dual(rescale_dual(cond, mu, sp, sig[a, b]), mu)
    return EvsiCurve(grid, tuple(levels), sig, ev, evppi(cond),
                     provenance={"h_prior": post.prior})


def fit_variance_surface_multi(moments_cov, points, sigma_phi, prior=None, mcmc=None,
                               seed=0) -> dict:
    """One variance-curve regression per unique element (i <= j).

    Elements whose ``sigma_phi`` entry is zero carry no information and map
    to ``None`` (their preposterior covariance is identically zero).
    """
    sigma_phi = np.atleast_2d(sigma_phi)
    k = sigma_phi.shape[0]
    if k < 1 or not points:
        raise ValueError("need variance points and a covariance matrix")
    if any(np.atleast_2d(p.sigma).shape != (k, k) for p in points):
        raise ValueError("variance points are missing covariance elements")
    prior, mcmc = prior or PriorConfig(), mcmc or McmcConfig()
    # zero relative to the prior INB spread, not to sigma_phi itself
    prior_cov = np.atleast_2d(getattr(moments_cov, "covariance", moments_cov))
    scale = max(np.abs(prior_cov).max(), np.abs(sigma_phi).max())
    fits = {}
    for i in range(k):
        for j in range(i, k):
            obs = VarianceObservations.from_points(moments_cov, points, sigma_phi, i, j)
            if abs(obs.sigma_phi) <= 1e-12 * scale:
                fits[(i, j)] = None
                continue
            elem_seed = seed if k == 1 else int(np.random.SeedSequence([int(seed), i, j])
                                                .generate_state(1)[0])
            fits[(i, j)] = _fit(obs, prior, mcmc, elem_seed)
    return fits


def sigma_x_matrix(fits: dict, sigma_phi, n: float, level: float) -> np.ndarray:
    """Assemble Sigma_X(N) from matching per-element quantile levels, PSD-projected."""
    sigma_phi = np.atleast_2d(sigma_phi)
    k = sigma_phi.shape[0]
    out = np.zeros((k, k))
    for (i, j), post in fits.items():
        if post is None:
            continue
        val = predict_sigma_x_quantiles(post, sigma_phi[i, j], n, (level,))[0]
        out[i, j] = out[j, i] = float(val)
    return project_psd(out)


def evsi_curve_multi(fits: dict, cond: ConditionalInb, mu, grid,
                     levels=DEFAULT_LEVELS) -> EvsiCurve:
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("empty sample-size grid")
    mu = np.ravel(np.asarray(mu, dtype=float))
    sig = np.empty((len(levels), grid.size))
    ev = np.empty_like(sig)
    for a, p in enumerate(levels):
        for b, n in enumerate(grid):
            sx = sigma_x_matrix(fits, cond.cov, n, p)
            sig[a, b] = np.trace(sx)
            ev[a, b] = evsi_multi(rescale_multi(cond, mu, cond.cov, sx), mu)
    note = BAND_NOTE + "; per-element quantiles are combined heuristically"
    return EvsiCurve(grid, tuple(levels), sig, ev, evppi(cond), note=note)


def residual_diagnostics(post: NlregPosterior, obs: VarianceObservations) -> dict:
    """Per-point fitted values and residuals at the posterior median of h."""
    h_med = float(np.median(post.h_draws))
    fitted = _curve(obs.n, obs.sigma_phi, h_med)
    resid = obs.y - fitted
    s_med = float(np.median(post.sigma_draws))
    return {
        "n": obs.n.copy(),
        "y": obs.y.copy(),
        "fitted": fitted,
        "residual": resid,
        "standardized": resid / s_med if s_med > 0 else np.zeros_like(resid),
    }
