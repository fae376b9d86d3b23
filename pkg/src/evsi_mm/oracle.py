"""Reference EVSI estimators: nested Monte Carlo and the conjugate closed form."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from . import models
from .psa import compute_inb

__all__ = ["OracleEstimate", "nested_mc_evsi", "closed_form_toy_evsi", "closed_form_toy_evppi"]


@dataclass(frozen=True)
class OracleEstimate:
    evsi: float
    se: float
    s_out: int
    m_in: int
    evaluations: int


def nested_mc_evsi(spec: models.ModelSpec, study: models.StudyDesign, s_out: int,
                   m_in: int, seed=None) -> OracleEstimate:
    """Two-level Monte Carlo EVSI.

    Outer loop: theta from the prior, one dataset of ``study.sample_size``
    participants centred on the focal block of theta. Inner loop: ``m_in``
    draws from the exact conjugate posterior, averaged per arm. The prior
    expected INB comes from the ``s_out`` outer draws, so the model is
    evaluated ``s_out * (m_in + 1)`` times.

    The inner maximum of noisy means is biased upward by roughly
    ``sd(INB | x) * 0.4 / sqrt(m_in)`` for two arms, so ``m_in`` should be
    large enough for that to sit below the outer standard error.
    """
    if s_out < 2 or m_in < 2:
        raise ValueError("outer and inner sample counts must be >= 2")
    root = np.random.SeedSequence(seed)
    prior_seed, outer_seed = root.spawn(2)
    theta = models.sample_prior(spec, s_out, prior_seed)
    prior_inb = compute_inb(models.net_benefit(theta, spec), spec.reference_arm).values
    streams = outer_seed.spawn(s_out)
    best = np.empty(s_out)
    for s in range(s_out):
        data_seed, post_seed = streams[s].spawn(2)
        phi = theta.values[s, list(study.focal)]
        data = models.sample_data(study, phi, data_seed)
        post = models.posterior_update(spec, study, data)
        inner = models.posterior_inb_draws(post, spec, m_in, post_seed)
        best[s] = max(inner.mean(axis=0).max(), 0.0)
    baseline = max(prior_inb.mean(axis=0).max(), 0.0)
    return OracleEstimate(
        evsi=float(best.mean() - baseline),
        se=float(best.std(ddof=1) / math.sqrt(s_out)),
        s_out=s_out,
        m_in=m_in,
        evaluations=s_out * (m_in + 1),
    )


def _positive_part_mean(mu0: float, s: float) -> float:
    if s <= 0:
        return max(mu0, 0.0)
    z = mu0 / s
    return s * norm.pdf(z) + mu0 * norm.cdf(z)


def closed_form_toy_evsi(mu0: float, sigma0: float, sigma_d: float, n: float) -> float:
    """Exact EVSI of the normal-normal toy model for ``n`` observations."""
    if sigma0 <= 0 or sigma_d <= 0:
        raise ValueError("standard deviations must be positive")
    if n < 0:
        raise ValueError("sample size must be non-negative")
    s2 = sigma0 ** 2 * n / (n + sigma_d ** 2 / sigma0 ** 2)
    return max(_positive_part_mean(mu0, math.sqrt(s2)) - max(mu0, 0.0), 0.0)


def closed_form_toy_evppi(mu0: float, sigma0: float) -> float:
    return max(_positive_part_mean(mu0, sigma0) - max(mu0, 0.0), 0.0)
