"""End-to-end EVSI-across-sample-size runs, oracle runs and design comparison."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import models, nlreg
from .conditional import ConditionalInb, SmootherConfig, fit_conditional_inb
from .moment_matching import (QuantileDesign, build_quantile_design,
                              estimate_posterior_variances)
from .oracle import OracleEstimate, nested_mc_evsi
from .psa import InbMoments, compute_inb, inb_moments

__all__ = [
    "PipelineResult",
    "DesignCurve",
    "stream",
    "seed_record",
    "run_psa",
    "run_evsi",
    "run_oracle",
    "compare_designs",
]

_PSA, _DESIGN, _MCMC, _ORACLE = 1_000_001, 1_000_002, 1_000_003, 1_000_004


def stream(seed: int, tag: int) -> int:
    """Integer sub-seed for one pipeline stage."""
    return int(np.random.SeedSequence([int(seed), tag, 0]).generate_state(1)[0])


def seed_record(seed: int) -> dict:
    """Every derived seed of a run, for the manifest."""
    return {
        "master": int(seed),
        "psa": stream(seed, _PSA),
        "design": stream(seed, _DESIGN),
        "mcmc": stream(seed, _MCMC),
        "variance_points": f"SeedSequence([{int(seed)}, q]) for q = 0..Q-1",
        "oracle": f"SeedSequence([{int(seed)}, {_ORACLE}, k]) for the k-th sample size",
    }


@dataclass(eq=False)
class PipelineResult:
    spec: models.ModelSpec
    study: models.StudyDesign
    draws: models.ParameterDraws
    moments: InbMoments
    conditional: ConditionalInb
    design: QuantileDesign
    points: list
    fits: dict                     # (i, j) -> NlregPosterior
    curve: nlreg.EvsiCurve
    budget: dict = field(default_factory=dict)

    @property
    def dual(self) -> bool:
        return self.moments.covariance.shape == (1, 1)

    @property
    def posterior(self) -> nlreg.NlregPosterior:
        return self.fits[(0, 0)]


def run_psa(spec, s, seed):
    draws = models.sample_prior(spec, s, stream(seed, _PSA))
    inb = compute_inb(models.net_benefit(draws, spec), spec.reference_arm)
    return draws, inb, inb_moments(inb)


def run_evsi(spec: models.ModelSpec, exercise: int, *, s: int = 100_000, q: int = 50,
             n_min: int = 10, n_max: int = 200, m: int = 10_000, seed: int = 0,
             grid=None, levels=nlreg.DEFAULT_LEVELS, smoother: SmootherConfig | None = None,
             prior: nlreg.PriorConfig | None = None, mcmc: nlreg.McmcConfig | None = None,
             conditional: ConditionalInb | None = None, points=None,
             workers: int = 1) -> PipelineResult:
    """PSA -> conditional INB -> moment matching -> regression -> EVSI curve.

    ``conditional`` and ``points`` let callers resume from ingested fitted
    values or variance points; skipped stages contribute no budget.
    """
    study = models.study_design(spec, exercise)
    draws, inb, moments = run_psa(spec, s, seed)
    phi = draws.columns(study.focal)
    if conditional is None:
        conditional = fit_conditional_inb(inb, phi, smoother)
    elif conditional.fitted.shape != inb.values.shape:
        raise ValueError("ingested fitted values do not match the PSA sample")
    design = build_quantile_design(phi, q, n_min, n_max, stream(seed, _DESIGN))
    simulated = points is None
    if simulated:
        points = estimate_posterior_variances(design, spec, study, m, seed, workers)
    fits = nlreg.fit_variance_surface_multi(moments, points, conditional.cov, prior, mcmc,
                                            stream(seed, _MCMC))
    if grid is None:
        grid = np.arange(n_min, n_max + 1)
    grid = np.asarray(grid, dtype=float)
    if all(f is None for f in fits.values()):
        raise ValueError("fitted INB does not vary with the focal parameters; "
                         "the variance curve cannot be fitted")
    if moments.covariance.shape == (1, 1):
        curve = nlreg.evsi_curve(fits[(0, 0)], conditional, moments.mean, grid, levels)
    else:
        curve = nlreg.evsi_curve_multi(fits, conditional, moments.mean, grid, levels)
    curve.provenance.update({"seed": seed, "q": q, "s": s, "m": m,
                             "n_min": n_min, "n_max": n_max})
    updates = len(points) if simulated else 0
    posterior_evals = sum(p.draws for p in points) if simulated else 0
    budget = {
        "psa_evaluations": s,
        "posterior_updates": updates,
        "posterior_evaluations": posterior_evals,
        "model_evaluations": s + posterior_evals,
    }
    return PipelineResult(spec, study, draws, moments, conditional, design, points, fits,
                          curve, budget)


def run_oracle(spec: models.ModelSpec, exercise: int, n_values, *, s_out: int = 2000,
               m_in: int = 2000, seed: int = 0) -> list[tuple[int, OracleEstimate]]:
    n_values = list(n_values)
    if not n_values:
        raise ValueError("oracle needs at least one sample size")
    study = models.study_design(spec, exercise)
    out = []
    for k, n in enumerate(n_values):
        est = nested_mc_evsi(spec, study.with_n(int(n)), s_out, m_in,
                             [int(seed), _ORACLE, k])
        out.append((int(n), est))
    return out


@dataclass(eq=False)
class DesignCurve:
    label: str
    grid: np.ndarray
    evsi: np.ndarray               # median-level EVSI
    cost: np.ndarray
    net_value: np.ndarray
    optimal_n: float
    optimal_net_value: float
    never_worthwhile: bool


def compare_designs(designs) -> list[DesignCurve]:
    """Net value (multiplier * EVSI - cost) per design, with the optimal N.

    ``designs`` is an iterable of ``(label, grid, evsi, fixed_cost,
    per_participant_cost, multiplier)``. Ties go to the smallest N.
    """
    designs = list(designs)
    if not designs:
        raise ValueError("need at least one design")
    ref_grid = np.asarray(designs[0][1], dtype=float)
    out = []
    for label, grid, evsi, fixed, per, mult in designs:
        grid = np.asarray(grid, dtype=float)
        if grid.shape != ref_grid.shape or not np.array_equal(grid, ref_grid):
            raise ValueError(f"design {label!r} uses a different sample-size grid")
        evsi = np.asarray(evsi, dtype=float)
        cost = fixed + per * grid
        net = mult * evsi - cost
        k = int(np.argmax(net))          # first maximum = smallest N
        out.append(DesignCurve(label, grid, evsi, cost, net, float(grid[k]),
                               float(net[k]), bool(np.all(net < 0))))
    return out
