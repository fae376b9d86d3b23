"""Health-economic model abstraction and the two built-in models.

Both built-in models are jointly Gaussian in their parameters and observe
the focal parameters through linear-Gaussian study data, so posterior
updating is exact (Kalman form) rather than MCMC.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .psa import compute_inb

__all__ = [
    "ModelSpec",
    "StudyDesign",
    "ParameterDraws",
    "Dataset",
    "PosteriorSampler",
    "bk_model",
    "normal_toy_model",
    "get_model",
    "study_design",
    "sample_prior",
    "net_benefit",
    "sample_data",
    "posterior_update",
    "posterior_inb_draws",
    "conditional_moments",
    "MODEL_IDS",
]


def _checked_cholesky(cov: np.ndarray, what: str) -> np.ndarray:
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"{what} is not positive definite") from exc


@dataclass(eq=False)
class ModelSpec:
    """A Gaussian-prior health-economic model.

    ``reference_arm`` is a 0-based arm index; incremental net benefit is
    taken as ``NB_t - NB_ref`` for every other arm.
    """

    name: str
    parameter_names: tuple[str, ...]
    prior_mean: np.ndarray
    prior_cov: np.ndarray
    arm_count: int
    willingness_to_pay: float
    nb_function: Callable[[np.ndarray, float], np.ndarray]
    reference_arm: int | None = None
    # exercise id -> (focal indices, data covariance over those indices)
    exercises: dict = field(default_factory=dict)

    def __post_init__(self):
        self.prior_mean = np.asarray(self.prior_mean, dtype=float)
        self.prior_cov = np.asarray(self.prior_cov, dtype=float)
        p = len(self.parameter_names)
        if self.arm_count < 2:
            raise ValueError("a decision model needs at least two arms")
        if self.willingness_to_pay < 0:
            raise ValueError("willingness to pay must be non-negative")
        if self.prior_mean.shape != (p,) or self.prior_cov.shape != (p, p):
            raise ValueError("prior mean/covariance do not match parameter names")
        if not np.allclose(self.prior_cov, self.prior_cov.T):
            raise ValueError("prior covariance is not symmetric")
        if self.reference_arm is None:
            self.reference_arm = self.arm_count - 1
        if not 0 <= self.reference_arm < self.arm_count:
            raise ValueError(f"reference arm {self.reference_arm} out of range")
        self._prior_chol = _checked_cholesky(self.prior_cov, "prior covariance")

    @property
    def n_parameters(self) -> int:
        return len(self.parameter_names)

    def with_wtp(self, wtp: float) -> "ModelSpec":
        return ModelSpec(self.name, self.parameter_names, self.prior_mean, self.prior_cov,
                         self.arm_count, wtp, self.nb_function, self.reference_arm,
                         self.exercises)


@dataclass(eq=False)
class StudyDesign:
    """One data-collection exercise at a fixed sample size.

    Each participant contributes one k-vector observation centred on the
    focal parameters with covariance built from ``data_sd`` and
    ``data_correlation``.
    """

    exercise_id: int
    focal: tuple[int, ...]
    data_sd: np.ndarray
    data_correlation: np.ndarray
    sample_size: int = 0

    def __post_init__(self):
        self.focal = tuple(int(i) for i in self.focal)
        self.data_sd = np.atleast_1d(np.asarray(self.data_sd, dtype=float))
        self.data_correlation = np.atleast_2d(np.asarray(self.data_correlation, dtype=float))
        k = len(self.focal)
        if k == 0:
            raise ValueError("a study must inform at least one parameter")
        if self.data_sd.shape != (k,) or self.data_correlation.shape != (k, k):
            raise ValueError("data SD/correlation do not match the focal parameters")
        if np.any(self.data_sd <= 0):
            raise ValueError("data standard deviations must be positive")
        if self.sample_size < 0:
            raise ValueError(f"negative sample size {self.sample_size}")
        _checked_cholesky(self.data_cov, "data covariance")

    @property
    def data_dimension(self) -> int:
        return len(self.focal)

    @property
    def data_cov(self) -> np.ndarray:
        return self.data_correlation * np.outer(self.data_sd, self.data_sd)

    def with_n(self, n: int) -> "StudyDesign":
        return StudyDesign(self.exercise_id, self.focal, self.data_sd,
                           self.data_correlation, int(n))


@dataclass(eq=False)
class ParameterDraws:
    values: np.ndarray
    parameter_names: tuple[str, ...]
    seed: object = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[0] == 0:
            raise ValueError("parameter draws must be a non-empty S x P table")
        if self.values.shape[1] != len(self.parameter_names):
            raise ValueError("column count does not match parameter names")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("parameter draws contain non-finite entries")

    def columns(self, idx) -> np.ndarray:
        return self.values[:, list(idx)]


@dataclass(eq=False)
class Dataset:
    observations: np.ndarray
    design: StudyDesign
    generating_phi: np.ndarray


@dataclass(eq=False)
class PosteriorSampler:
    """Gaussian posterior over the full parameter vector."""

    mean: np.ndarray
    cov: np.ndarray
    parameter_names: tuple[str, ...]

    def draw(self, m: int, seed=None) -> np.ndarray:
        rng = np.random.default_rng(seed)
        w, v = np.linalg.eigh(self.cov)
        factor = v * np.sqrt(np.clip(w, 0.0, None))
        z = rng.standard_normal((m, len(self.mean)))
        return self.mean + z @ factor.T


# ---------------------------------------------------------------------------
# built-in models

BK_MEANS = [10000, 0.1, 5.2, 4000, 0.7, 0.3, 3, 0.25, -0.1, 0.5,
            15000, 0.08, 6.1, 0.8, 0.3, 3, 0.2, -0.1, 0.5]
BK_SDS = [10, 0.02, 1, 2000, 0.1, 0.1, 0.5, 0.1, 0.02, 0.2,
          10, 0.02, 1, 0.1, 0.05, 1, 0.05, 0.02, 0.2]
BK_RHO = 0.6
# 0-based indices of the correlated blocks (theta5, theta7, theta14, theta16)
# and (theta6, theta15)
_BK_BLOCK_A = (4, 6, 13, 15)
_BK_BLOCK_B = (5, 14)
# data SDs for the observable parameters, keyed by 0-based index
_BK_DATA_SD = {4: 0.2, 13: 0.2, 6: 1.0, 15: 2.0, 5: 0.2, 14: 0.2}
_BK_EXERCISES = {
    1: (4, 13),
    2: (5, 14),
    3: (6, 15),
    4: (4, 5, 13, 14),
    5: (4, 5, 6, 13, 14, 15),
}


def _bk_net_benefit(theta: np.ndarray, wtp: float, duplicate: bool = False) -> np.ndarray:
    t = theta.T
    e1 = t[4] * t[5] * t[6] + t[7] * t[8] * t[9]
    e2 = t[13] * t[14] * t[15] + t[16] * t[17] * t[18]
    c1 = t[0] + t[1] * t[2] * t[3]
    c2 = t[10] + t[11] * t[12] * t[3]
    nb1 = wtp * e1 - c1
    nb2 = wtp * e2 - c2
    cols = [nb1, nb2, nb2] if duplicate else [nb1, nb2]
    return np.column_stack(cols)


def _bk_data_correlation(focal) -> np.ndarray:
    # Data correlation mirrors the prior blocks: 0.6 within a block, 0 across.
    k = len(focal)
    corr = np.eye(k)
    for a in range(k):
        for b in range(k):
            if a == b:
                continue
            ia, ib = focal[a], focal[b]
            same_a = ia in _BK_BLOCK_A and ib in _BK_BLOCK_A
            same_b = ia in _BK_BLOCK_B and ib in _BK_BLOCK_B
            if same_a or same_b:
                corr[a, b] = BK_RHO
    return corr


def bk_model(wtp: float = 100_000.0, arms: int = 2, reference_arm: int | None = None) -> ModelSpec:
    """Brennan-Kharroubi two-treatment model.

    ``arms=3`` appends a third arm whose net benefit duplicates arm 2; it
    exists to check the multi-decision machinery against the dual answer.
    """
    if arms not in (2, 3):
        raise ValueError("the BK model supports 2 arms or the 3-arm duplicate variant")
    sds = np.asarray(BK_SDS, dtype=float)
    corr = np.eye(19)
    for block in (_BK_BLOCK_A, _BK_BLOCK_B):
        for i in block:
            for j in block:
                if i != j:
                    corr[i, j] = BK_RHO
    cov = corr * np.outer(sds, sds)
    exercises = {}
    for ex, focal in _BK_EXERCISES.items():
        exercises[ex] = (focal, np.array([_BK_DATA_SD[i] for i in focal]),
                         _bk_data_correlation(focal))
    dup = arms == 3

    def nb(theta, lam):
        return _bk_net_benefit(theta, lam, duplicate=dup)

    return ModelSpec(
        name="bk",
        parameter_names=tuple(f"theta{i}" for i in range(1, 20)),
        prior_mean=np.asarray(BK_MEANS, dtype=float),
        prior_cov=cov,
        arm_count=arms,
        willingness_to_pay=wtp,
        nb_function=nb,
        reference_arm=reference_arm,
        exercises=exercises,
    )


def normal_toy_model(mu0: float = 0.0, sigma0: float = 1.0, sigma_d: float = 1.0) -> ModelSpec:
    """One-parameter conjugate model: INB = theta, theta ~ N(mu0, sigma0^2),
    observations x_i ~ N(theta, sigma_d^2)."""
    if sigma0 <= 0 or sigma_d <= 0:
        raise ValueError("toy model standard deviations must be positive")

    def nb(theta, lam):
        return np.column_stack([theta[:, 0], np.zeros(len(theta))])

    return ModelSpec(
        name="normal-toy",
        parameter_names=("theta",),
        prior_mean=np.array([mu0]),
        prior_cov=np.array([[sigma0 ** 2]]),
        arm_count=2,
        willingness_to_pay=1.0,
        nb_function=nb,
        exercises={1: ((0,), np.array([sigma_d]), np.eye(1))},
    )


MODEL_IDS = ("bk", "normal-toy")


def get_model(model_id: str, **kwargs) -> ModelSpec:
    if model_id == "bk":
        return bk_model(**kwargs)
    if model_id == "normal-toy":
        return normal_toy_model(**kwargs)
    raise ValueError(f"unknown model {model_id!r}")


def study_design(spec: ModelSpec, exercise: int, n: int = 0) -> StudyDesign:
    if exercise not in spec.exercises:
        raise ValueError(f"unknown exercise {exercise} for model {spec.name!r}")
    focal, sd, corr = spec.exercises[exercise]
    return StudyDesign(exercise, focal, sd, corr, n)


# ---------------------------------------------------------------------------
# operations

def sample_prior(spec: ModelSpec, s: int, seed=None) -> ParameterDraws:
    if s < 2:
        raise ValueError(f"need at least 2 PSA draws, got {s}")
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((s, spec.n_parameters))
    values = spec.prior_mean + z @ spec._prior_chol.T
    return ParameterDraws(values, spec.parameter_names, seed)


def net_benefit(draws, spec: ModelSpec) -> np.ndarray:
    """S x T net-benefit table for parameter draws (``ParameterDraws`` or array)."""
    values = draws.values if isinstance(draws, ParameterDraws) else np.atleast_2d(draws)
    if values.shape[1] != spec.n_parameters:
        raise ValueError(
            f"draws have {values.shape[1]} columns, model expects {spec.n_parameters}")
    return spec.nb_function(values, spec.willingness_to_pay)


def sample_data(design: StudyDesign, phi_value, seed=None) -> Dataset:
    phi = np.atleast_1d(np.asarray(phi_value, dtype=float))
    if phi.shape != (design.data_dimension,):
        raise ValueError(f"phi has dimension {phi.size}, design expects {design.data_dimension}")
    rng = np.random.default_rng(seed)
    chol = np.linalg.cholesky(design.data_cov)
    z = rng.standard_normal((design.sample_size, design.data_dimension))
    return Dataset(phi + z @ chol.T, design, phi)


def posterior_update(spec: ModelSpec, design: StudyDesign, data: Dataset) -> PosteriorSampler:
    """Exact linear-Gaussian update of the full parameter vector."""
    x = np.asarray(data.observations, dtype=float)
    n = x.shape[0]
    if n != design.sample_size:
        raise ValueError(f"dataset has {n} rows, design says {design.sample_size}")
    if n and x.shape[1] != design.data_dimension:
        raise ValueError("dataset columns do not match the design")
    if max(design.focal) >= spec.n_parameters:
        raise ValueError("design focal index outside the model")
    m, p = spec.prior_mean, spec.prior_cov
    if n == 0:
        return PosteriorSampler(m.copy(), p.copy(), spec.parameter_names)
    f = list(design.focal)
    xbar = x.mean(axis=0)
    ph = p[:, f]                              # P H'
    innov_cov = p[np.ix_(f, f)] + design.data_cov / n
    gain = np.linalg.solve(innov_cov, ph.T).T
    mean = m + gain @ (xbar - m[f])
    cov = p - gain @ ph.T
    cov = 0.5 * (cov + cov.T)
    return PosteriorSampler(mean, cov, spec.parameter_names)


def posterior_inb_draws(sampler: PosteriorSampler, spec: ModelSpec, m: int, seed=None) -> np.ndarray:
    """M x (T-1) incremental net benefit draws under the posterior."""
    if m < 2:
        raise ValueError(f"need at least 2 posterior draws, got {m}")
    theta = sampler.draw(m, seed)
    return compute_inb(net_benefit(theta, spec), spec.reference_arm).values


def conditional_moments(spec: ModelSpec, focal, phi_values):
    """Prior mean rows and shared covariance of theta given the focal block.

    Returns ``(means, cov)`` with ``means`` shaped (R, P) for R rows of
    ``phi_values``; the focal coordinates are pinned to the given values.
    """
    f = list(focal)
    phi = np.atleast_2d(np.asarray(phi_values, dtype=float))
    m, p = spec.prior_mean, spec.prior_cov
    gain = np.linalg.solve(p[np.ix_(f, f)], p[f, :]).T
    means = m + (phi - m[f]) @ gain.T
    cov = p - gain @ p[f, :]
    cov = 0.5 * (cov + cov.T)
    cov[f, :] = 0.0
    cov[:, f] = 0.0
    means[:, f] = phi
    return means, cov
