"""Incremental net benefit and its first two moments."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["InbDraws", "InbMoments", "compute_inb", "inb_moments"]


@dataclass(eq=False)
class InbDraws:
    values: np.ndarray            # S x (T-1)
    reference_arm: int
    arm_labels: tuple[int, ...]   # arm index of each column

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if not np.all(np.isfinite(self.values)):
            raise ValueError("incremental net benefit contains non-finite entries")


@dataclass(eq=False)
class InbMoments:
    mean: np.ndarray              # (T-1,)
    covariance: np.ndarray        # (T-1, T-1)

    @property
    def variance(self) -> float:
        """Scalar variance for the dual-decision case."""
        if self.covariance.shape != (1, 1):
            raise ValueError("scalar variance only defined for two arms")
        return float(self.covariance[0, 0])


def compute_inb(nb, reference_arm: int | None = None) -> InbDraws:
    """Net benefit of each non-reference arm minus the reference arm.

    ``reference_arm`` is 0-based and defaults to the last arm.
    """
    nb = np.atleast_2d(np.asarray(nb, dtype=float))
    t = nb.shape[1]
    if t < 2:
        raise ValueError("need at least two arms to form incremental net benefit")
    if reference_arm is None:
        reference_arm = t - 1
    if not 0 <= reference_arm < t:
        raise ValueError(f"reference arm {reference_arm} out of range for {t} arms")
    others = tuple(a for a in range(t) if a != reference_arm)
    values = nb[:, others] - nb[:, [reference_arm]]
    return InbDraws(values, reference_arm, others)


def inb_moments(inb) -> InbMoments:
    values = inb.values if isinstance(inb, InbDraws) else np.asarray(inb, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    if values.shape[0] < 2:
        raise ValueError("need at least two draws for a sample covariance")
    cov = np.atleast_2d(np.cov(values, rowvar=False, ddof=1))
    return InbMoments(values.mean(axis=0), cov)
