"""Three-parameter (shifted) lognormal fitted to a predicted quantile vector.

The offset is the local outdoor-radon estimate: it is subtracted from the
predicted quantiles before an ordinary lognormal is fitted in (z, ln-excess)
space by weighted least squares, and added back when evaluating or sampling.
All probability mass therefore lies strictly above the offset.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri

DEFAULT_LEVELS = (0.10, 0.25, 0.50, 0.75, 0.80, 0.85, 0.90, 0.95, 0.98)
# Upper percentiles count more in the fit; values are configurable and echoed
# into output metadata by callers.
DEFAULT_WEIGHTS = (1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 4.0, 4.0)


class DegenerateFitError(ValueError):
    """Quantile vector cannot support a positive-sdlog lognormal fit."""


@dataclass(frozen=True)
class ShiftedLognormal:
    meanlog: float
    sdlog: float
    offset: float

    def __post_init__(self):
        if not self.sdlog > 0:
            raise ValueError("sdlog must be > 0")
        if self.offset < 0:
            raise ValueError("offset must be >= 0")

    def quantile(self, p: float) -> float:
        if not 0.0 < p < 1.0:
            raise ValueError("p must be in (0, 1)")
        return self.offset + math.exp(self.meanlog + self.sdlog * float(ndtri(p)))

    def cdf(self, x: float) -> float:
        if x <= self.offset:
            return 0.0
        z = (math.log(x - self.offset) - self.meanlog) / self.sdlog
        return float(ndtr(z))

    def exceedance(self, threshold: float) -> float:
        return 1.0 - self.cdf(threshold)

    def mean(self) -> float:
        return self.offset + math.exp(self.meanlog + 0.5 * self.sdlog**2)

    def variance(self) -> float:
        s2 = self.sdlog**2
        return (math.exp(s2) - 1.0) * math.exp(2.0 * self.meanlog + s2)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be >= 0")
        return self.offset + np.exp(self.meanlog + self.sdlog * rng.standard_normal(n))


@dataclass(frozen=True)
class FitResult:
    dist: ShiftedLognormal
    dropped_levels: int


def fit_shifted_lognormal(
    levels, quantiles, offset: float, weights=None
) -> FitResult:
    """Weighted LS fit of ln(q - offset) against standard-normal quantiles.

    Levels whose quantile does not exceed the offset are dropped (and
    counted); at least two usable levels must remain and the fitted slope
    (sdlog) must be positive, otherwise DegenerateFitError is raised.
    """
    levels = np.asarray(levels, dtype=float)
    quantiles = np.asarray(quantiles, dtype=float)
    if levels.shape != quantiles.shape or levels.ndim != 1:
        raise ValueError("levels and quantiles must be aligned 1-d arrays")
    if np.any(levels <= 0) or np.any(levels >= 1) or np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing in (0, 1)")
    if offset < 0:
        raise ValueError("offset must be >= 0")
    if weights is None:
        if levels.size == len(DEFAULT_WEIGHTS) and np.allclose(levels, DEFAULT_LEVELS):
            weights = np.asarray(DEFAULT_WEIGHTS)
        else:
            weights = np.ones(levels.size)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != levels.shape or np.any(weights <= 0):
            raise ValueError("weights must be positive and aligned with levels")

    usable = quantiles > offset
    dropped = int(np.count_nonzero(~usable))
    if np.count_nonzero(usable) < 2:
        raise DegenerateFitError(
            f"fewer than 2 quantiles above offset {offset} ({dropped} dropped)"
        )
    z = ndtri(levels[usable])
    ell = np.log(quantiles[usable] - offset)
    w = weights[usable]
    wsum = w.sum()
    zbar = float((w * z).sum() / wsum)
    lbar = float((w * ell).sum() / wsum)
    szz = float((w * (z - zbar) ** 2).sum())
    if szz == 0.0:
        raise DegenerateFitError("degenerate abscissae (need >= 2 distinct levels)")
    slope = float((w * (z - zbar) * (ell - lbar)).sum() / szz)
    if slope <= 0.0:
        raise DegenerateFitError(f"degenerate: sdlog <= 0 (fitted {slope:.6g})")
    intercept = lbar - slope * zbar
    return FitResult(ShiftedLognormal(intercept, slope, float(offset)), dropped)
