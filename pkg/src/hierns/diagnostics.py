"""Sample-quality diagnostics: kernel two-sample discrepancy and power-law
fits for evaluation-cost scaling."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist, pdist

from .util import weighted_linear_fit


@dataclass
class MMDResult:
    value: float
    bandwidth: float
    n_subsample: int
    n_repeats: int
    std_over_repeats: float


def _mmd_once(a: np.ndarray, b: np.ndarray) -> tuple[float, float]:
    """Biased V-statistic squared MMD with a Gaussian kernel whose bandwidth
    is the mean pairwise distance over the combined sample."""
    combined = np.vstack([a, b])
    d = pdist(combined)
    h = float(d.mean()) if d.size else 1.0
    if h <= 0.0:
        return 0.0, 1.0  # all points identical: every kernel value is 1
    g = 0.5 / (h * h)
    kaa = np.exp(-g * cdist(a, a, "sqeuclidean")).mean()
    kbb = np.exp(-g * cdist(b, b, "sqeuclidean")).mean()
    kab = np.exp(-g * cdist(a, b, "sqeuclidean")).mean()
    return float(kaa + kbb - 2.0 * kab), h


def mmd(
    samples_a: np.ndarray,
    samples_b: np.ndarray,
    n_sub: int = 1000,
    repeats: int = 5,
    rng: np.random.Generator | None = None,
    standardize: bool = False,
) -> MMDResult:
    """Squared MMD between two sample sets, averaged over random subsamples.

    Each repeat draws up to n_sub points from each set without replacement,
    sets the bandwidth to the average pairwise L2 distance over the combined
    subsample, and evaluates the biased V-statistic. The reported value is
    clamped at zero (the estimator can be marginally negative).
    """
    a = np.atleast_2d(np.asarray(samples_a, dtype=float))
    b = np.atleast_2d(np.asarray(samples_b, dtype=float))
    if a.ndim == 2 and a.shape[0] == 1 and a.size > 1 and np.asarray(samples_a).ndim == 1:
        a = a.T
    if b.ndim == 2 and b.shape[0] == 1 and b.size > 1 and np.asarray(samples_b).ndim == 1:
        b = b.T
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ValueError("both sample sets must be non-empty")
    rng = rng if rng is not None else np.random.default_rng(0)

    if standardize:
        pooled = np.vstack([a, b])
        loc = pooled.mean(axis=0)
        scale = pooled.std(axis=0)
        scale[scale == 0] = 1.0
        a = (a - loc) / scale
        b = (b - loc) / scale

    vals = []
    bws = []
    for _ in range(repeats):
        ia = rng.choice(a.shape[0], size=min(n_sub, a.shape[0]), replace=False)
        ib = rng.choice(b.shape[0], size=min(n_sub, b.shape[0]), replace=False)
        v, h = _mmd_once(a[ia], b[ib])
        vals.append(v)
        bws.append(h)
    value = float(np.mean(vals))
    return MMDResult(
        value=max(value, 0.0),
        bandwidth=float(np.mean(bws)),
        n_subsample=min(n_sub, a.shape[0], b.shape[0]),
        n_repeats=repeats,
        std_over_repeats=float(np.std(vals)),
    )


@dataclass
class PowerLawFit:
    slope: float
    intercept: float
    stderr: float

    def ci95(self, n_points: int) -> tuple[float, float]:
        # two-sided 95% normal interval; with few points this understates
        # the width, so treat separation conservatively
        from scipy.stats import t as student_t

        dof = max(n_points - 2, 1)
        q = student_t.ppf(0.975, dof)
        return self.slope - q * self.stderr, self.slope + q * self.stderr


def fit_power_law(x: np.ndarray, y: np.ndarray) -> PowerLawFit:
    """Least-squares slope of log y against log x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValueError("power-law fit needs positive data")
    slope, intercept, stderr = weighted_linear_fit(np.log(x), np.log(y))
    return PowerLawFit(slope=slope, intercept=intercept, stderr=stderr)
