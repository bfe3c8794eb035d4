"""Scoring statistics for probabilistic spatial predictions.

Five statistics: MAE, RMSE, mean Gaussian CRPS, mean interval score at
level 1 - alpha, and empirical interval coverage. A report bundles them
with test count and phase timings and serializes to a flat key-value
text block or a table row in the order MAE, RMSE, CRPS, INT, COV,
time-minutes.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm

from .errors import ParameterError

TABLE_COLUMNS = ("MAE", "RMSE", "CRPS", "INT", "COV", "time-minutes")


def _paired(truth, other, name):
    truth = np.asarray(truth, dtype=float)
    other = np.asarray(other, dtype=float)
    if truth.shape != other.shape or truth.ndim != 1 or truth.size == 0:
        raise ParameterError(
            f"truth and {name} must be equal-length nonempty vectors, "
            f"got {truth.shape} and {other.shape}"
        )
    return truth, other


def mae(truth, pred) -> float:
    """Mean absolute error."""
    truth, pred = _paired(truth, pred, "pred")
    return float(np.mean(np.abs(truth - pred)))


def rmse(truth, pred) -> float:
    """Root mean squared error."""
    truth, pred = _paired(truth, pred, "pred")
    return float(np.sqrt(np.mean((truth - pred) ** 2)))


def crps_gaussian(truth, mean, variance) -> float:
    """Mean continuous ranked probability score under Gaussian forecasts.

    Per point, with s = sqrt(variance) and z = (y - mean)/s:

        CRPS = s * [ z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi) ]

    Parameters
    ----------
    truth, mean, variance : (n,) arrays
        ``variance`` must be strictly positive.
    """
    truth, mean = _paired(truth, mean, "mean")
    variance = np.asarray(variance, dtype=float)
    if variance.shape != truth.shape:
        raise ParameterError("variance must match truth in length")
    if np.any(variance <= 0):
        raise ParameterError("CRPS requires strictly positive variances")
    s = np.sqrt(variance)
    z = (truth - mean) / s
    per_point = s * (z * (2.0 * norm.cdf(z) - 1.0) + 2.0 * norm.pdf(z) - 1.0 / np.sqrt(np.pi))
    return float(np.mean(per_point))


def interval_score(truth, lo, hi, alpha: float = 0.05) -> float:
    """Mean interval score of central (1 - alpha) prediction intervals.

    Per point: (hi - lo) + (2/alpha)(lo - y) if y < lo,
    plus (2/alpha)(y - hi) if y > hi.
    """
    truth, lo = _paired(truth, lo, "lo")
    _, hi = _paired(truth, hi, "hi")
    if not 0 < alpha < 1:
        raise ParameterError(f"alpha must be in (0, 1), got {alpha}")
    if np.any(lo > hi):
        raise ParameterError("intervals must satisfy lo <= hi")
    width = hi - lo
    below = np.where(truth < lo, lo - truth, 0.0)
    above = np.where(truth > hi, truth - hi, 0.0)
    return float(np.mean(width + (2.0 / alpha) * (below + above)))


def coverage(truth, lo, hi) -> float:
    """Fraction of truths inside [lo, hi], endpoints inclusive."""
    truth, lo = _paired(truth, lo, "lo")
    _, hi = _paired(truth, hi, "hi")
    if np.any(lo > hi):
        raise ParameterError("intervals must satisfy lo <= hi")
    return float(np.mean((truth >= lo) & (truth <= hi)))


@dataclass
class MetricsReport:
    """The five statistics plus test count and phase timings."""

    mae: float
    rmse: float
    crps: float
    int_score: float
    coverage: float
    n_test: int
    timings: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.coverage <= 1:
            raise ParameterError(f"coverage must be in [0, 1], got {self.coverage}")
        # Power-mean inequality; a violation means mismatched inputs.
        if self.rmse < self.mae - 1e-12 * max(1.0, self.mae):
            raise ParameterError(f"rmse {self.rmse} < mae {self.mae}")

    def total_seconds(self) -> float:
        return float(sum(self.timings.values()))

    def to_text(self) -> str:
        lines = [
            f"mae: {self.mae:.6f}",
            f"rmse: {self.rmse:.6f}",
            f"crps: {self.crps:.6f}",
            f"int: {self.int_score:.6f}",
            f"cov: {self.coverage:.6f}",
            f"n_test: {self.n_test}",
        ]
        for key in sorted(self.timings):
            lines.append(f"{key}: {self.timings[key]:.3f}")
        return "\n".join(lines) + "\n"

    def table_row(self) -> list:
        return [self.mae, self.rmse, self.crps, self.int_score, self.coverage,
                self.total_seconds() / 60.0]

    def table_csv(self) -> str:
        vals = ",".join(f"{v:.6f}" for v in self.table_row())
        return ",".join(TABLE_COLUMNS) + "\n" + vals + "\n"


def evaluate(truth, prediction, n_test: int | None = None,
             timings: dict | None = None) -> MetricsReport:
    """Score a PosteriorPrediction against held-out truth."""
    alpha = 1.0 - prediction.level
    return MetricsReport(
        mae=mae(truth, prediction.mean),
        rmse=rmse(truth, prediction.mean),
        crps=crps_gaussian(truth, prediction.mean, np.maximum(prediction.variance, 1e-300)),
        int_score=interval_score(truth, prediction.lo, prediction.hi, alpha=alpha),
        coverage=coverage(truth, prediction.lo, prediction.hi),
        n_test=n_test if n_test is not None else len(np.asarray(truth)),
        timings=timings or {},
    )
