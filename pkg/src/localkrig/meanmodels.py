"""Detrending mean functions: constant, linear-with-interaction, smoother.

The Gaussian process models residuals after one of three trends is
removed: a constant (the training sample mean), an ordinary least
squares fit on ``[1, x1, x2, x1*x2]``, or a kernel smoother over the
observation grid. ``detrend`` and ``retrend`` are pointwise inverses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import DataError, ParameterError


@dataclass(frozen=True)
class GridSpec:
    """Affine map between coordinates and fractional grid indices."""

    x0: float
    dx: float
    y0: float
    dy: float
    rows: int
    cols: int

    @classmethod
    def from_axes(cls, x_axis, y_axis) -> "GridSpec":
        x_axis = np.asarray(x_axis, dtype=float)
        y_axis = np.asarray(y_axis, dtype=float)
        dx = float(x_axis[1] - x_axis[0]) if x_axis.size > 1 else 1.0
        dy = float(y_axis[1] - y_axis[0]) if y_axis.size > 1 else 1.0
        return cls(float(x_axis[0]), dx, float(y_axis[0]), dy, y_axis.size, x_axis.size)

    def to_cells(self, locations) -> tuple:
        """Fractional (col, row) indices of coordinate pairs."""
        locations = np.asarray(locations, dtype=float)
        return (locations[:, 0] - self.x0) / self.dx, (locations[:, 1] - self.y0) / self.dy


@dataclass(frozen=True)
class ConstantMean:
    """Trend equal to the training sample mean."""

    c: float
    variant = "constant"

    def predict(self, locations) -> np.ndarray:
        locations = np.asarray(locations, dtype=float)
        return np.full(locations.shape[0], self.c)


@dataclass(frozen=True)
class LinearMean:
    """Ordinary least squares trend on ``[1, x1, x2, x1*x2]``."""

    beta: np.ndarray
    variant = "linear"

    def predict(self, locations) -> np.ndarray:
        return _design(np.asarray(locations, dtype=float)) @ self.beta


@dataclass(frozen=True)
class SmootherMean:
    """Kernel-smoothed field over the observation grid.

    The smoothed field lives on grid cells; off-grid locations are
    evaluated by bilinear interpolation, with coordinates outside the
    grid clamped to its edge.
    """

    spec: GridSpec
    field: np.ndarray
    bandwidth: float
    squared: bool = False
    variant = "smoother"

    def predict(self, locations) -> np.ndarray:
        fc, fr = self.spec.to_cells(locations)
        fc = np.clip(fc, 0.0, self.spec.cols - 1.0)
        fr = np.clip(fr, 0.0, self.spec.rows - 1.0)
        c0 = np.clip(np.floor(fc).astype(int), 0, self.spec.cols - 2 if self.spec.cols > 1 else 0)
        r0 = np.clip(np.floor(fr).astype(int), 0, self.spec.rows - 2 if self.spec.rows > 1 else 0)
        c1 = np.minimum(c0 + 1, self.spec.cols - 1)
        r1 = np.minimum(r0 + 1, self.spec.rows - 1)
        wc = fc - c0
        wr = fr - r0
        F = self.field
        return ((1 - wr) * (1 - wc) * F[r0, c0] + (1 - wr) * wc * F[r0, c1]
                + wr * (1 - wc) * F[r1, c0] + wr * wc * F[r1, c1])


def _design(locations: np.ndarray) -> np.ndarray:
    if locations.ndim != 2 or locations.shape[1] != 2:
        raise ParameterError(f"locations must be (n, 2), got shape {locations.shape}")
    x1, x2 = locations[:, 0], locations[:, 1]
    return np.column_stack([np.ones(len(x1)), x1, x2, x1 * x2])


def fit_constant(responses) -> ConstantMean:
    """Fit the constant trend: the sample mean of the responses."""
    responses = np.asarray(responses, dtype=float)
    if responses.size == 0:
        raise DataError("cannot fit a mean to zero responses")
    return ConstantMean(c=float(responses.mean()))


def fit_linear(locations, responses) -> LinearMean:
    """Fit the linear-with-interaction trend by ordinary least squares.

    Parameters
    ----------
    locations : (n, 2) array
    responses : (n,) array

    Raises
    ------
    DataError
        If n < 4 or the design matrix is rank deficient.
    """
    locations = np.asarray(locations, dtype=float)
    responses = np.asarray(responses, dtype=float)
    Z = _design(locations)
    if len(responses) < 4:
        raise DataError(f"linear trend needs at least 4 points, got {len(responses)}")
    beta, _, rank, _ = np.linalg.lstsq(Z, responses, rcond=None)
    if rank < 4:
        raise DataError("degenerate design: [1, x1, x2, x1*x2] is rank deficient")
    return LinearMean(beta=beta)


def _offset_kernel(rows: int, cols: int, bandwidth: float, squared: bool) -> np.ndarray:
    dr = np.arange(-(rows - 1), rows)[:, None]
    dc = np.arange(-(cols - 1), cols)[None, :]
    d = np.sqrt(dr * dr + dc * dc) / bandwidth
    return np.exp(-(d * d)) if squared else np.exp(-d)


def fit_smoother(field, spec: GridSpec, bandwidth: float = 25.0,
                 squared: bool = False, method: str = "fft") -> SmootherMean:
    """Fit the kernel smoother trend over an observation grid.

    The smoothed value at grid cell ``g`` is the weighted average of the
    observed cells, with weight ``exp(-dist / bandwidth)`` and ``dist``
    the Euclidean distance in grid-cell units. Missing cells get zero
    weight in both numerator and denominator. ``squared=True`` switches
    the exponent to ``-(dist / bandwidth)**2``.

    Parameters
    ----------
    field : (rows, cols) array
        Observed values with NaN marking missing cells.
    spec : GridSpec
        Coordinate mapping for later off-grid evaluation.
    bandwidth : float
        Smoother length scale in grid-cell units.
    squared : bool
        Use the squared-distance exponent instead of the plain distance.
    method : str
        ``"fft"`` (grid convolution) or ``"direct"`` (reference double
        loop; cost grows with the square of the cell count).

    Raises
    ------
    DataError
        If every cell is missing.
    """
    field = np.asarray(field, dtype=float)
    if field.shape != (spec.rows, spec.cols):
        raise DataError(f"field shape {field.shape} does not match grid spec "
                        f"({spec.rows}, {spec.cols})")
    obs = np.isfinite(field)
    if not obs.any():
        raise DataError("cannot fit a smoother: all grid cells are missing")
    if not (np.isfinite(bandwidth) and bandwidth > 0):
        raise ParameterError(f"bandwidth must be positive, got {bandwidth!r}")
    if method == "fft":
        R, C = field.shape
        W = _offset_kernel(R, C, bandwidth, squared)
        filled = np.where(obs, field, 0.0)
        num = fftconvolve(filled, W, mode="same")
        den = fftconvolve(obs.astype(float), W, mode="same")
        smoothed = num / den
    elif method == "direct":
        R, C = field.shape
        rr, cc = np.nonzero(obs)
        vals = field[obs]
        smoothed = np.empty((R, C))
        for r in range(R):
            for c in range(C):
                d = np.sqrt((rr - r) ** 2 + (cc - c) ** 2) / bandwidth
                w = np.exp(-(d * d)) if squared else np.exp(-d)
                smoothed[r, c] = (w * vals).sum() / w.sum()
    else:
        raise ParameterError(f"method must be 'fft' or 'direct', got {method!r}")
    return SmootherMean(spec=spec, field=smoothed, bandwidth=float(bandwidth), squared=squared)


def detrend(model, locations, responses) -> np.ndarray:
    """Residuals of the responses under a fitted trend."""
    return np.asarray(responses, dtype=float) - model.predict(locations)


def retrend(model, locations, values) -> np.ndarray:
    """Add the fitted trend back onto residual-scale values."""
    return np.asarray(values, dtype=float) + model.predict(locations)
