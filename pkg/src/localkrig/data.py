"""Gridded spatial datasets: ingestion, normalization, splits, simulation.

A dataset is a regular lon/lat grid where every cell is exactly one of
train (response observed), test (response withheld), or missing (never
observed). CSV input is schema-driven; synthetic datasets are drawn from
the Gaussian-process prior by dense Cholesky sampling.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import linalg
from .errors import DataError, ParameterError
from .kernels import HyperParams, matern, pairwise_distances

TRAIN, TEST, MISSING = 0, 1, 2
STATUS_NAMES = {TRAIN: "train", TEST: "test", MISSING: "missing"}

# Dense sampling is O(cells^3); larger synthetic studies are not supported.
SIMULATION_CELL_CAP = 10_000

_GRID_REL_TOL = 1e-6


@dataclass
class GridDataset:
    """A regular grid of observations with per-cell status.

    Attributes
    ----------
    lon, lat : (rows, cols) ndarray
        Cell coordinates; constant along the appropriate axis.
    response : (rows, cols) ndarray
        Observed values; NaN where unknown. Train cells must be finite.
    status : (rows, cols) int8 ndarray
        TRAIN, TEST, or MISSING per cell.
    label : str
        Provenance label for reports.
    """

    lon: np.ndarray
    lat: np.ndarray
    response: np.ndarray
    status: np.ndarray
    label: str = ""

    def __post_init__(self):
        shapes = {self.lon.shape, self.lat.shape, self.response.shape, self.status.shape}
        if len(shapes) != 1:
            raise DataError(f"grid field shapes differ: {shapes}")
        bad = np.isin(self.status, (TRAIN, TEST, MISSING), invert=True)
        if bad.any():
            raise DataError("status contains values outside {train, test, missing}")
        if not np.isfinite(self.response[self.status == TRAIN]).all():
            raise DataError("train cells must carry finite responses")

    @property
    def rows(self) -> int:
        return self.lon.shape[0]

    @property
    def cols(self) -> int:
        return self.lon.shape[1]

    def counts(self) -> dict:
        return {name: int((self.status == code).sum()) for code, name in STATUS_NAMES.items()}

    def _locations(self, mask: np.ndarray) -> np.ndarray:
        return np.column_stack([self.lon[mask], self.lat[mask]])

    def train_locations(self) -> np.ndarray:
        return self._locations(self.status == TRAIN)

    def train_responses(self) -> np.ndarray:
        return self.response[self.status == TRAIN]

    def test_locations(self) -> np.ndarray:
        return self._locations(self.status == TEST)

    def test_responses(self) -> np.ndarray:
        return self.response[self.status == TEST]

    def x_axis(self) -> np.ndarray:
        return self.lon[0, :].copy()

    def y_axis(self) -> np.ndarray:
        return self.lat[:, 0].copy()


@dataclass(frozen=True)
class CsvSchema:
    """Column names and mask semantics for grid CSV files.

    ``masked_value`` names the status given to null-response rows whose
    mask is truthy; null-response rows with a falsy mask get the other
    of test/missing. Without a mask column all null rows are missing.
    """

    lon_col: str = "lon"
    lat_col: str = "lat"
    response_col: str = "response"
    mask_col: str | None = "mask"
    delimiter: str = ","
    masked_value: str = "test"

    def __post_init__(self):
        if self.masked_value not in ("test", "missing"):
            raise ParameterError(f"masked_value must be 'test' or 'missing', got {self.masked_value!r}")


def _grid_axis(values: np.ndarray, name: str) -> np.ndarray:
    axis = np.unique(values)
    if axis.size > 1:
        d = np.diff(axis)
        if d.max() - d.min() > _GRID_REL_TOL * max(abs(d.max()), abs(d.min())):
            raise DataError(f"{name} values do not form a uniformly spaced grid axis")
    return axis


def load_csv(path, schema: CsvSchema = CsvSchema()) -> GridDataset:
    """Load a gridded dataset from a delimited file.

    Parameters
    ----------
    path : str
        CSV file with a header row.
    schema : CsvSchema
        Column names, delimiter, and mask semantics.

    Returns
    -------
    GridDataset

    Raises
    ------
    DataError
        On unreadable files, malformed rows (with line number),
        non-finite coordinates, or coordinates that do not form a
        complete regular grid.
    """
    try:
        # round_trip parsing keeps write/load bit-exact for doubles
        df = pd.read_csv(path, sep=schema.delimiter, comment="#",
                         float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"data file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{path}: {e}")
    needed = [schema.lon_col, schema.lat_col, schema.response_col]
    if schema.mask_col is not None and schema.mask_col in df.columns:
        needed.append(schema.mask_col)
    for col in needed[:3]:
        if col not in df.columns:
            raise DataError(f"{path}: missing required column {col!r}")
    for col in (schema.lon_col, schema.lat_col):
        vals = pd.to_numeric(df[col], errors="coerce").to_numpy(dtype=float)
        bad = np.nonzero(~np.isfinite(vals))[0]
        if bad.size:
            # +2: header line plus 1-based numbering.
            raise DataError(f"{path}: line {bad[0] + 2}: non-finite {col!r} value")
    lon = df[schema.lon_col].to_numpy(dtype=float)
    lat = df[schema.lat_col].to_numpy(dtype=float)
    resp = pd.to_numeric(df[schema.response_col], errors="coerce").to_numpy(dtype=float)
    if schema.mask_col is not None and schema.mask_col in df.columns:
        mask = pd.to_numeric(df[schema.mask_col], errors="coerce").fillna(0).to_numpy() != 0
    else:
        mask = None

    xs = _grid_axis(lon, schema.lon_col)
    ys = _grid_axis(lat, schema.lat_col)
    R, C = ys.size, xs.size
    if R * C != len(df):
        raise DataError(f"{path}: {len(df)} rows cannot tile a {R} x {C} grid")
    r = np.searchsorted(ys, lat)
    c = np.searchsorted(xs, lon)
    seen = np.zeros((R, C), dtype=np.int64)
    np.add.at(seen, (r, c), 1)
    if (seen != 1).any():
        raise DataError(f"{path}: grid cells are duplicated or absent")

    response = np.full((R, C), np.nan)
    response[r, c] = resp
    status = np.full((R, C), MISSING, dtype=np.int8)
    observed = np.isfinite(resp)
    status[r[observed], c[observed]] = TRAIN
    null = ~observed
    if mask is not None:
        masked_code = TEST if schema.masked_value == "test" else MISSING
        other_code = MISSING if masked_code == TEST else TEST
        sel = null & mask
        status[r[sel], c[sel]] = masked_code
        sel = null & ~mask
        status[r[sel], c[sel]] = other_code
    grid_lon, grid_lat = np.meshgrid(xs, ys)
    return GridDataset(grid_lon, grid_lat, response, status, label=str(path))


@dataclass(frozen=True)
class NormalizationTransform:
    """Affine coordinate normalization ``(coord + offset) / scale``.

    The same offset and scale apply to both axes, so pairwise distance
    ratios (and hence the geometry seen by the kernel) are preserved.
    """

    offset: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ParameterError(f"scale must be positive, got {self.scale!r}")

    @classmethod
    def fit(cls, locations) -> "NormalizationTransform":
        """Min/max-derived transform: shifts the global minimum to zero
        and divides by the larger per-axis span."""
        locations = np.asarray(locations, dtype=float)
        span = (locations.max(axis=0) - locations.min(axis=0)).max()
        return cls(offset=-float(locations.min()), scale=float(span) if span > 0 else 1.0)

    @classmethod
    def benchmark(cls) -> "NormalizationTransform":
        """Preset used for the land-surface-temperature benchmark grid."""
        return cls(offset=218.0, scale=464.0)

    def apply(self, locations) -> np.ndarray:
        return (np.asarray(locations, dtype=float) + self.offset) / self.scale

    def invert(self, normalized) -> np.ndarray:
        return np.asarray(normalized, dtype=float) * self.scale - self.offset


def simulate_gp(rows: int, cols: int, params: HyperParams, seed: int,
                mean=0.0, label: str = "synthetic"):
    """Draw one gridded sample from the Gaussian-process prior.

    Parameters
    ----------
    rows, cols : int
        Grid dimensions; ``rows * cols`` must not exceed 10,000.
    params : HyperParams
        Generating kernel; the nugget contributes to the sampled values.
    seed : int
        Generator seed; fixed seed gives a bitwise-identical dataset.
    mean : float or callable
        Constant trend, or a function of (n, 2) locations.

    Returns
    -------
    (GridDataset, HyperParams)
        The sampled dataset (all cells train) and the generating
        parameters, for recovery tests.
    """
    cells = rows * cols
    if cells > SIMULATION_CELL_CAP:
        raise ParameterError(
            f"simulation supports at most {SIMULATION_CELL_CAP} cells, got {cells}"
        )
    h = 1.0 / (max(rows, cols) - 1)
    xs = np.arange(cols) * h
    ys = np.arange(rows) * h
    lon, lat = np.meshgrid(xs, ys)
    locs = np.column_stack([lon.ravel(), lat.ravel()])
    K = matern(pairwise_distances(locs), params)
    L = linalg._cholesky_lower(K)
    z = np.random.default_rng(seed).standard_normal(cells)
    mu = mean(locs) if callable(mean) else float(mean)
    y = (mu + L @ z).reshape(rows, cols)
    status = np.full((rows, cols), TRAIN, dtype=np.int8)
    return GridDataset(lon, lat, y, status, label=label), params


def mask_split(dataset: GridDataset, test_fraction: float | None = None,
               mask=None, seed: int = 0) -> GridDataset:
    """Assign test status to a subset of currently observed cells.

    Parameters
    ----------
    dataset : GridDataset
    test_fraction : float, optional
        Fraction of train cells (rounded) to hold out, in (0, 1).
    mask : array, optional
        (rows, cols) 0/1 array; nonzero train cells become test.
    seed : int
        Seed for the random draw when ``test_fraction`` is given.

    Returns
    -------
    GridDataset
        A new dataset; the input is not modified.
    """
    if (test_fraction is None) == (mask is None):
        raise ParameterError("provide exactly one of test_fraction or mask")
    status = dataset.status.copy()
    if test_fraction is not None:
        if not 0 < test_fraction < 1:
            raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
        train_flat = np.nonzero(status.ravel() == TRAIN)[0]
        n_test = int(round(test_fraction * train_flat.size))
        pick = np.random.default_rng(seed).choice(train_flat, size=n_test, replace=False)
        status.ravel()[pick] = TEST
    else:
        mask = np.asarray(mask)
        if mask.shape != status.shape:
            raise DataError(
                f"mask shape {mask.shape} does not match grid {status.shape}"
            )
        status[(mask != 0) & (status == TRAIN)] = TEST
    return replace(dataset, status=status)


def write_grid_csv(path, dataset: GridDataset, schema: CsvSchema = CsvSchema(),
                   config_echo: dict | None = None, reveal: str = "train") -> None:
    """Write a dataset as a grid CSV.

    ``reveal="train"`` blanks test/missing responses and emits a mask
    column (test cells 1, missing 0), producing a file that loads back
    to the same statuses. ``reveal="all"`` writes every response, for
    truth files consumed by evaluation.
    """
    lon = dataset.lon.ravel()
    lat = dataset.lat.ravel()
    resp = dataset.response.ravel().copy()
    status = dataset.status.ravel()
    if reveal == "train":
        resp[status != TRAIN] = np.nan
    elif reveal != "all":
        raise ParameterError(f"reveal must be 'train' or 'all', got {reveal!r}")
    df = pd.DataFrame({
        schema.lon_col: lon,
        schema.lat_col: lat,
        schema.response_col: resp,
        schema.mask_col or "mask": (status == TEST).astype(int),
    })
    with open(path, "w") as fh:
        if config_echo is not None:
            fh.write("# config: " + json.dumps(config_echo, sort_keys=True) + "\n")
        df.to_csv(fh, index=False, lineterminator="\n")


def write_predictions(path, lon, lat, mean, variance, lo, hi,
                      config_echo: dict | None = None) -> None:
    """Write per-point predictions as lon, lat, mean, variance, lo, hi."""
    df = pd.DataFrame({
        "lon": np.asarray(lon, dtype=float),
        "lat": np.asarray(lat, dtype=float),
        "mean": np.asarray(mean, dtype=float),
        "variance": np.asarray(variance, dtype=float),
        "lo": np.asarray(lo, dtype=float),
        "hi": np.asarray(hi, dtype=float),
    })
    with open(path, "w") as fh:
        if config_echo is not None:
            fh.write("# config: " + json.dumps(config_echo, sort_keys=True) + "\n")
        df.to_csv(fh, index=False, lineterminator="\n")


def read_predictions(path) -> pd.DataFrame:
    """Read a predictions CSV written by :func:`write_predictions`."""
    try:
        df = pd.read_csv(path, comment="#", float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"predictions file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{path}: {e}")
    needed = {"lon", "lat", "mean", "variance", "lo", "hi"}
    if not needed.issubset(df.columns):
        raise DataError(f"{path}: missing columns {sorted(needed - set(df.columns))}")
    return df
