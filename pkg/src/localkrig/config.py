"""Run configuration: YAML file plus command-line overrides.

A config file is a flat YAML mapping; command-line flags override file
values; built-in defaults fill the rest. The resolved configuration is
echoed into every output artifact so a run can be reproduced from any
of its products.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import yaml

from .data import CsvSchema
from .errors import ConfigError
from .kernels import HyperParams

_MEAN_VARIANTS = ("const", "linear", "smoother")
_BACKENDS = ("exact", "approximate")
_NORMALIZATIONS = ("fit", "benchmark", "none")


@dataclass
class RunConfig:
    """Resolved settings for one command invocation."""

    data: str | None = None
    truth: str | None = None
    model: str | None = None
    out: str | None = None
    out_dir: str | None = None

    lon_col: str = "lon"
    lat_col: str = "lat"
    response_col: str = "response"
    mask_col: str | None = "mask"
    delimiter: str = ","
    masked_value: str = "test"

    normalization: str = "fit"

    kernel_sigma_sq: float = 1.0
    kernel_rho: float = 1.0
    kernel_nu: float = 1.0
    kernel_tau_sq: float = 0.001
    free: dict = field(default_factory=lambda: {"nu": [0.1, 5.0]})

    k: int = 50
    backend: str = "exact"
    degree: int = 16
    construction_beam: int = 200
    query_beam: int = 100

    batch_size: int = 500
    seed: int = 0
    mean: str = "const"
    bandwidth: float = 25.0
    smoother_squared: bool = False
    level: float = 0.95
    workers: int = 1
    optimizer: str = "lbfgsb"
    plots: bool = True

    rows: int = 40
    cols: int = 40
    test_fraction: float = 0.25

    axis: str = "batch_size"
    values: list = field(default_factory=lambda: [25, 100, 500, 2000])
    reps: int = 20

    def __post_init__(self):
        if self.mean not in _MEAN_VARIANTS:
            raise ConfigError(f"mean must be one of {_MEAN_VARIANTS}, got {self.mean!r}")
        if self.backend not in _BACKENDS:
            raise ConfigError(f"backend must be one of {_BACKENDS}, got {self.backend!r}")
        if self.normalization not in _NORMALIZATIONS:
            raise ConfigError(
                f"normalization must be one of {_NORMALIZATIONS}, got {self.normalization!r}"
            )
        if not 0 < self.level < 1:
            raise ConfigError(f"level must be in (0, 1), got {self.level}")
        for name in ("k", "batch_size", "workers", "reps", "rows", "cols"):
            v = getattr(self, name)
            if not isinstance(v, int) or v < 1:
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")
        if self.axis not in ("batch_size", "k"):
            raise ConfigError(f"study axis must be 'batch_size' or 'k', got {self.axis!r}")

    def schema(self) -> CsvSchema:
        return CsvSchema(
            lon_col=self.lon_col, lat_col=self.lat_col,
            response_col=self.response_col, mask_col=self.mask_col,
            delimiter=self.delimiter, masked_value=self.masked_value,
        )

    def hyperparams(self) -> HyperParams:
        free = {name: tuple(bounds) for name, bounds in (self.free or {}).items()}
        return HyperParams(
            sigma_sq=self.kernel_sigma_sq, rho=self.kernel_rho,
            nu=self.kernel_nu, tau_sq=self.kernel_tau_sq, free=free,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["free"] = {name: list(bounds) for name, bounds in (self.free or {}).items()}
        return d


def load_config_file(path) -> dict:
    """Parse a YAML config file into a flat dict."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}")
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return raw


def resolve(config_path=None, **overrides) -> RunConfig:
    """Merge defaults, config file, and overrides into a RunConfig.

    Overrides with value None are treated as not given.
    """
    values = {}
    if config_path is not None:
        file_values = load_config_file(config_path)
        known = set(RunConfig.__dataclass_fields__)
        unknown = set(file_values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    values.update({k: v for k, v in overrides.items() if v is not None})
    try:
        return RunConfig(**values)
    except TypeError as e:
        raise ConfigError(str(e))
