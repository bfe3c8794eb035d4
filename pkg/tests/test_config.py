"""Configuration resolution and model persistence."""

import numpy as np
import pytest

from localkrig.config import RunConfig, load_config_file, resolve
from localkrig.data import NormalizationTransform
from localkrig.errors import ConfigError, DataError
from localkrig.kernels import HyperParams
from localkrig.meanmodels import (ConstantMean, GridSpec, LinearMean,
                                  SmootherMean)
from localkrig.modelio import load_model, save_model


def test_defaults():
    cfg = RunConfig()
    assert cfg.k == 50
    assert cfg.batch_size == 500
    assert cfg.kernel_tau_sq == 0.001
    assert cfg.kernel_rho == 1.0
    assert cfg.level == 0.95
    assert cfg.free == {"nu": [0.1, 5.0]}
    p = cfg.hyperparams()
    assert p.free_names == ("nu",)
    assert p.free_bounds() == [(0.1, 5.0)]


def test_validation():
    with pytest.raises(ConfigError):
        RunConfig(mean="cubic")
    with pytest.raises(ConfigError):
        RunConfig(backend="kdtree")
    with pytest.raises(ConfigError):
        RunConfig(normalization="zscore")
    with pytest.raises(ConfigError):
        RunConfig(level=0.0)
    with pytest.raises(ConfigError):
        RunConfig(k=0)
    with pytest.raises(ConfigError):
        RunConfig(axis="rho")


def test_file_then_overrides(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("k: 30\nbatch_size: 100\nmean: linear\n")
    cfg = resolve(str(path))
    assert (cfg.k, cfg.batch_size, cfg.mean) == (30, 100, "linear")
    cfg = resolve(str(path), k=10, seed=7)
    assert (cfg.k, cfg.batch_size, cfg.seed) == (10, 100, 7)
    # None-valued overrides are "not given".
    cfg = resolve(str(path), k=None)
    assert cfg.k == 30


def test_unknown_keys_rejected(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text("batchsize: 100\n")
    with pytest.raises(ConfigError, match="batchsize"):
        resolve(str(path))
    with pytest.raises(ConfigError, match="not found"):
        resolve(str(tmp_path / "absent.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("k: [unclosed\n")
    with pytest.raises(ConfigError, match="YAML"):
        load_config_file(str(bad))
    notmap = tmp_path / "list.yaml"
    notmap.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError, match="mapping"):
        load_config_file(str(notmap))


def test_to_dict_round_trips_through_resolve():
    cfg = RunConfig(k=12, free={"nu": [0.2, 4.0], "rho": [0.05, 2.0]})
    d = cfg.to_dict()
    again = RunConfig(**d)
    assert again == cfg


def test_schema_mapping():
    cfg = RunConfig(lon_col="x", lat_col="y", response_col="z", mask_col=None,
                    delimiter=";")
    s = cfg.schema()
    assert (s.lon_col, s.lat_col, s.response_col) == ("x", "y", "z")
    assert s.mask_col is None
    assert s.delimiter == ";"


def test_model_round_trip_constant(tmp_path):
    path = str(tmp_path / "model.yaml")
    params = HyperParams(sigma_sq=2.5, rho=0.3, nu=0.87, tau_sq=0.001,
                         free={"nu": (0.1, 5.0)})
    save_model(path, params, ConstantMean(c=1.5),
               NormalizationTransform(offset=218.0, scale=464.0),
               config_echo={"seed": 3})
    p, mean, transform, echo = load_model(path)
    assert p == params
    assert isinstance(mean, ConstantMean) and mean.c == 1.5
    assert (transform.offset, transform.scale) == (218.0, 464.0)
    assert echo == {"seed": 3}


def test_model_round_trip_linear(tmp_path):
    path = str(tmp_path / "model.yaml")
    beta = np.array([1.0, -2.0, 0.5, 0.25])
    save_model(path, HyperParams(), LinearMean(beta=beta),
               NormalizationTransform())
    _, mean, _, echo = load_model(path)
    assert isinstance(mean, LinearMean)
    np.testing.assert_array_equal(mean.beta, beta)
    assert echo == {}


def test_model_round_trip_smoother(tmp_path):
    path = str(tmp_path / "model.yaml")
    spec = GridSpec(x0=0.0, dx=0.5, y0=1.0, dy=0.25, rows=3, cols=4)
    field = np.arange(12, dtype=float).reshape(3, 4)
    model = SmootherMean(spec=spec, field=field, bandwidth=25.0, squared=True)
    save_model(path, HyperParams(), model, NormalizationTransform())
    _, mean, _, _ = load_model(path)
    assert isinstance(mean, SmootherMean)
    assert mean.spec == spec
    assert mean.bandwidth == 25.0
    assert mean.squared is True
    np.testing.assert_array_equal(mean.field, field)
    # Round-tripped model evaluates identically.
    pts = np.array([[0.3, 1.1], [1.4, 1.6]])
    np.testing.assert_array_equal(mean.predict(pts), model.predict(pts))


def test_model_file_errors(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_model(str(tmp_path / "absent.yaml"))
    bad = tmp_path / "bad.yaml"
    bad.write_text("format: something-else\n")
    with pytest.raises(DataError, match="localkrig-model-v1"):
        load_model(str(bad))
