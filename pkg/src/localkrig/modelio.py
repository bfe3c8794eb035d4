"""Model persistence: fitted parameters, trend, and normalization.

Models are written as self-describing YAML so they stay human-diffable;
the matrices involved are small. The resolved run configuration is
embedded for reproducibility.
"""

from __future__ import annotations

import numpy as np
import yaml

from .data import NormalizationTransform
from .errors import DataError
from .kernels import HyperParams
from .meanmodels import ConstantMean, GridSpec, LinearMean, SmootherMean

FORMAT_TAG = "localkrig-model-v1"


def _mean_to_dict(model) -> dict:
    if isinstance(model, ConstantMean):
        return {"variant": "constant", "c": float(model.c)}
    if isinstance(model, LinearMean):
        return {"variant": "linear", "beta": [float(v) for v in model.beta]}
    if isinstance(model, SmootherMean):
        s = model.spec
        return {
            "variant": "smoother",
            "bandwidth": float(model.bandwidth),
            "squared": bool(model.squared),
            "spec": {"x0": s.x0, "dx": s.dx, "y0": s.y0, "dy": s.dy,
                     "rows": s.rows, "cols": s.cols},
            "field": [[float(v) for v in row] for row in model.field],
        }
    raise DataError(f"cannot serialize mean model of type {type(model).__name__}")


def _mean_from_dict(d: dict):
    variant = d.get("variant")
    if variant == "constant":
        return ConstantMean(c=float(d["c"]))
    if variant == "linear":
        return LinearMean(beta=np.asarray(d["beta"], dtype=float))
    if variant == "smoother":
        s = d["spec"]
        spec = GridSpec(x0=float(s["x0"]), dx=float(s["dx"]), y0=float(s["y0"]),
                        dy=float(s["dy"]), rows=int(s["rows"]), cols=int(s["cols"]))
        return SmootherMean(spec=spec, field=np.asarray(d["field"], dtype=float),
                            bandwidth=float(d["bandwidth"]), squared=bool(d.get("squared", False)))
    raise DataError(f"unknown mean model variant {variant!r} in model file")


def save_model(path, params: HyperParams, mean_model, transform: NormalizationTransform,
               config_echo: dict | None = None) -> None:
    """Write a fitted model to a YAML file."""
    doc = {
        "format": FORMAT_TAG,
        "kernel": {
            "sigma_sq": float(params.sigma_sq),
            "rho": float(params.rho),
            "nu": float(params.nu),
            "tau_sq": float(params.tau_sq),
            "free": {name: [lo, hi] for name, lo, hi in params.free},
        },
        "normalization": {"offset": float(transform.offset), "scale": float(transform.scale)},
        "mean": _mean_to_dict(mean_model),
        "config": config_echo or {},
    }
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True, default_flow_style=None)


def load_model(path):
    """Read a model file back into its components.

    Returns
    -------
    (HyperParams, mean model, NormalizationTransform, dict)
        Fitted kernel, trend, coordinate transform, and the config echo.
    """
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except FileNotFoundError:
        raise DataError(f"model file not found: {path}")
    except yaml.YAMLError as e:
        raise DataError(f"{path}: invalid model file: {e}")
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_TAG:
        raise DataError(f"{path}: not a {FORMAT_TAG} file")
    kd = doc["kernel"]
    params = HyperParams(
        sigma_sq=float(kd["sigma_sq"]), rho=float(kd["rho"]),
        nu=float(kd["nu"]), tau_sq=float(kd["tau_sq"]),
        free={name: tuple(b) for name, b in kd.get("free", {}).items()},
    )
    nd = doc["normalization"]
    transform = NormalizationTransform(offset=float(nd["offset"]), scale=float(nd["scale"]))
    mean_model = _mean_from_dict(doc["mean"])
    return params, mean_model, transform, doc.get("config", {})
