"""Command-line interface: train, predict, eval, simulate, study.

Every run resolves its configuration from built-in defaults, an optional
YAML config file, and command-line overrides, in that order; the
resolved configuration is embedded in each output artifact. Exit codes:
0 success, 2 configuration error, 3 data error, 4 numerical error.
"""

from __future__ import annotations

import functools
import json
import time

import click
import numpy as np
import pandas as pd

from . import metrics as metricsmod
from . import modelio, plots
from .config import RunConfig, resolve
from .data import (TEST, TRAIN, NormalizationTransform, load_csv, mask_split,
                   read_predictions, simulate_gp, write_grid_csv, write_predictions)
from .errors import ConfigError, DataError, NumericalError, ParameterError
from .meanmodels import GridSpec, detrend, fit_constant, fit_linear, fit_smoother
from .neighbors import build as build_index
from .predictor import predict_nn
from .trainer import BatchSpec, TrainingSet, optimize

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERICAL = 2, 3, 4


class _Failure(click.ClickException):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.exit_code = code


def _guard(fn):
    """Map library errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ConfigError, ParameterError) as e:
            raise _Failure(f"config error: {e}", EXIT_CONFIG)
        except DataError as e:
            raise _Failure(f"data error: {e}", EXIT_DATA)
        except NumericalError as e:
            raise _Failure(f"numerical error: {e}", EXIT_NUMERICAL)

    return wrapper


def _common_options(fn):
    opts = [
        click.option("--config", "config_path", type=click.Path(), default=None,
                     help="YAML config file; flags override its values."),
        click.option("--seed", type=int, default=None, help="Base seed."),
        click.option("--workers", type=int, default=None, help="Worker threads."),
        click.option("--k", type=int, default=None, help="Neighbors per point."),
        click.option("--batch-size", type=int, default=None, help="Training batch size."),
        click.option("--kernel.nu", "kernel_nu", type=float, default=None,
                     help="Smoothness (fixed value or optimizer start)."),
        click.option("--kernel.rho", "kernel_rho", type=float, default=None,
                     help="Length scale."),
        click.option("--kernel.tau-sq", "kernel_tau_sq", type=float, default=None,
                     help="Nugget relative to sigma_sq."),
        click.option("--mean", type=click.Choice(["const", "linear", "smoother"]),
                     default=None, help="Trend to remove before the GP."),
        click.option("--bandwidth", type=float, default=None,
                     help="Smoother bandwidth in grid-cell units."),
        click.option("--level", type=float, default=None, help="Interval level."),
        click.option("--backend", type=click.Choice(["exact", "approximate"]),
                     default=None, help="Neighbor index backend."),
        click.option("--plots/--no-plots", "plots_flag", default=None,
                     help="Render figures alongside delimited outputs."),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _resolve(config_path, plots_flag=None, **flags) -> RunConfig:
    if plots_flag is not None:
        flags["plots"] = plots_flag
    return resolve(config_path, **flags)


@click.group()
def main():
    """Nearest-neighbor local kriging: train, predict, evaluate, study."""


def _normalization(cfg: RunConfig, dataset) -> NormalizationTransform:
    if cfg.normalization == "benchmark":
        return NormalizationTransform.benchmark()
    if cfg.normalization == "none":
        return NormalizationTransform()
    grid_locs = np.column_stack([dataset.lon.ravel(), dataset.lat.ravel()])
    return NormalizationTransform.fit(grid_locs)


def _fit_mean(cfg: RunConfig, dataset, transform):
    y = dataset.train_responses()
    if cfg.mean == "const":
        return fit_constant(y)
    locs = transform.apply(dataset.train_locations())
    if cfg.mean == "linear":
        return fit_linear(locs, y)
    field = np.where(dataset.status == TRAIN, dataset.response, np.nan)
    xs = (dataset.x_axis() + transform.offset) / transform.scale
    ys = (dataset.y_axis() + transform.offset) / transform.scale
    spec = GridSpec.from_axes(xs, ys)
    return fit_smoother(field, spec, bandwidth=cfg.bandwidth, squared=cfg.smoother_squared)


def _index_params(cfg: RunConfig) -> dict:
    if cfg.backend == "approximate":
        return {"degree": cfg.degree, "construction_beam": cfg.construction_beam,
                "query_beam": cfg.query_beam, "seed": cfg.seed}
    return {}


def _training_set(cfg, dataset, transform, mean_model):
    locs = transform.apply(dataset.train_locations())
    resid = detrend(mean_model, locs, dataset.train_responses())
    return TrainingSet(locs, resid)


@main.command()
@_common_options
@click.option("--data", type=click.Path(), default=None, help="Training grid CSV.")
@click.option("--model-out", type=click.Path(), default=None, help="Model file to write.")
@_guard
def train(config_path, data, model_out, **flags):
    """Fit kernel hyperparameters on the training cells of a grid CSV."""
    cfg = _resolve(config_path, data=data, model=model_out, **flags)
    if cfg.data is None:
        raise ConfigError("train requires --data (or 'data' in the config file)")
    dataset = load_csv(cfg.data, cfg.schema())
    transform = _normalization(cfg, dataset)
    mean_model = _fit_mean(cfg, dataset, transform)
    train_set = _training_set(cfg, dataset, transform, mean_model)
    t0 = time.perf_counter()
    index = build_index(train_set.locations, cfg.backend, **_index_params(cfg))
    t_build = time.perf_counter() - t0
    result = optimize(train_set, index, BatchSpec(cfg.batch_size, cfg.seed), cfg.k,
                      cfg.hyperparams(), method=cfg.optimizer, workers=cfg.workers)
    timings = {"nn_build_s": t_build, **result.timings}
    echo = {"config": cfg.to_dict(), "timings": timings}
    out_path = cfg.model or "model.yaml"
    modelio.save_model(out_path, result.params, mean_model, transform, config_echo=echo)
    p = result.params
    click.echo(f"model written: {out_path}")
    click.echo(f"kernel: sigma_sq={p.sigma_sq:.6g} rho={p.rho:.6g} "
               f"nu={p.nu:.6g} tau_sq={p.tau_sq:.6g}")
    click.echo(f"converged: {result.converged}  iterations: {result.iterations}  "
               f"final_loss: {result.trajectory[-1]:.6g}")
    if result.sigma_degenerate:
        click.echo("warning: scale estimate was degenerate; sigma_sq kept at 1")
    for key in sorted(timings):
        click.echo(f"{key}: {timings[key]:.3f}")


@main.command()
@_common_options
@click.option("--model", "model_path", type=click.Path(), required=True, help="Fitted model file.")
@click.option("--data", type=click.Path(), default=None, help="Grid CSV with test cells.")
@click.option("--out", type=click.Path(), default=None, help="Predictions CSV to write.")
@_guard
def predict(config_path, model_path, data, out, **flags):
    """Predict at the test cells of a grid CSV using a fitted model."""
    cfg = _resolve(config_path, data=data, out=out, **flags)
    if cfg.data is None:
        raise ConfigError("predict requires --data (or 'data' in the config file)")
    params, mean_model, transform, model_echo = modelio.load_model(model_path)
    for flag, model_value in (("kernel_nu", params.nu), ("kernel_rho", params.rho),
                              ("kernel_tau_sq", params.tau_sq)):
        given = flags.get(flag)
        if given is not None and given != model_value:
            raise ConfigError(
                f"--{flag.replace('kernel_', 'kernel.').replace('_', '-')}={given} "
                f"conflicts with the model file value {model_value}"
            )
    dataset = load_csv(cfg.data, cfg.schema())
    train_set = _training_set(cfg, dataset, transform, mean_model)
    test_locs_raw = dataset.test_locations()
    t0 = time.perf_counter()
    index = build_index(train_set.locations, cfg.backend, **_index_params(cfg))
    t_build = time.perf_counter() - t0
    t0 = time.perf_counter()
    pred = predict_nn(train_set, index, transform.apply(test_locs_raw), cfg.k, params,
                      mean_model=mean_model, level=cfg.level, workers=cfg.workers)
    t_pred = time.perf_counter() - t0
    timings = dict(model_echo.get("timings", {}))
    timings.update({"nn_build_s": timings.get("nn_build_s", 0.0) + t_build,
                    "predict_s": t_pred})
    echo = {"config": cfg.to_dict(), "model": model_path, "timings": timings}
    out_path = cfg.out or "predictions.csv"
    write_predictions(out_path, test_locs_raw[:, 0] if len(test_locs_raw) else [],
                      test_locs_raw[:, 1] if len(test_locs_raw) else [],
                      pred.mean, pred.variance, pred.lo, pred.hi, config_echo=echo)
    click.echo(f"predictions written: {out_path} ({len(pred.mean)} rows)")
    if pred.clamped:
        click.echo(f"warning: {pred.clamped} variance value(s) clamped to zero")


def _read_echo(path) -> dict:
    with open(path) as fh:
        first = fh.readline()
    if first.startswith("# config: "):
        try:
            return json.loads(first[len("# config: "):])
        except json.JSONDecodeError:
            return {}
    return {}


def _read_truth(path, cfg: RunConfig) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, sep=cfg.delimiter, comment="#",
                         float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"truth file not found: {path}")
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"{path}: {e}")
    for col in (cfg.lon_col, cfg.lat_col, cfg.response_col):
        if col not in df.columns:
            raise DataError(f"{path}: missing required column {col!r}")
    return df


@main.command(name="eval")
@_common_options
@click.option("--predictions", "predictions_path", type=click.Path(), required=True)
@click.option("--truth", "truth_path", type=click.Path(), required=True)
@click.option("--out-dir", type=click.Path(), default=None,
              help="Directory for report, table row, and figures.")
@_guard
def eval_cmd(config_path, predictions_path, truth_path, out_dir, **flags):
    """Score predictions against held-out truth."""
    cfg = _resolve(config_path, out_dir=out_dir, **flags)
    pred = read_predictions(predictions_path)
    truth = _read_truth(truth_path, cfg)
    if len(pred) != len(truth):
        raise DataError(
            f"row count mismatch: {len(pred)} predictions vs {len(truth)} truth rows"
        )
    if len(pred) == 0:
        raise DataError("nothing to evaluate: empty prediction set")
    plon = pred["lon"].to_numpy(dtype=float)
    plat = pred["lat"].to_numpy(dtype=float)
    tlon = truth[cfg.lon_col].to_numpy(dtype=float)
    tlat = truth[cfg.lat_col].to_numpy(dtype=float)
    scale = max(1.0, float(np.abs(plon).max()), float(np.abs(plat).max()))
    bad = np.nonzero((np.abs(plon - tlon) > 1e-9 * scale)
                     | (np.abs(plat - tlat) > 1e-9 * scale))[0]
    if bad.size:
        raise DataError(
            f"alignment error: truth row {bad[0] + 1} has coordinates "
            f"({tlon[bad[0]]}, {tlat[bad[0]]}) but predictions have "
            f"({plon[bad[0]]}, {plat[bad[0]]})"
        )
    y = truth[cfg.response_col].to_numpy(dtype=float)
    echo = _read_echo(predictions_path)
    timings = echo.get("timings", {})
    report = metricsmod.MetricsReport(
        mae=metricsmod.mae(y, pred["mean"].to_numpy()),
        rmse=metricsmod.rmse(y, pred["mean"].to_numpy()),
        crps=metricsmod.crps_gaussian(
            y, pred["mean"].to_numpy(),
            np.maximum(pred["variance"].to_numpy(), 1e-300)),
        int_score=metricsmod.interval_score(
            y, pred["lo"].to_numpy(), pred["hi"].to_numpy(), alpha=1.0 - cfg.level),
        coverage=metricsmod.coverage(y, pred["lo"].to_numpy(), pred["hi"].to_numpy()),
        n_test=len(pred),
        timings=timings,
    )
    click.echo(report.to_text(), nl=False)
    click.echo(report.table_csv(), nl=False)
    if cfg.out_dir is not None:
        import os

        os.makedirs(cfg.out_dir, exist_ok=True)
        echo_out = {"config": cfg.to_dict(), "predictions": predictions_path,
                    "truth": truth_path}
        with open(os.path.join(cfg.out_dir, "report.txt"), "w") as fh:
            fh.write("# config: " + json.dumps(echo_out, sort_keys=True) + "\n")
            fh.write(report.to_text())
        with open(os.path.join(cfg.out_dir, "score_row.csv"), "w") as fh:
            fh.write("# config: " + json.dumps(echo_out, sort_keys=True) + "\n")
            fh.write(report.table_csv())
        if cfg.plots:
            plots.plot_eval(y, pred["mean"].to_numpy(), pred["lo"].to_numpy(),
                            pred["hi"].to_numpy(),
                            os.path.join(cfg.out_dir, "eval.png"))
            plots.plot_field(plon, plat, pred["mean"].to_numpy(),
                             os.path.join(cfg.out_dir, "predicted_mean.png"))


def _write_truth(path, dataset, echo: dict | None, cfg: RunConfig) -> None:
    sel = dataset.status == TEST
    df = pd.DataFrame({
        cfg.lon_col: dataset.lon[sel],
        cfg.lat_col: dataset.lat[sel],
        cfg.response_col: dataset.response[sel],
    })
    with open(path, "w") as fh:
        if echo is not None:
            fh.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
        df.to_csv(fh, index=False, lineterminator="\n")


@main.command()
@_common_options
@click.option("--rows", type=int, default=None)
@click.option("--cols", type=int, default=None)
@click.option("--kernel.sigma-sq", "kernel_sigma_sq", type=float, default=None,
              help="Generating scale.")
@click.option("--test-fraction", type=float, default=None)
@click.option("--out-data", type=click.Path(), default="data.csv")
@click.option("--out-truth", type=click.Path(), default="truth.csv")
@_guard
def simulate(config_path, rows, cols, kernel_sigma_sq, test_fraction, out_data,
             out_truth, **flags):
    """Draw a synthetic grid dataset and hold out a random test set."""
    cfg = _resolve(config_path, rows=rows, cols=cols, kernel_sigma_sq=kernel_sigma_sq,
                   test_fraction=test_fraction, **flags)
    gen = cfg.hyperparams().with_values(free=())
    dataset, _ = simulate_gp(cfg.rows, cfg.cols, gen, seed=cfg.seed)
    # Split seed is offset from the draw seed so the two stay independent.
    dataset = mask_split(dataset, test_fraction=cfg.test_fraction, seed=cfg.seed + 1)
    echo = {"config": cfg.to_dict()}
    write_grid_csv(out_data, dataset, cfg.schema(), config_echo=echo, reveal="train")
    _write_truth(out_truth, dataset, echo, cfg)
    counts = dataset.counts()
    click.echo(f"simulated {cfg.rows}x{cfg.cols} grid: {counts['train']} train, "
               f"{counts['test']} test, {counts['missing']} missing")
    click.echo(f"data written: {out_data}")
    click.echo(f"truth written: {out_truth}")


@main.command()
@_common_options
@click.option("--data", type=click.Path(), default=None)
@click.option("--truth", "truth_path", type=click.Path(), required=True)
@click.option("--axis", type=click.Choice(["batch_size", "k"]), default=None)
@click.option("--values", "values_csv", type=str, default=None,
              help="Comma-separated axis values.")
@click.option("--reps", type=int, default=None)
@click.option("--out-dir", type=click.Path(), default=".")
@_guard
def study(config_path, data, truth_path, axis, values_csv, reps, out_dir, **flags):
    """Sweep batch size or k, repeating each value over batch seeds."""
    values = None
    if values_csv is not None:
        try:
            values = [int(v) for v in values_csv.split(",") if v.strip()]
        except ValueError:
            raise ConfigError(f"--values must be comma-separated integers, got {values_csv!r}")
    cfg = _resolve(config_path, data=data, axis=axis, values=values, reps=reps,
                   out_dir=out_dir, **flags)
    if cfg.data is None:
        raise ConfigError("study requires --data (or 'data' in the config file)")
    if not cfg.values:
        raise ConfigError("study requires at least one axis value")
    dataset = load_csv(cfg.data, cfg.schema())
    truth = _read_truth(truth_path, cfg)
    transform = _normalization(cfg, dataset)
    mean_model = _fit_mean(cfg, dataset, transform)
    train_set = _training_set(cfg, dataset, transform, mean_model)
    index = build_index(train_set.locations, cfg.backend, **_index_params(cfg))
    test_locs = transform.apply(
        np.column_stack([truth[cfg.lon_col].to_numpy(dtype=float),
                         truth[cfg.lat_col].to_numpy(dtype=float)]))
    y_true = truth[cfg.response_col].to_numpy(dtype=float)
    rows_out = []
    for value in cfg.values:
        b = value if cfg.axis == "batch_size" else cfg.batch_size
        k = value if cfg.axis == "k" else cfg.k
        for rep in range(cfg.reps):
            t0 = time.perf_counter()
            result = optimize(train_set, index, BatchSpec(b, cfg.seed + rep), k,
                              cfg.hyperparams(), method=cfg.optimizer,
                              workers=cfg.workers)
            pred = predict_nn(train_set, index, test_locs, k, result.params,
                              mean_model=mean_model, level=cfg.level,
                              workers=cfg.workers)
            elapsed = time.perf_counter() - t0
            rows_out.append({cfg.axis: value, "rep": rep,
                             "rmse": metricsmod.rmse(y_true, pred.mean),
                             "seconds": elapsed})
    df = pd.DataFrame(rows_out)
    summary = df.groupby(cfg.axis).agg(
        rmse_mean=("rmse", "mean"), rmse_std=("rmse", "std"),
        seconds_mean=("seconds", "mean")).reset_index()
    import os

    os.makedirs(cfg.out_dir or ".", exist_ok=True)
    echo = {"config": cfg.to_dict(), "truth": truth_path}
    for name, frame in (("study.csv", df), ("study_summary.csv", summary)):
        path = os.path.join(cfg.out_dir or ".", name)
        with open(path, "w") as fh:
            fh.write("# config: " + json.dumps(echo, sort_keys=True) + "\n")
            frame.to_csv(fh, index=False, lineterminator="\n")
    if cfg.plots:
        plots.plot_study(summary[cfg.axis].to_numpy(), summary["rmse_mean"].to_numpy(),
                         np.nan_to_num(summary["rmse_std"].to_numpy()), cfg.axis,
                         os.path.join(cfg.out_dir or ".", "study.png"))
    click.echo(summary.to_string(index=False))
    click.echo(f"study outputs written to {cfg.out_dir or '.'}")


if __name__ == "__main__":
    main()
