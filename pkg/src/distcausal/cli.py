"""Command-line interface: simulation, fitting, estimation, bands, benchmarks.

Commands read a JSON config file merged with command-line flags (flags win),
echo the fully resolved configuration into every output, and write JSON plus
tidy CSV with full round-trip numeric precision.  Exit codes: 0 success,
1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import csv
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from . import __version__
from .cnf import cnf_fit, cnf_to_dict
from .distspace import (
    QuantileFunction,
    QuantileGrid,
    empirical_quantile_function,
    EmpiricalSample,
)
from .estimators import Dataset, Unit, cross_fit
from .inference import (
    bias_estimate,
    confidence_band,
    covariance_estimate,
    pilot_bandwidth,
    simulate_gaussian_process,
    sup_quantile,
)
from .kernels import Bandwidth, Kernel, KERNEL_NAMES
from .nncore import NumericalError, TrainConfig
from .nfr import nfr_fit, nfr_to_dict
from .simlab import (
    DGPConfig,
    benchmark,
    learned_trainer,
    oracle_trainer,
    plug_in_bandwidth,
    sensitivity_bandwidth,
    sensitivity_sample_size,
    simulate_dataset,
)

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class DataError(Exception):
    """Malformed or inconsistent input data."""


def _apply_thread_cap():
    cap = os.environ.get("DISTCAUSAL_THREADS")
    if cap:
        import torch

        torch.set_num_threads(max(1, int(cap)))


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    p = Path(path)
    if not p.exists():
        raise DataError(f"config file not found: {path}")
    with open(p) as fh:
        return json.load(fh)


def _resolve(file_cfg: dict, **flags) -> dict:
    """Flags win over the config file; None flags fall back to the file."""
    merged = dict(file_cfg)
    for key, value in flags.items():
        if value is not None:
            merged[key] = value
    return merged


def _parse_levels(text) -> tuple[float, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(float(v) for v in text)
    try:
        return tuple(float(v) for v in str(text).split(",") if v.strip())
    except ValueError as exc:
        raise click.UsageError(f"bad treatment levels {text!r}") from exc


def _dgp_from_config(cfg: dict, seed: int) -> DGPConfig:
    dgp = cfg.get("dgp", {})
    kwargs = {k: v for k, v in dgp.items()}
    if "beta_shapes" in kwargs:
        kwargs["beta_shapes"] = tuple(tuple(p) for p in kwargs["beta_shapes"])
    for key in ("pair_means", "gamma", "xi"):
        if key in kwargs:
            kwargs[key] = tuple(kwargs[key])
    kwargs.setdefault("seed", seed)
    return DGPConfig(**kwargs)


def _write_json(path: Path, doc: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def _write_csv(path: Path, header: list[str], rows: list[list]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def load_dataset(units_path, observations_path, grid: QuantileGrid) -> Dataset:
    """Read per-unit treatments/covariates and raw observations from CSV.

    The units file needs header ``unit_id,treatment,x1,...,xd``; the
    observations file needs ``unit_id,value`` with at least one row per
    unit.
    """
    units_path, observations_path = Path(units_path), Path(observations_path)
    for p in (units_path, observations_path):
        if not p.exists():
            raise DataError(f"input file not found: {p}")

    meta: dict[str, tuple[float, np.ndarray]] = {}
    with open(units_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[:2] != ["unit_id", "treatment"]:
            raise DataError(
                f"{units_path}: expected header unit_id,treatment,x1,...,xd"
            )
        d = len(header) - 2
        if d < 1:
            raise DataError(f"{units_path}: no covariate columns")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2 + d or any(f.strip() == "" for f in row):
                raise DataError(f"{units_path}:{lineno}: missing fields")
            uid = row[0]
            try:
                a = float(row[1])
                x = np.array([float(v) for v in row[2:]])
            except ValueError as exc:
                raise DataError(f"{units_path}:{lineno}: non-numeric field") from exc
            if uid in meta:
                raise DataError(f"{units_path}:{lineno}: duplicate unit {uid!r}")
            meta[uid] = (a, x)
    if not meta:
        raise DataError(f"{units_path}: no units")

    obs: dict[str, list[float]] = {uid: [] for uid in meta}
    with open(observations_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header != ["unit_id", "value"]:
            raise DataError(f"{observations_path}: expected header unit_id,value")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataError(f"{observations_path}:{lineno}: expected 2 fields")
            uid = row[0]
            if uid not in meta:
                raise DataError(
                    f"{observations_path}:{lineno}: unknown unit {uid!r}"
                )
            try:
                obs[uid].append(float(row[1]))
            except ValueError as exc:
                raise DataError(
                    f"{observations_path}:{lineno}: non-numeric value"
                ) from exc

    units = []
    for uid, (a, x) in meta.items():
        if not obs[uid]:
            raise DataError(f"unit {uid!r} has zero observations")
        yq = empirical_quantile_function(EmpiricalSample(np.array(obs[uid])), grid)
        units.append(Unit(id=uid, a=a, x=x, yq=yq))
    return Dataset(tuple(units), grid)


def _get_dataset(cfg: dict, grid: QuantileGrid) -> Dataset:
    if cfg.get("units") and cfg.get("observations"):
        return load_dataset(cfg["units"], cfg["observations"], grid)
    if "n_units" in cfg or "dgp" in cfg:
        dgp = _dgp_from_config(cfg, cfg.get("seed", 0))
        data = simulate_dataset(
            dgp, int(cfg.get("n_units", 1000)), grid,
            np.random.default_rng(int(cfg.get("seed", 0))),
        )
        return data.dataset
    raise click.UsageError(
        "provide --units/--observations paths or a dgp/n_units config"
    )


def _trainer_from_config(cfg: dict, grid: QuantileGrid):
    choice = cfg.get("nuisance", "nfr-cnf")
    seed = int(cfg.get("seed", 0))
    if choice == "oracle":
        return oracle_trainer(_dgp_from_config(cfg, seed), grid)
    if choice == "nfr-cnf":
        epochs = int(cfg.get("max_epochs", 100))
        return learned_trainer(
            grid,
            nfr_config=TrainConfig(max_epochs=epochs, seed=seed),
            cnf_config=TrainConfig(max_epochs=epochs, seed=seed + 1),
        )
    raise click.UsageError(f"unknown nuisance {choice!r} (use nfr-cnf or oracle)")


def _bandwidth_from_config(cfg: dict, dataset: Dataset, kernel, trainer) -> Bandwidth:
    bw = cfg.get("bandwidth", "auto")
    if bw == "auto":
        a_levels = _parse_levels(cfg.get("treatment_levels", "0.0"))
        selection = plug_in_bandwidth(
            dataset, trainer, kernel, a=a_levels[0],
            folds=int(cfg.get("folds", 2)), seed=int(cfg.get("seed", 0)),
        )
        return selection.h_star
    return Bandwidth(float(bw))


common_options = [
    click.option("--config", "config_path", type=str, default=None, help="JSON config file"),
    click.option("--seed", type=int, default=None),
    click.option("--kernel", "kernel_name", type=click.Choice(KERNEL_NAMES), default=None),
    click.option("--out", "out_dir", type=str, default=None, help="output directory"),
]


def _with_options(opts):
    def wrap(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn
    return wrap


@click.group()
@click.version_option(__version__)
def cli():
    """Distributional causal effects of continuous treatments."""
    _apply_thread_cap()


@cli.command()
@_with_options(common_options)
@click.option("--n-units", type=int, default=None)
def simulate(config_path, seed, kernel_name, out_dir, n_units):
    """Draw a synthetic dataset and write units/observations CSV files."""
    cfg = _resolve(
        _load_config_file(config_path), seed=seed, n_units=n_units, out=out_dir
    )
    cfg.setdefault("seed", 0)
    cfg.setdefault("n_units", 1000)
    out = Path(cfg.get("out", "."))
    dgp = _dgp_from_config(cfg, int(cfg["seed"]))
    grid = QuantileGrid()
    data = simulate_dataset(
        dgp, int(cfg["n_units"]), grid, np.random.default_rng(int(cfg["seed"]))
    )
    units_rows = [
        [u.id, float(u.a), *[float(v) for v in u.x]]
        for u in data.dataset.units
    ]
    d = data.dataset.d
    _write_csv(
        out / "units.csv",
        ["unit_id", "treatment", *[f"x{j+1}" for j in range(d)]],
        units_rows,
    )
    obs_rows = [
        [u.id, float(v)]
        for u, row in zip(data.dataset.units, data.observations)
        for v in row
    ]
    _write_csv(out / "observations.csv", ["unit_id", "value"], obs_rows)
    _write_json(out / "simulate.json", {"config": cfg, "n_units": data.dataset.n})
    click.echo(f"wrote {data.dataset.n} units to {out}")


@cli.command()
@_with_options(common_options)
@click.option("--units", "units_path", type=str, default=None)
@click.option("--observations", "observations_path", type=str, default=None)
@click.option("--max-epochs", type=int, default=None)
def fit(config_path, seed, kernel_name, out_dir, units_path, observations_path, max_epochs):
    """Train both nuisance models on a dataset and persist their weights."""
    cfg = _resolve(
        _load_config_file(config_path),
        seed=seed, units=units_path, observations=observations_path,
        max_epochs=max_epochs, out=out_dir,
    )
    cfg.setdefault("seed", 0)
    out = Path(cfg.get("out", "."))
    grid = QuantileGrid()
    dataset = _get_dataset(cfg, grid)
    epochs = int(cfg.get("max_epochs", 100))
    a, x, yq = dataset.treatments(), dataset.covariates(), dataset.quantile_matrix()
    m = nfr_fit(a, x, yq, grid, config=TrainConfig(max_epochs=epochs, seed=int(cfg["seed"])))
    p = cnf_fit(a, x, config=TrainConfig(max_epochs=epochs, seed=int(cfg["seed"]) + 1))
    _write_json(out / "nfr_weights.json", nfr_to_dict(m))
    _write_json(out / "cnf_weights.json", cnf_to_dict(p))
    _write_json(out / "fit.json", {"config": cfg, "n_units": dataset.n})
    click.echo(f"fitted nuisances on {dataset.n} units; weights in {out}")


def _estimate_core(cfg: dict):
    grid = QuantileGrid()
    dataset = _get_dataset(cfg, grid)
    kernel = Kernel(cfg.get("kernel", "epanechnikov"))
    trainer = _trainer_from_config(cfg, grid)
    h = _bandwidth_from_config(cfg, dataset, kernel, trainer)
    levels = _parse_levels(cfg.get("treatment_levels", "-0.5,0.0,0.5"))
    folds = int(cfg.get("folds", 2))
    seed = int(cfg.get("seed", 0))
    estimators = cfg.get("estimators", ["dr", "ipw", "dml"])
    results = {}
    prefit = None
    for a in levels:
        results[a] = {}
        for name in estimators:
            res = cross_fit(
                dataset, trainer, name, kernel, h, a,
                folds=folds, seed=seed, prefit=prefit,
            )
            prefit = res.nuisances
            results[a][name] = res
    return dataset, kernel, h, levels, results, prefit


@cli.command()
@_with_options(common_options)
@click.option("--units", "units_path", type=str, default=None)
@click.option("--observations", "observations_path", type=str, default=None)
@click.option("--bandwidth", type=str, default=None, help="float or 'auto'")
@click.option("--treatment-levels", type=str, default=None)
@click.option("--folds", type=int, default=None)
@click.option("--nuisance", type=click.Choice(["nfr-cnf", "oracle"]), default=None)
def estimate(config_path, seed, kernel_name, out_dir, units_path,
             observations_path, bandwidth, treatment_levels, folds, nuisance):
    """Cross-fitted DR/IPW/DML estimates at the requested treatment levels."""
    cfg = _resolve(
        _load_config_file(config_path),
        seed=seed, kernel=kernel_name, units=units_path,
        observations=observations_path, bandwidth=bandwidth,
        treatment_levels=treatment_levels, folds=folds, nuisance=nuisance,
        out=out_dir,
    )
    cfg.setdefault("seed", 0)
    out = Path(cfg.get("out", "."))
    dataset, kernel, h, levels, results, _ = _estimate_core(cfg)
    doc = {
        "config": {**cfg, "resolved_bandwidth": h.h, "kernel": kernel.name},
        "levels": dataset.grid.levels.tolist(),
        "estimates": {
            str(a): {
                name: res.estimate.values.tolist() for name, res in by_name.items()
            }
            for a, by_name in results.items()
        },
    }
    _write_json(out / "estimate.json", doc)
    rows = [
        [name, float(a), float(t), float(v)]
        for a, by_name in results.items()
        for name, res in by_name.items()
        for t, v in zip(dataset.grid.levels, res.estimate.values)
    ]
    _write_csv(out / "estimate.csv", ["estimator", "a", "level", "value"], rows)
    click.echo(f"estimates written to {out}")


@cli.command()
@_with_options(common_options)
@click.option("--units", "units_path", type=str, default=None)
@click.option("--observations", "observations_path", type=str, default=None)
@click.option("--bandwidth", type=str, default=None)
@click.option("--treatment-levels", type=str, default=None)
@click.option("--folds", type=int, default=None)
@click.option("--nuisance", type=click.Choice(["nfr-cnf", "oracle"]), default=None)
@click.option("--alpha", type=float, default=None)
def band(config_path, seed, kernel_name, out_dir, units_path, observations_path,
         bandwidth, treatment_levels, folds, nuisance, alpha):
    """DML estimates with bias correction and uniform confidence bands."""
    cfg = _resolve(
        _load_config_file(config_path),
        seed=seed, kernel=kernel_name, units=units_path,
        observations=observations_path, bandwidth=bandwidth,
        treatment_levels=treatment_levels, folds=folds, nuisance=nuisance,
        alpha=alpha, out=out_dir,
    )
    cfg.setdefault("seed", 0)
    cfg["estimators"] = ["dml"]
    out = Path(cfg.get("out", "."))
    alpha_v = float(cfg.get("alpha", 0.05))
    dataset, kernel, h, levels, results, _ = _estimate_core(cfg)
    reports = {}
    for a in levels:
        res = results[a]["dml"]

        def reuse_dml(bw, _a=a, _res=res):
            return cross_fit(
                dataset, lambda _d: None, "dml", kernel, Bandwidth(bw), _a,
                folds=int(cfg.get("folds", 2)), seed=int(cfg["seed"]),
                prefit=_res.nuisances,
            ).estimate

        bias = bias_estimate(
            dataset, res.nuisances[0], kernel, a, h, estimator=reuse_dml
        )
        cov = covariance_estimate(
            dataset, res.folds, res.nuisances, kernel, a, h
        )
        paths = simulate_gaussian_process(cov, 10_000, int(cfg["seed"]))
        q_hat = sup_quantile(paths.paths, alpha_v)
        reports[a] = confidence_band(
            res.estimate, bias, h, dataset.n, q_hat, alpha_v,
            cov=cov, clipped_eigenvalues=paths.clipped_eigenvalues,
            floor_hits=res.floor_hits,
        )
    doc = {
        "config": {**cfg, "resolved_bandwidth": h.h, "kernel": kernel.name},
        "bands": {str(a): rep.to_dict() for a, rep in reports.items()},
    }
    _write_json(out / "band.json", doc)
    rows = [
        [float(a), float(t), float(th), float(lo), float(up)]
        for a, rep in reports.items()
        for t, th, lo, up in zip(
            dataset.grid.levels, rep.theta_hat.values,
            rep.lower.values, rep.upper.values,
        )
    ]
    _write_csv(out / "band.csv", ["a", "level", "theta", "lower", "upper"], rows)
    click.echo(f"bands written to {out}")


@cli.command(name="benchmark")
@_with_options(common_options)
@click.option("--n-units", type=int, default=None)
@click.option("--replications", type=int, default=None)
@click.option("--nuisance", type=click.Choice(["nfr-cnf", "oracle"]), default=None)
@click.option("--treatment-levels", type=str, default=None)
def benchmark_cmd(config_path, seed, kernel_name, out_dir, n_units,
                  replications, nuisance, treatment_levels):
    """Monte Carlo estimator comparison on the synthetic generator."""
    cfg = _resolve(
        _load_config_file(config_path),
        seed=seed, kernel=kernel_name, n_units=n_units,
        replications=replications, nuisance=nuisance,
        treatment_levels=treatment_levels, out=out_dir,
    )
    cfg.setdefault("seed", 0)
    out = Path(cfg.get("out", "."))
    dgp = _dgp_from_config(cfg, int(cfg["seed"]))
    report = benchmark(
        dgp,
        treatment_levels=_parse_levels(cfg.get("treatment_levels", "-0.5,0.0,0.5")),
        n_units=int(cfg.get("n_units", 1000)),
        replications=int(cfg.get("replications", 5)),
        nuisance=cfg.get("nuisance", "oracle"),
        kernel=Kernel(cfg.get("kernel", "epanechnikov")),
        truth_mc_units=int(cfg.get("truth_mc_units", 200_000)),
    )
    doc = {"config": cfg, **report.to_dict()}
    _write_json(out / "benchmark.json", doc)
    rows = [
        [r.estimator, float(r.a), int(r.replication), float(r.mae)]
        for r in report.rows
    ]
    _write_csv(out / "benchmark.csv", ["estimator", "a", "replication", "mae"], rows)
    click.echo(f"benchmark written to {out}")


@cli.command()
@_with_options(common_options)
@click.option("--mode", type=click.Choice(["sample-size", "bandwidth"]), required=True)
@click.option("--replications", type=int, default=None)
@click.option("--n-units", type=int, default=None)
def sensitivity(config_path, seed, kernel_name, out_dir, mode, replications, n_units):
    """Sensitivity sweeps over sample size or bandwidth multiples."""
    cfg = _resolve(
        _load_config_file(config_path),
        seed=seed, kernel=kernel_name, replications=replications,
        n_units=n_units, out=out_dir,
    )
    cfg.setdefault("seed", 0)
    out = Path(cfg.get("out", "."))
    dgp = _dgp_from_config(cfg, int(cfg["seed"]))
    reps = int(cfg.get("replications", 5))
    if mode == "sample-size":
        sizes = tuple(int(s) for s in cfg.get("sizes", (1000, 5000, 25000, 100000)))
        report = sensitivity_sample_size(dgp, sizes=sizes, replications=reps)
    else:
        multiples = tuple(float(m) for m in cfg.get("multiples", (1/6, 1/4, 1/2, 1, 2, 4, 6)))
        report = sensitivity_bandwidth(
            dgp, multiples=multiples, replications=reps,
            n_units=int(cfg.get("n_units", 1000)),
        )
    doc = {"config": cfg, **report.to_dict()}
    _write_json(out / f"sensitivity_{mode}.json", doc)
    rows = [
        [p.parameter, float(a), p.mae_mean[a], p.mae_sd[a]]
        for p in report.points
        for a in sorted(p.mae_mean)
    ]
    _write_csv(
        out / f"sensitivity_{mode}.csv",
        ["value", "a", "mae_mean", "mae_sd"],
        rows,
    )
    click.echo(f"sensitivity results written to {out}")


def main(argv=None):
    try:
        cli.main(args=argv, standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except (click.UsageError, click.BadParameter) as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except DataError as exc:
        click.echo(f"data error: {exc}", err=True)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
