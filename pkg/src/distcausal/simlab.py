"""Synthetic benchmark: data generation, ground truth, and estimator scoring.

Each simulated unit draws covariates pairwise from unit-variance normals, a
treatment from a conditional normal whose variance is softplus of a covariate
index, and an outcome quantile function

    Q_i(t) = c + (1 - c) (E[gamma' X] + exp(A_i)) sum_j w_ij BetaInv_j(t) + eps_i

with softmax weights w_ij over products of covariate pairs and a per-unit
noise shift eps_i (a per-level noise would break monotonicity of a quantile
function).  Raw observations come from inverse-transform sampling of Q_i.
Ground truth at treatment level a is the Monte Carlo average of Q over fresh
covariate draws with A fixed at a and eps = 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np
from numpy.typing import NDArray
from scipy import stats

from .distspace import (
    QuantileFunction,
    QuantileGrid,
    empirical_quantile_matrix,
)
from .estimators import (
    Dataset,
    NuisancePair,
    Unit,
    cross_fit,
)
from .inference import (
    BandwidthSelection,
    bias_estimate,
    centered_covariance,
    influence_values,
    pilot_bandwidth,
    select_bandwidth,
)
from .kernels import Bandwidth, Kernel
from .nncore import TrainConfig
from .nfr import nfr_fit
from .cnf import cnf_fit

DEFAULT_PAIR_MEANS = (-2.0, -1.0, 0.0, 1.0, 2.0)
DEFAULT_BETA_SHAPES = ((2.0, 5.0), (5.0, 2.0), (2.0, 2.0), (1.0, 3.0), (3.0, 2.0))
DEFAULT_TREATMENT_LEVELS = (-0.5, 0.0, 0.5)
GROUND_TRUTH_UNITS = 200_000


def softplus(x):
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


@dataclass(frozen=True)
class DGPConfig:
    n: int = 10
    pair_means: tuple[float, ...] = DEFAULT_PAIR_MEANS
    gamma: tuple[float, ...] = field(default_factory=lambda: (0.05,) * 10)
    xi: tuple[float, ...] = field(default_factory=lambda: (0.02,) * 10)
    c: float = 0.2
    beta_shapes: tuple[tuple[float, float], ...] = DEFAULT_BETA_SHAPES
    obs_per_unit: int = 100
    noise_sd: float = 0.05  # the noise spec N(0, 0.05) read as sd = 0.05
    seed: int = 0

    def __post_init__(self):
        if self.n % 2 != 0:
            raise ValueError("covariate count must be even")
        if not 0.0 <= self.c <= 1.0:
            raise ValueError("c must lie in [0, 1]")
        if len(self.pair_means) != self.n // 2:
            raise ValueError("need one mean per covariate pair")
        if len(self.beta_shapes) != self.n // 2:
            raise ValueError("need one Beta shape pair per covariate pair")
        if any(a <= 0 or b <= 0 for a, b in self.beta_shapes):
            raise ValueError("Beta shapes must be positive")
        if self.obs_per_unit < 1:
            raise ValueError("obs_per_unit must be at least 1")
        if len(self.gamma) != self.n or len(self.xi) != self.n:
            raise ValueError("gamma and xi must have one entry per covariate")

    @property
    def covariate_means(self) -> NDArray[np.float64]:
        return np.repeat(np.asarray(self.pair_means, dtype=np.float64), 2)

    @property
    def mean_gamma_x(self) -> float:
        """E[gamma' X], available in closed form from the configured means."""
        return float(np.asarray(self.gamma) @ self.covariate_means)


def _beta_ppf_matrix(config: DGPConfig, t: NDArray[np.float64]) -> NDArray[np.float64]:
    """Inverse Beta CDFs of all mixture components at levels t: (n/2, len(t))."""
    return np.stack(
        [stats.beta.ppf(t, a, b) for a, b in config.beta_shapes]
    )


def _softmax_weights(config: DGPConfig, x: NDArray[np.float64]) -> NDArray[np.float64]:
    """Softmax mixture weights over covariate-pair products: (N, n/2)."""
    prods = x[:, 0::2] * x[:, 1::2]
    prods = prods - prods.max(axis=1, keepdims=True)
    e = np.exp(prods)
    return e / e.sum(axis=1, keepdims=True)


def _treatment_sd(config: DGPConfig, x: NDArray[np.float64]) -> NDArray[np.float64]:
    return np.sqrt(softplus(x @ np.asarray(config.xi)))


@dataclass(frozen=True)
class SimulatedData:
    """A generated dataset plus the noiseless truth used to simulate it."""

    dataset: Dataset
    true_quantiles: NDArray[np.float64]  # (N, T) including the eps shift
    observations: NDArray[np.float64]  # (N, obs_per_unit)


def simulate_dataset(
    config: DGPConfig,
    n_units: int,
    grid: QuantileGrid | None = None,
    rng: np.random.Generator | None = None,
) -> SimulatedData:
    """Vectorized draw of ``n_units`` units with empirical quantile functions."""
    grid = grid or QuantileGrid()
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    x = rng.normal(config.covariate_means, 1.0, size=(n_units, config.n))
    a = rng.normal(x @ np.asarray(config.gamma), _treatment_sd(config, x))
    w = _softmax_weights(config, x)
    eps = rng.normal(0.0, config.noise_sd, size=n_units)
    factor = config.mean_gamma_x + np.exp(a)
    scale = (1.0 - config.c) * factor

    b_grid = _beta_ppf_matrix(config, grid.levels)  # (J, T)
    true_q = config.c + scale[:, None] * (w @ b_grid) + eps[:, None]

    u = rng.uniform(size=(n_units, config.obs_per_unit))
    b_obs = np.stack(
        [stats.beta.ppf(u, alpha, beta) for alpha, beta in config.beta_shapes]
    )  # (J, N, obs)
    mix = np.einsum("nj,jno->no", w, b_obs)
    obs = config.c + scale[:, None] * mix + eps[:, None]

    yq = empirical_quantile_matrix(obs, grid)
    units = tuple(
        Unit(id=str(i), a=float(a[i]), x=x[i], yq=QuantileFunction(grid, yq[i]))
        for i in range(n_units)
    )
    return SimulatedData(
        dataset=Dataset(units, grid), true_quantiles=true_q, observations=obs
    )


def generate_unit(
    config: DGPConfig, rng: np.random.Generator, grid: QuantileGrid | None = None
) -> Unit:
    """Draw a single unit (the N=1 case of the vectorized generator)."""
    return simulate_dataset(config, 1, grid, rng).dataset.units[0]


def ground_truth(
    config: DGPConfig,
    a: float,
    grid: QuantileGrid | None = None,
    mc_units: int = GROUND_TRUTH_UNITS,
    seed: int | None = None,
) -> QuantileFunction:
    """Monte Carlo distributional average potential outcome at level ``a``."""
    if mc_units < 1000:
        raise ValueError("ground truth needs at least 1000 Monte Carlo units")
    grid = grid or QuantileGrid()
    rng = np.random.default_rng(
        np.random.SeedSequence([config.seed if seed is None else seed, 0x6789])
    )
    x = rng.normal(config.covariate_means, 1.0, size=(mc_units, config.n))
    w = _softmax_weights(config, x)
    scale = (1.0 - config.c) * (config.mean_gamma_x + math.exp(a))
    b_grid = _beta_ppf_matrix(config, grid.levels)
    values = config.c + scale * (w.mean(axis=0) @ b_grid)
    return QuantileFunction(grid, values)


def mae(estimate: QuantileFunction, truth: QuantileFunction) -> float:
    """Mean absolute error over the nine headline quantile levels."""
    if estimate.grid != truth.grid:
        raise ValueError("estimate and truth are on different grids")
    return float(
        np.mean(np.abs(estimate.headline_values() - truth.headline_values()))
    )


# ---------------------------------------------------------------------------
# closed-form (oracle) nuisances of the generator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OracleRegression:
    """The generator's own conditional-mean quantile function (eps = 0)."""

    config: DGPConfig
    grid: QuantileGrid
    bias_shift: float = 0.0

    def predict_batch(self, a: float, x: NDArray[np.float64]) -> NDArray[np.float64]:
        w = _softmax_weights(self.config, np.atleast_2d(x))
        scale = (1.0 - self.config.c) * (self.config.mean_gamma_x + math.exp(a))
        b_grid = _beta_ppf_matrix(self.config, self.grid.levels)
        return self.config.c + scale * (w @ b_grid) + self.bias_shift


@dataclass(frozen=True)
class OraclePropensity:
    """The generator's exact conditional treatment density."""

    config: DGPConfig
    density_scale: float = 1.0

    def density_batch(
        self, a: NDArray[np.float64], x: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        x = np.atleast_2d(x)
        mean = x @ np.asarray(self.config.gamma)
        sd = _treatment_sd(self.config, x)
        return self.density_scale * stats.norm.pdf(np.asarray(a), mean, sd)


def oracle_nuisances(
    config: DGPConfig,
    grid: QuantileGrid | None = None,
    m_bias: float = 0.0,
    p_scale: float = 1.0,
) -> NuisancePair:
    """Closed-form nuisance pair; optional deliberate misspecifications."""
    grid = grid or QuantileGrid()
    return NuisancePair(
        m=OracleRegression(config, grid, bias_shift=m_bias),
        p=OraclePropensity(config, density_scale=p_scale),
    )


# ---------------------------------------------------------------------------
# nuisance trainers
# ---------------------------------------------------------------------------


def oracle_trainer(config: DGPConfig, grid: QuantileGrid, m_bias=0.0, p_scale=1.0):
    pair = oracle_nuisances(config, grid, m_bias=m_bias, p_scale=p_scale)

    def trainer(_train_data: Dataset) -> NuisancePair:
        return pair

    return trainer


def learned_trainer(
    grid: QuantileGrid,
    nfr_config: TrainConfig | None = None,
    cnf_config: TrainConfig | None = None,
):
    """Fold trainer fitting the functional regression and the flow density."""

    def trainer(train_data: Dataset) -> NuisancePair:
        a = train_data.treatments()
        x = train_data.covariates()
        yq = train_data.quantile_matrix()
        m = nfr_fit(a, x, yq, grid, config=nfr_config)
        p = cnf_fit(a, x, config=cnf_config)
        return NuisancePair(m=m, p=p)

    return trainer


# ---------------------------------------------------------------------------
# plug-in bandwidth pipeline
# ---------------------------------------------------------------------------


def plug_in_bandwidth(
    dataset: Dataset,
    trainer,
    kernel: Kernel,
    a: float,
    folds: int = 2,
    seed: int = 0,
    floor: float = 1e-3,
    pilot_c: float = 1.0,
) -> BandwidthSelection:
    """End-to-end plug-in bandwidth at treatment level ``a``.

    Pilot rule, cross-fitted nuisances at the pilot, two-bandwidth bias
    profile and centered score covariance on the headline levels, then the
    closed-form selection rule cross-checked against a grid search.
    """
    pilot = pilot_bandwidth(dataset.treatments(), pilot_c)
    result = cross_fit(
        dataset, trainer, "dml", kernel, pilot, a, folds=folds, seed=seed, floor=floor
    )
    headline = dataset.grid.headline_indices()

    def cross_fitted_dml(bw: float) -> QuantileFunction:
        reuse = cross_fit(
            dataset,
            trainer,
            "dml",
            kernel,
            Bandwidth(bw),
            a,
            folds=folds,
            seed=seed,
            floor=floor,
            prefit=result.nuisances,
        )
        return reuse.estimate

    bias = bias_estimate(
        dataset, result.nuisances[0], kernel, a, pilot, floor,
        estimator=cross_fitted_dml,
    )[headline]
    cov = np.zeros((len(headline), len(headline)))
    for part, pair in zip(result.folds, result.nuisances):
        phi = influence_values(
            dataset.subset(part), pair, kernel, pilot, a, floor
        )[:, headline]
        cov += centered_covariance(phi, pilot)
    cov /= len(result.folds)
    return select_bandwidth(bias, np.diag(cov), dataset.n, pilot)


# ---------------------------------------------------------------------------
# benchmark protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BenchmarkRow:
    estimator: str
    a: float
    replication: int
    mae: float
    headline_estimate: tuple[float, ...]


@dataclass(frozen=True)
class BenchmarkReport:
    rows: tuple[BenchmarkRow, ...]
    replications: int
    n_units: int
    config: DGPConfig

    def mae_summary(self) -> dict[tuple[str, float], tuple[float, float]]:
        """(estimator, a) -> (mean MAE, sd of MAE) over replications."""
        out: dict[tuple[str, float], tuple[float, float]] = {}
        keys = sorted({(r.estimator, r.a) for r in self.rows})
        for key in keys:
            vals = np.array(
                [r.mae for r in self.rows if (r.estimator, r.a) == key]
            )
            out[key] = (float(vals.mean()), float(vals.std(ddof=0)))
        return out

    def to_dict(self) -> dict:
        return {
            "replications": self.replications,
            "n_units": self.n_units,
            "config": asdict(self.config),
            "noise_convention": "eps ~ N(0, sd=0.05), per-unit constant shift",
            "rows": [
                {
                    "estimator": r.estimator,
                    "a": r.a,
                    "replication": r.replication,
                    "mae": r.mae,
                    "headline_estimate": list(r.headline_estimate),
                }
                for r in self.rows
            ],
            "mae_summary": [
                {"estimator": k[0], "a": k[1], "mean": v[0], "sd": v[1]}
                for k, v in self.mae_summary().items()
            ],
        }


def benchmark(
    config: DGPConfig,
    estimators: tuple[str, ...] = ("dr", "ipw", "dml"),
    treatment_levels: tuple[float, ...] = DEFAULT_TREATMENT_LEVELS,
    n_units: int = 10_000,
    replications: int = 20,
    nuisance: str = "oracle",
    kernel: Kernel | None = None,
    folds: int = 2,
    grid: QuantileGrid | None = None,
    fixed_h: float | None = None,
    h_multiple: float = 1.0,
    nfr_config: TrainConfig | None = None,
    cnf_config: TrainConfig | None = None,
    truth_mc_units: int = GROUND_TRUTH_UNITS,
    m_bias: float = 0.0,
    p_scale: float = 1.0,
) -> BenchmarkReport:
    """Replicate the two-fold cross-fitted estimator comparison.

    Each replication draws a fresh dataset, cross-fits every requested
    estimator at every treatment level, and scores MAE against the Monte
    Carlo ground truth.  The bandwidth is the pilot rule per replication
    (times ``h_multiple``) unless ``fixed_h`` pins it.
    """
    if replications < 1:
        raise ValueError("need at least one replication")
    grid = grid or QuantileGrid()
    kernel = kernel or Kernel()
    truths = {
        a: ground_truth(config, a, grid, mc_units=truth_mc_units)
        for a in treatment_levels
    }
    seeds = np.random.SeedSequence(config.seed).spawn(replications)
    rows: list[BenchmarkRow] = []
    for rep, seed_seq in enumerate(seeds):
        rng = np.random.default_rng(seed_seq)
        data = simulate_dataset(config, n_units, grid, rng)
        if nuisance == "oracle":
            trainer = oracle_trainer(config, grid, m_bias=m_bias, p_scale=p_scale)
        elif nuisance == "nfr-cnf":
            rep_seed = int(seed_seq.generate_state(1)[0] % (2**31))
            trainer = learned_trainer(
                grid,
                nfr_config=_reseed(nfr_config, rep_seed),
                cnf_config=_reseed(cnf_config, rep_seed + 1),
            )
        else:
            raise ValueError(f"unknown nuisance choice {nuisance!r}")
        h = Bandwidth(
            (fixed_h if fixed_h is not None
             else pilot_bandwidth(data.dataset.treatments()).h) * h_multiple
        )
        prefit = None
        for a in treatment_levels:
            for name in estimators:
                result = cross_fit(
                    data.dataset, trainer, name, kernel, h, a,
                    folds=folds, seed=rep, prefit=prefit,
                )
                prefit = result.nuisances
                rows.append(
                    BenchmarkRow(
                        estimator=name,
                        a=a,
                        replication=rep,
                        mae=mae(result.estimate, truths[a]),
                        headline_estimate=tuple(result.estimate.headline_values()),
                    )
                )
    return BenchmarkReport(
        rows=tuple(rows), replications=replications, n_units=n_units, config=config
    )


def _reseed(cfg: TrainConfig | None, seed: int) -> TrainConfig:
    cfg = cfg or TrainConfig()
    return TrainConfig(
        learning_rate=cfg.learning_rate,
        batch_size=cfg.batch_size,
        weight_decay=cfg.weight_decay,
        plateau_patience=cfg.plateau_patience,
        max_epochs=cfg.max_epochs,
        seed=seed,
        val_fraction=cfg.val_fraction,
    )


@dataclass(frozen=True)
class CurvePoint:
    parameter: float
    mae_mean: dict[float, float]  # per treatment level
    mae_sd: dict[float, float]


@dataclass(frozen=True)
class CurveReport:
    parameter_name: str
    points: tuple[CurvePoint, ...]

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter_name,
            "points": [
                {
                    "value": p.parameter,
                    "mae_mean": {str(a): v for a, v in p.mae_mean.items()},
                    "mae_sd": {str(a): v for a, v in p.mae_sd.items()},
                }
                for p in self.points
            ],
        }


def _curve_point(report: BenchmarkReport, value: float, estimator: str) -> CurvePoint:
    summary = report.mae_summary()
    means = {a: v[0] for (name, a), v in summary.items() if name == estimator}
    sds = {a: v[1] for (name, a), v in summary.items() if name == estimator}
    return CurvePoint(parameter=value, mae_mean=means, mae_sd=sds)


def sensitivity_sample_size(
    config: DGPConfig,
    sizes: tuple[int, ...] = (1000, 5000, 25000, 100000),
    replications: int = 20,
    fixed_h: float | None = None,
    estimator: str = "dml",
    **kwargs,
) -> CurveReport:
    """MAE curve over sample sizes at a fixed bandwidth."""
    if fixed_h is None:
        probe = simulate_dataset(
            config, max(sizes), rng=np.random.default_rng(config.seed)
        )
        fixed_h = pilot_bandwidth(probe.dataset.treatments()).h
    points = []
    for size in sizes:
        report = benchmark(
            config, estimators=(estimator,), n_units=size,
            replications=replications, fixed_h=fixed_h, **kwargs,
        )
        points.append(_curve_point(report, float(size), estimator))
    return CurveReport(parameter_name="sample_size", points=tuple(points))


def sensitivity_bandwidth(
    config: DGPConfig,
    multiples: tuple[float, ...] = (1 / 6, 1 / 4, 1 / 2, 1.0, 2.0, 4.0, 6.0),
    replications: int = 20,
    n_units: int = 10_000,
    h_star: float | None = None,
    estimator: str = "dml",
    kernel: Kernel | None = None,
    **kwargs,
) -> CurveReport:
    """MAE curve over bandwidth multiples of the selected h*."""
    grid = kwargs.get("grid") or QuantileGrid()
    kernel = kernel or Kernel()
    if h_star is None:
        probe = simulate_dataset(
            config, n_units, grid, np.random.default_rng(config.seed)
        )
        selection = plug_in_bandwidth(
            probe.dataset, oracle_trainer(config, grid), kernel, a=0.0
        )
        h_star = selection.h_star.h
    points = []
    for mult in multiples:
        report = benchmark(
            config, estimators=(estimator,), n_units=n_units,
            replications=replications, fixed_h=h_star * mult, kernel=kernel,
            **kwargs,
        )
        points.append(_curve_point(report, float(mult), estimator))
    return CurveReport(parameter_name="bandwidth_multiple", points=tuple(points))
