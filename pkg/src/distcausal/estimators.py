"""Distributional potential-outcome estimators and cross-fitting.

Three estimators of the distributional average potential outcome at a
treatment level ``a``, all pointwise over the quantile grid:

* regression form:     mean_i m(a; x_i)
* weighting form:      mean_i K_h(A_i - a) / p(a | x_i) * Yq_i
* doubly robust form:  mean_i [ m(a; x_i) + K_h(A_i - a) / p(a | x_i)
                                * (Yq_i - m(a; x_i)) ]

Cross-fitting partitions the units into K folds, trains the nuisances on
each complement, evaluates the chosen estimator on the held-out fold, and
averages fold estimates with weights N_k / N.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np
from numpy.typing import NDArray

from .distspace import GridMismatchError, QuantileFunction, QuantileGrid
from .kernels import Bandwidth, Kernel, scaled_eval

DEFAULT_PROPENSITY_FLOOR = 1e-3


@dataclass(frozen=True)
class Unit:
    """One subject: treatment, covariates, estimated quantile function."""

    id: str
    a: float
    x: NDArray[np.float64]
    yq: QuantileFunction

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        if not np.isfinite(self.a):
            raise ValueError(f"unit {self.id}: non-finite treatment")
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError(f"unit {self.id}: covariates must be a finite vector")
        object.__setattr__(self, "x", x)
        self.x.setflags(write=False)


@dataclass(frozen=True)
class Dataset:
    """N independent units sharing a covariate dimension and quantile grid."""

    units: tuple[Unit, ...]
    grid: QuantileGrid

    def __post_init__(self):
        units = tuple(self.units)
        if not units:
            raise ValueError("dataset must contain at least one unit")
        d = units[0].x.size
        for u in units:
            if u.x.size != d:
                raise ValueError("inconsistent covariate dimension across units")
            if u.yq.grid != self.grid:
                raise GridMismatchError(f"unit {u.id} is on a different grid")
        object.__setattr__(self, "units", units)

    @property
    def n(self) -> int:
        return len(self.units)

    @property
    def d(self) -> int:
        return self.units[0].x.size

    def treatments(self) -> NDArray[np.float64]:
        return np.array([u.a for u in self.units])

    def covariates(self) -> NDArray[np.float64]:
        return np.stack([u.x for u in self.units])

    def quantile_matrix(self) -> NDArray[np.float64]:
        return np.stack([u.yq.values for u in self.units])

    def subset(self, idx: Sequence[int]) -> "Dataset":
        return Dataset(tuple(self.units[i] for i in idx), self.grid)


class OutcomeRegression(Protocol):
    """Batched interface m(a; x) -> quantile values."""

    def predict_batch(self, a: float, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """(N, d) covariates -> (N, T) quantile values at treatment a."""


class PropensityDensity(Protocol):
    """Batched interface p(a | x) -> density values."""

    def density_batch(self, a: NDArray[np.float64], x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Paired (N,) treatments and (N, d) covariates -> (N,) densities."""


@dataclass(frozen=True)
class NuisancePair:
    """Outcome regression and generalized-propensity model, fit together."""

    m: OutcomeRegression
    p: PropensityDensity


@dataclass
class EstimatorDiagnostics:
    """Side-channel counters populated by the weighting-based estimators."""

    floor_hits: int = 0


@dataclass(frozen=True)
class EstimatorConfig:
    kernel: Kernel = field(default_factory=Kernel)
    h: Bandwidth = field(default_factory=lambda: Bandwidth(0.1))
    propensity_floor: float = DEFAULT_PROPENSITY_FLOOR
    folds: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.propensity_floor <= 0:
            raise ValueError("propensity floor must be positive")
        if self.folds < 2:
            raise ValueError("cross-fitting requires at least two folds")


def _clipped_propensity(
    p: PropensityDensity,
    a: float,
    treatments: NDArray[np.float64],
    x: NDArray[np.float64],
    floor: float,
    diag: EstimatorDiagnostics | None,
) -> NDArray[np.float64]:
    dens = np.asarray(p.density_batch(np.full(len(x), a), x), dtype=np.float64)
    hits = int(np.sum(dens < floor))
    if diag is not None:
        diag.floor_hits += hits
    return np.maximum(dens, floor)


def dist_dr(dataset: Dataset, m: OutcomeRegression, a: float) -> QuantileFunction:
    """Regression-form estimate: average of m(a; x_i) over all units."""
    mhat = m.predict_batch(a, dataset.covariates())
    return QuantileFunction(dataset.grid, mhat.mean(axis=0))


def dist_ipw(
    dataset: Dataset,
    p: PropensityDensity,
    kernel: Kernel,
    h: Bandwidth,
    a: float,
    floor: float = DEFAULT_PROPENSITY_FLOOR,
    diag: EstimatorDiagnostics | None = None,
) -> QuantileFunction:
    """Weighting-form estimate with kernel-smoothed treatment matching."""
    kw = np.asarray(scaled_eval(kernel, h, dataset.treatments() - a))
    dens = _clipped_propensity(p, a, dataset.treatments(), dataset.covariates(), floor, diag)
    w = kw / dens
    values = (w[:, None] * dataset.quantile_matrix()).mean(axis=0)
    return QuantileFunction(dataset.grid, values)


def dist_dml(
    dataset: Dataset,
    nuisances: NuisancePair,
    kernel: Kernel,
    h: Bandwidth,
    a: float,
    floor: float = DEFAULT_PROPENSITY_FLOOR,
    diag: EstimatorDiagnostics | None = None,
) -> QuantileFunction:
    """Doubly robust estimate combining both nuisances."""
    values = influence_values(dataset, nuisances, kernel, h, a, floor, diag).mean(axis=0)
    return QuantileFunction(dataset.grid, values)


def influence_values(
    dataset: Dataset,
    nuisances: NuisancePair,
    kernel: Kernel,
    h: Bandwidth,
    a: float,
    floor: float = DEFAULT_PROPENSITY_FLOOR,
    diag: EstimatorDiagnostics | None = None,
) -> NDArray[np.float64]:
    """Per-unit doubly robust scores, one row per unit over the grid.

    Averaging the rows gives the doubly robust estimate; their empirical
    moments drive the covariance and bandwidth machinery.
    """
    x = dataset.covariates()
    mhat = nuisances.m.predict_batch(a, x)
    kw = np.asarray(scaled_eval(kernel, h, dataset.treatments() - a))
    dens = _clipped_propensity(nuisances.p, a, dataset.treatments(), x, floor, diag)
    w = kw / dens
    return mhat + w[:, None] * (dataset.quantile_matrix() - mhat)


ESTIMATOR_NAMES = ("dr", "ipw", "dml")


def _evaluate(
    name: str,
    dataset: Dataset,
    nuisances: NuisancePair,
    kernel: Kernel,
    h: Bandwidth,
    a: float,
    floor: float,
    diag: EstimatorDiagnostics | None,
) -> QuantileFunction:
    if name == "dr":
        return dist_dr(dataset, nuisances.m, a)
    if name == "ipw":
        return dist_ipw(dataset, nuisances.p, kernel, h, a, floor, diag)
    if name == "dml":
        return dist_dml(dataset, nuisances, kernel, h, a, floor, diag)
    raise ValueError(f"unknown estimator {name!r}; choose one of {ESTIMATOR_NAMES}")


def fold_indices(n: int, k: int, seed: int) -> list[NDArray[np.intp]]:
    """Seeded near-equal partition of range(n) into k folds.

    Uniform shuffle followed by a contiguous split; fold sizes differ by at
    most one.
    """
    if k < 2:
        raise ValueError("cross-fitting requires at least two folds")
    if k > n:
        raise ValueError(f"cannot split {n} units into {k} non-empty folds")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, k)]


@dataclass(frozen=True)
class CrossFitResult:
    estimate: QuantileFunction
    fold_estimates: tuple[QuantileFunction, ...]
    folds: tuple[NDArray[np.intp], ...]
    nuisances: tuple[NuisancePair, ...]
    floor_hits: int


def cross_fit(
    dataset: Dataset,
    trainer: Callable[[Dataset], NuisancePair],
    estimator: str,
    kernel: Kernel,
    h: Bandwidth,
    a: float,
    folds: int = 2,
    seed: int = 0,
    floor: float = DEFAULT_PROPENSITY_FLOOR,
    prefit: Sequence[NuisancePair] | None = None,
) -> CrossFitResult:
    """K-fold cross-fitted estimate at treatment level ``a``.

    ``trainer`` maps the complement data of each fold to a nuisance pair.
    ``prefit`` reuses nuisances from a previous call on the same partition
    (one per fold), skipping retraining.
    """
    parts = fold_indices(dataset.n, folds, seed)
    diag = EstimatorDiagnostics()
    fold_estimates = []
    fitted = []
    total = np.zeros(len(dataset.grid))
    for k, part in enumerate(parts):
        if prefit is not None:
            pair = prefit[k]
        else:
            rest = np.setdiff1d(np.arange(dataset.n), part)
            pair = trainer(dataset.subset(rest))
        fitted.append(pair)
        est_k = _evaluate(estimator, dataset.subset(part), pair, kernel, h, a, floor, diag)
        fold_estimates.append(est_k)
        total += len(part) / dataset.n * est_k.values
    return CrossFitResult(
        estimate=QuantileFunction(dataset.grid, total),
        fold_estimates=tuple(fold_estimates),
        folds=tuple(parts),
        nuisances=tuple(fitted),
        floor_hits=diag.floor_hits,
    )


def dist_ate(theta_a: QuantileFunction, theta_a2: QuantileFunction) -> QuantileFunction:
    """Distributional treatment effect: pointwise difference of two APOs."""
    if theta_a.grid != theta_a2.grid:
        raise GridMismatchError("treatment-effect inputs are on different grids")
    return QuantileFunction(theta_a.grid, theta_a.values - theta_a2.values)
