"""Quantile-function representation of one-dimensional distributions.

Every outcome distribution in this package lives as a vector of quantile
values on a shared, fixed grid of levels in (0, 1).  On that representation
the Wasserstein-2 distance is the L2 distance between quantile functions and
the barycenter (Frechet mean) is the pointwise arithmetic mean, so all
operations here are exact per level and integrals reduce to quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

DEFAULT_LEVELS = np.arange(1, 100) / 100.0
HEADLINE_LEVELS = np.arange(1, 10) / 10.0


class GridMismatchError(ValueError):
    """Two quantile functions do not share the same level grid."""


@dataclass(frozen=True)
class QuantileGrid:
    """Strictly increasing quantile levels in the open interval (0, 1)."""

    levels: NDArray[np.float64] = field(default_factory=lambda: DEFAULT_LEVELS.copy())

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=np.float64)
        if levels.ndim != 1 or levels.size == 0:
            raise ValueError("levels must be a non-empty 1-D array")
        if np.any(levels <= 0.0) or np.any(levels >= 1.0):
            raise ValueError("levels must lie strictly inside (0, 1)")
        if np.any(np.diff(levels) <= 0.0):
            raise ValueError("levels must be strictly increasing")
        object.__setattr__(self, "levels", levels)
        self.levels.setflags(write=False)

    def __len__(self) -> int:
        return self.levels.size

    def __eq__(self, other) -> bool:
        if not isinstance(other, QuantileGrid):
            return NotImplemented
        return self.levels.shape == other.levels.shape and bool(
            np.array_equal(self.levels, other.levels)
        )

    def __hash__(self) -> int:
        return hash(self.levels.tobytes())

    def headline_indices(self, headline=HEADLINE_LEVELS) -> NDArray[np.intp]:
        """Indices of the headline sub-grid inside ``levels``.

        Raises if some headline level is not (numerically) on the grid.
        """
        idx = np.searchsorted(self.levels, headline)
        idx = np.clip(idx, 0, len(self) - 1)
        if not np.allclose(self.levels[idx], headline, atol=1e-12):
            raise ValueError("headline levels are not a subset of the grid")
        return idx

    def quadrature_weights(self) -> NDArray[np.float64]:
        """Weights integrating a function of t over [0, 1].

        Trapezoid rule between grid points; the first and last values are
        extended as constants down to 0 and up to 1, so the weights sum to 1.
        """
        t = self.levels
        w = np.zeros_like(t)
        w[:-1] += np.diff(t) / 2.0
        w[1:] += np.diff(t) / 2.0
        w[0] += t[0]
        w[-1] += 1.0 - t[-1]
        return w


@dataclass(frozen=True)
class QuantileFunction:
    """A distribution given by its quantile values on a fixed grid."""

    grid: QuantileGrid
    values: NDArray[np.float64]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.shape != (len(self.grid),):
            raise ValueError(
                f"values shape {values.shape} does not match grid of size {len(self.grid)}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("quantile values must be finite")
        object.__setattr__(self, "values", values)
        self.values.setflags(write=False)

    def is_nondecreasing(self) -> bool:
        return bool(np.all(np.diff(self.values) >= 0.0))

    def mean(self) -> float:
        """Mean of the distribution: quadrature of the quantile function."""
        return float(self.grid.quadrature_weights() @ self.values)

    def headline_values(self) -> NDArray[np.float64]:
        return self.values[self.grid.headline_indices()]


@dataclass(frozen=True)
class EmpiricalSample:
    """Raw observed outcome values for a single unit."""

    observations: NDArray[np.float64]

    def __post_init__(self):
        obs = np.asarray(self.observations, dtype=np.float64)
        if obs.ndim != 1 or obs.size == 0:
            raise ValueError("empty observation set")
        if not np.all(np.isfinite(obs)):
            raise ValueError("observations must be finite")
        object.__setattr__(self, "observations", obs)
        self.observations.setflags(write=False)


def _require_same_grid(*qfs: QuantileFunction) -> QuantileGrid:
    grid = qfs[0].grid
    for q in qfs[1:]:
        if q.grid != grid:
            raise GridMismatchError("quantile functions are on different grids")
    return grid


def empirical_quantile_function(
    sample: EmpiricalSample, grid: QuantileGrid, interpolation: str = "inverted_cdf"
) -> QuantileFunction:
    """Left-continuous generalized inverse of the empirical CDF on the grid.

    ``interpolation`` may be "inverted_cdf" (the generalized inverse, default)
    or "linear" for the interpolating variant.
    """
    if interpolation not in ("inverted_cdf", "linear"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    values = np.quantile(sample.observations, grid.levels, method=interpolation)
    return QuantileFunction(grid, values)


def empirical_quantile_matrix(
    observations: NDArray[np.float64], grid: QuantileGrid
) -> NDArray[np.float64]:
    """Row-wise inverted-CDF quantiles for many units at once.

    ``observations`` has one row per unit; returns an (n_units, n_levels)
    matrix equal to stacking :func:`empirical_quantile_function` per row.
    """
    obs = np.asarray(observations, dtype=np.float64)
    n = obs.shape[1]
    srt = np.sort(obs, axis=1)
    idx = np.ceil(grid.levels * n).astype(int) - 1
    idx = np.clip(idx, 0, n - 1)
    return srt[:, idx]


def wasserstein2(q1: QuantileFunction, q2: QuantileFunction) -> float:
    """Wasserstein-2 distance between two distributions on the shared grid."""
    grid = _require_same_grid(q1, q2)
    w = grid.quadrature_weights()
    diff = q1.values - q2.values
    return float(np.sqrt(w @ (diff * diff)))


def barycenter(samples: list[QuantileFunction]) -> QuantileFunction:
    """Wasserstein barycenter: the pointwise mean of quantile functions."""
    if not samples:
        raise ValueError("barycenter of an empty list is undefined")
    grid = _require_same_grid(*samples)
    stacked = np.stack([q.values for q in samples])
    return QuantileFunction(grid, stacked.mean(axis=0))


def frechet_objective(
    candidate: QuantileFunction, samples: list[QuantileFunction]
) -> float:
    """Mean squared Wasserstein-2 distance from the samples to a candidate."""
    if not samples:
        raise ValueError("objective over an empty list is undefined")
    _require_same_grid(candidate, *samples)
    return float(
        np.mean([wasserstein2(q, candidate) ** 2 for q in samples])
    )
