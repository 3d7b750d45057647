"""Neural functional regression of quantile functions on (treatment, covariates).

The model is a representation network producing a low-dimensional vector from
(A, X), combined through a trainable coefficient matrix with a fixed B-spline
basis over the quantile-level axis.  Predictions are quantile functions on the
dataset grid; no monotonicity is imposed (the estimators consume predictions
pointwise per level), but an isotonic projection is available for reporting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from numpy.typing import NDArray
from scipy.interpolate import BSpline

from .distspace import QuantileFunction, QuantileGrid
from .nncore import (
    Mlp,
    NumericalError,
    TrainConfig,
    forward_t,
    init_mlp,
    mlp_from_dict,
    mlp_to_dict,
    restore,
    train,
)

DEFAULT_REP_DIM = 8
DEFAULT_N_BASIS = 8
DEFAULT_HIDDEN = (64, 64)


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped uniform B-spline basis on [0, 1]."""

    v: int = DEFAULT_N_BASIS
    degree: int = 3

    def __post_init__(self):
        if self.v < self.degree + 1:
            raise ValueError("need at least degree+1 basis functions")

    @property
    def knots(self) -> NDArray[np.float64]:
        k = self.degree
        n_interior = self.v - k - 1
        interior = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
        return np.concatenate([np.zeros(k + 1), interior, np.ones(k + 1)])

    def design_matrix(self, t: NDArray[np.float64]) -> NDArray[np.float64]:
        """Basis values at each t: shape (len(t), v)."""
        t = np.asarray(t, dtype=np.float64)
        if np.any(t < 0.0) or np.any(t > 1.0):
            raise ValueError("basis evaluation points must lie in [0, 1]")
        dm = BSpline.design_matrix(t, self.knots, self.degree, extrapolate=False)
        return dm.toarray()


def basis_eval(basis: BSplineBasis, t: float) -> NDArray[np.float64]:
    """Values of all basis functions at a single level t in [0, 1]."""
    return basis.design_matrix(np.asarray([t]))[0]


@dataclass
class NfrModel:
    """Fitted functional-regression nuisance m(a; x)."""

    rep_net: Mlp
    coeffs: torch.Tensor  # (u, v)
    basis: BSplineBasis
    grid: QuantileGrid

    def __post_init__(self):
        u = self.rep_net.widths[-1]
        if tuple(self.coeffs.shape) != (u, self.basis.v):
            raise ValueError("coefficient matrix shape inconsistent with u, v")

    @property
    def covariate_dim(self) -> int:
        return self.rep_net.widths[0] - 1

    def basis_on_grid(self) -> torch.Tensor:
        # (v, T) basis values at the grid levels
        return torch.tensor(self.basis.design_matrix(self.grid.levels).T)

    def predict_batch(self, a: float, x: NDArray[np.float64]) -> NDArray[np.float64]:
        """Predicted quantile values for many covariate rows at one treatment.

        ``x`` has shape (N, d); returns (N, T).
        """
        x = np.asarray(x, dtype=np.float64)
        inp = np.column_stack([np.full(len(x), float(a)), x])
        with torch.no_grad():
            rep = forward_t(self.rep_net, torch.tensor(inp))  # (N, u)
            out = rep @ self.coeffs @ self.basis_on_grid()  # (N, T)
        return out.numpy()

    def __call__(self, a: float, x: NDArray[np.float64]) -> QuantileFunction:
        return nfr_predict(self, a, x)


def nfr_predict(model: NfrModel, a: float, x) -> QuantileFunction:
    """Predicted quantile function at one (treatment, covariates) point."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.covariate_dim,):
        raise ValueError(
            f"covariate length {x.shape} does not match model dimension "
            f"{model.covariate_dim}"
        )
    values = model.predict_batch(a, x[None, :])[0]
    return QuantileFunction(model.grid, values)


def isotonic_projection(qf: QuantileFunction) -> QuantileFunction:
    """Nearest non-decreasing function in L2 (pool adjacent violators).

    For reporting only; estimators use raw predictions.
    """
    values = qf.values.copy()
    # pool-adjacent-violators on uniform weights
    level_vals = list(values)
    blocks = [[v] for v in level_vals]
    means = [v for v in level_vals]
    i = 0
    while i < len(means) - 1:
        if means[i] > means[i + 1] + 0.0:
            blocks[i] = blocks[i] + blocks[i + 1]
            means[i] = float(np.mean(blocks[i]))
            del blocks[i + 1], means[i + 1]
            if i > 0:
                i -= 1
        else:
            i += 1
    out = np.concatenate([[m] * len(b) for m, b in zip(means, blocks)])
    return QuantileFunction(qf.grid, out)


def _trapezoid_weights(levels: NDArray[np.float64]) -> NDArray[np.float64]:
    w = np.zeros_like(levels)
    w[:-1] += np.diff(levels) / 2.0
    w[1:] += np.diff(levels) / 2.0
    return w


def _loss_tensor(
    pred: torch.Tensor, target: torch.Tensor, weights: torch.Tensor, metric: str
) -> torch.Tensor:
    err = pred - target
    if metric == "squared":
        per_level = err * err
    elif metric == "absolute":
        per_level = err.abs()
    else:
        raise ValueError(f"unknown loss metric {metric!r}")
    return (per_level * weights).sum(dim=-1).mean()


def nfr_loss(
    model: NfrModel,
    a: NDArray[np.float64],
    x: NDArray[np.float64],
    yq: NDArray[np.float64],
    metric: str = "squared",
) -> float:
    """Trapezoid-quadrature loss between predictions and target quantiles.

    ``yq`` holds one target quantile vector per row, on the model grid.
    """
    a = np.atleast_1d(np.asarray(a, dtype=np.float64))
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    yq = np.atleast_2d(np.asarray(yq, dtype=np.float64))
    weights = torch.tensor(_trapezoid_weights(model.grid.levels))
    inp = torch.tensor(np.column_stack([a, x]))
    target = torch.tensor(yq)
    with torch.no_grad():
        rep = forward_t(model.rep_net, inp)
        pred = rep @ model.coeffs @ model.basis_on_grid()
        value = _loss_tensor(pred, target, weights, metric)
    return float(value)


def nfr_fit(
    a: NDArray[np.float64],
    x: NDArray[np.float64],
    yq: NDArray[np.float64],
    grid: QuantileGrid,
    config: TrainConfig | None = None,
    rep_dim: int = DEFAULT_REP_DIM,
    n_basis: int = DEFAULT_N_BASIS,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    metric: str = "squared",
) -> NfrModel:
    """Train the functional regression on (a_i, x_i, yq_i) triples.

    Deterministic for a fixed config seed; returns the parameters with the
    best validation loss (90/10 split by default).
    """
    config = config or TrainConfig()
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    yq = np.asarray(yq, dtype=np.float64)
    n = len(a)
    if x.shape[0] != n or yq.shape[0] != n:
        raise ValueError("a, x, yq must have matching first dimensions")
    if yq.shape[1] != len(grid):
        raise ValueError("target quantile width does not match grid")

    rng = np.random.default_rng(config.seed)
    basis = BSplineBasis(v=n_basis)
    rep_net = init_mlp((1 + x.shape[1], *hidden, rep_dim), rng)
    bound = np.sqrt(6.0 / (rep_dim + n_basis))
    coeffs = torch.tensor(
        rng.uniform(-bound, bound, size=(rep_dim, n_basis)), requires_grad=True
    )
    model = NfrModel(rep_net, coeffs, basis, grid)

    perm = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n))) if n > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx, val_idx = perm, perm

    inp = torch.tensor(np.column_stack([a, x]))
    target = torch.tensor(yq)
    weights = torch.tensor(_trapezoid_weights(grid.levels))
    basis_grid = model.basis_on_grid()
    params = [*rep_net.parameters(), coeffs]

    def predict(idx: np.ndarray) -> torch.Tensor:
        rep = forward_t(rep_net, inp[idx])
        return rep @ coeffs @ basis_grid

    def batch_loss(idx: np.ndarray) -> torch.Tensor:
        return _loss_tensor(predict(train_idx[idx]), target[train_idx[idx]], weights, metric)

    def val_loss() -> float:
        with torch.no_grad():
            return float(
                _loss_tensor(predict(val_idx), target[val_idx], weights, metric)
            )

    result = train(params, batch_loss, len(train_idx), val_loss, config, rng)
    restore(params, result.best_params)
    if not all(torch.isfinite(p).all() for p in params):
        raise NumericalError("non-finite parameters after functional regression fit")
    return model


def nfr_to_dict(model: NfrModel) -> dict:
    return {
        "rep_net": mlp_to_dict(model.rep_net),
        "coeffs": model.coeffs.detach().numpy().tolist(),
        "u": model.rep_net.widths[-1],
        "v": model.basis.v,
        "degree": model.basis.degree,
        "knots": model.basis.knots.tolist(),
        "grid_levels": model.grid.levels.tolist(),
    }


def nfr_from_dict(doc: dict) -> NfrModel:
    rep_net = mlp_from_dict(doc["rep_net"])
    coeffs = torch.tensor(np.asarray(doc["coeffs"], dtype=np.float64), requires_grad=True)
    basis = BSplineBasis(v=int(doc["v"]), degree=int(doc["degree"]))
    grid = QuantileGrid(np.asarray(doc["grid_levels"], dtype=np.float64))
    return NfrModel(rep_net, coeffs, basis, grid)
