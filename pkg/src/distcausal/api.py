"""Scikit-learn style estimator wrappers around the functional core.

These classes follow the fit/predict and get_params/set_params conventions so
the nuisance models and the causal estimator compose with the wider
ecosystem (grid search over their hyperparameters, cloning, pipelines over
the tabular inputs).  The underlying computations live in the functional
modules; the wrappers own configuration and fitted state only.
"""

from __future__ import annotations

import numpy as np
from numpy.typing import NDArray
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array

from .cnf import cnf_fit
from .distspace import QuantileFunction, QuantileGrid
from .estimators import Dataset, NuisancePair, cross_fit
from .inference import pilot_bandwidth
from .kernels import Bandwidth, Kernel
from .nfr import nfr_fit
from .nncore import TrainConfig
from .simlab import learned_trainer


def _check_fitted(est, attr: str):
    if not hasattr(est, attr):
        raise RuntimeError(
            f"{type(est).__name__} is not fitted yet; call fit() first"
        )


def _validate_ax(a, x):
    a = np.asarray(a, dtype=np.float64).ravel()
    x = check_array(x, dtype=np.float64)
    if len(a) != len(x):
        raise ValueError("a and X must have the same number of rows")
    return a, x


class QuantileRegressor(BaseEstimator):
    """Functional regression of quantile-function outcomes on (a, X)."""

    def __init__(
        self,
        rep_dim: int = 8,
        n_basis: int = 8,
        hidden: tuple[int, ...] = (64, 64),
        learning_rate: float = 0.003,
        batch_size: int = 128,
        weight_decay: float = 0.001,
        max_epochs: int = 100,
        seed: int = 0,
    ):
        self.rep_dim = rep_dim
        self.n_basis = n_basis
        self.hidden = hidden
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.seed = seed

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            weight_decay=self.weight_decay,
            max_epochs=self.max_epochs,
            seed=self.seed,
        )

    def fit(self, a, X, y_quantiles, grid: QuantileGrid | None = None):
        a, X = _validate_ax(a, X)
        yq = check_array(y_quantiles, dtype=np.float64)
        grid = grid or QuantileGrid()
        self.model_ = nfr_fit(
            a, X, yq, grid,
            config=self._train_config(),
            rep_dim=self.rep_dim,
            n_basis=self.n_basis,
            hidden=tuple(self.hidden),
        )
        return self

    def predict(self, a: float, X) -> NDArray[np.float64]:
        _check_fitted(self, "model_")
        X = check_array(X, dtype=np.float64)
        return self.model_.predict_batch(float(a), X)


class TreatmentDensity(BaseEstimator):
    """Conditional density of a continuous treatment given covariates."""

    def __init__(
        self,
        hidden: tuple[int, ...] = (32, 32),
        ode_steps: int = 20,
        learning_rate: float = 0.003,
        batch_size: int = 128,
        weight_decay: float = 0.001,
        max_epochs: int = 100,
        seed: int = 0,
    ):
        self.hidden = hidden
        self.ode_steps = ode_steps
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.weight_decay = weight_decay
        self.max_epochs = max_epochs
        self.seed = seed

    def fit(self, a, X):
        a, X = _validate_ax(a, X)
        self.model_ = cnf_fit(
            a, X,
            config=TrainConfig(
                learning_rate=self.learning_rate,
                batch_size=self.batch_size,
                weight_decay=self.weight_decay,
                max_epochs=self.max_epochs,
                seed=self.seed,
            ),
            hidden=tuple(self.hidden),
            ode_steps=self.ode_steps,
        )
        return self

    def score_samples(self, a, X) -> NDArray[np.float64]:
        """Log-density log p(a_i | x_i) per row."""
        _check_fitted(self, "model_")
        a, X = _validate_ax(a, X)
        return self.model_.log_density_batch(a, X)

    def score(self, a, X) -> float:
        return float(np.mean(self.score_samples(a, X)))


class DistributionalEffect(BaseEstimator):
    """Cross-fitted distributional potential-outcome estimator.

    ``nuisances`` is either "nfr-cnf" (train both neural nuisances per fold)
    or a prefit :class:`NuisancePair` used for every fold.
    """

    def __init__(
        self,
        estimator: str = "dml",
        kernel: str = "epanechnikov",
        bandwidth: float | None = None,
        folds: int = 2,
        propensity_floor: float = 1e-3,
        nuisances="nfr-cnf",
        max_epochs: int = 100,
        seed: int = 0,
    ):
        self.estimator = estimator
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.folds = folds
        self.propensity_floor = propensity_floor
        self.nuisances = nuisances
        self.max_epochs = max_epochs
        self.seed = seed

    def fit(self, dataset: Dataset):
        self.dataset_ = dataset
        h = (
            Bandwidth(self.bandwidth)
            if self.bandwidth is not None
            else pilot_bandwidth(dataset.treatments())
        )
        self.h_ = h
        if isinstance(self.nuisances, NuisancePair):
            pair = self.nuisances
            self.trainer_ = lambda _d: pair
        elif self.nuisances == "nfr-cnf":
            cfg = TrainConfig(max_epochs=self.max_epochs, seed=self.seed)
            self.trainer_ = learned_trainer(
                dataset.grid, nfr_config=cfg, cnf_config=cfg
            )
        else:
            raise ValueError(f"unknown nuisance choice {self.nuisances!r}")
        self._prefit = {}
        return self

    def predict(self, a: float) -> QuantileFunction:
        """Estimated average potential outcome at treatment level ``a``."""
        _check_fitted(self, "dataset_")
        result = cross_fit(
            self.dataset_,
            self.trainer_,
            self.estimator,
            Kernel(self.kernel),
            self.h_,
            float(a),
            folds=self.folds,
            seed=self.seed,
            floor=self.propensity_floor,
            prefit=self._prefit.get("pairs"),
        )
        self._prefit["pairs"] = result.nuisances
        return result.estimate

    def effect(self, a: float, a_ref: float) -> QuantileFunction:
        """Distributional treatment effect between two levels."""
        apo_a = self.predict(a)
        apo_ref = self.predict(a_ref)
        return QuantileFunction(apo_a.grid, apo_a.values - apo_ref.values)
