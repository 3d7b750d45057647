"""Distributional causal inference for continuous treatments.

Estimates the average potential outcome distribution of a continuous
treatment in Wasserstein space via kernel-smoothed doubly robust, inverse
probability weighted, and debiased machine learning estimators, with
cross-fitted neural nuisances, plug-in bandwidth selection, and simulated
uniform confidence bands.
"""

from .api import DistributionalEffect, QuantileRegressor, TreatmentDensity
from .cnf import CnfModel, cnf_fit, cnf_from_dict, cnf_to_dict, log_density
from .distspace import (
    DEFAULT_LEVELS,
    HEADLINE_LEVELS,
    EmpiricalSample,
    GridMismatchError,
    QuantileFunction,
    QuantileGrid,
    barycenter,
    empirical_quantile_function,
    empirical_quantile_matrix,
    frechet_objective,
    wasserstein2,
)
from .estimators import (
    DEFAULT_PROPENSITY_FLOOR,
    ESTIMATOR_NAMES,
    CrossFitResult,
    Dataset,
    NuisancePair,
    Unit,
    cross_fit,
    dist_ate,
    dist_dml,
    dist_dr,
    dist_ipw,
    fold_indices,
    influence_values,
)
from .inference import (
    BandReport,
    BandwidthSelection,
    bias_estimate,
    confidence_band,
    covariance_estimate,
    pilot_bandwidth,
    select_bandwidth,
    simulate_gaussian_process,
    sup_quantile,
)
from .kernels import (
    DEFAULT_KERNEL_NAME,
    KERNEL_NAMES,
    Bandwidth,
    Kernel,
    eval_kernel,
    moments,
    scaled_eval,
)
from .nfr import NfrModel, isotonic_projection, nfr_fit, nfr_from_dict, nfr_to_dict
from .nncore import NumericalError, TrainConfig
from .simlab import (
    DGPConfig,
    benchmark,
    ground_truth,
    learned_trainer,
    oracle_trainer,
    plug_in_bandwidth,
    sensitivity_bandwidth,
    sensitivity_sample_size,
    simulate_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "BandReport",
    "BandwidthSelection",
    "Bandwidth",
    "CnfModel",
    "CrossFitResult",
    "DEFAULT_KERNEL_NAME",
    "DEFAULT_LEVELS",
    "DEFAULT_PROPENSITY_FLOOR",
    "DGPConfig",
    "Dataset",
    "DistributionalEffect",
    "ESTIMATOR_NAMES",
    "EmpiricalSample",
    "GridMismatchError",
    "HEADLINE_LEVELS",
    "KERNEL_NAMES",
    "Kernel",
    "NfrModel",
    "NuisancePair",
    "NumericalError",
    "QuantileFunction",
    "QuantileGrid",
    "QuantileRegressor",
    "TrainConfig",
    "TreatmentDensity",
    "Unit",
    "barycenter",
    "benchmark",
    "bias_estimate",
    "cnf_fit",
    "cnf_from_dict",
    "cnf_to_dict",
    "confidence_band",
    "covariance_estimate",
    "cross_fit",
    "dist_ate",
    "dist_dml",
    "dist_dr",
    "dist_ipw",
    "empirical_quantile_function",
    "empirical_quantile_matrix",
    "eval_kernel",
    "fold_indices",
    "frechet_objective",
    "ground_truth",
    "influence_values",
    "isotonic_projection",
    "learned_trainer",
    "log_density",
    "moments",
    "nfr_fit",
    "nfr_from_dict",
    "nfr_to_dict",
    "oracle_trainer",
    "pilot_bandwidth",
    "plug_in_bandwidth",
    "scaled_eval",
    "select_bandwidth",
    "sensitivity_bandwidth",
    "sensitivity_sample_size",
    "simulate_dataset",
    "simulate_gaussian_process",
    "sup_quantile",
    "wasserstein2",
]
