"""Second-order kernel functions and their bandwidth-scaled versions.

The scaled kernel K_h(x) = K(x/h)/h stands in for the Dirac delta inside the
continuous-treatment estimators; as h -> 0 it concentrates at x = 0.  All ten
kernels here are symmetric, integrate to one, and have vanishing first moment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from numpy.typing import NDArray

# Truncation radius for kernels supported on all of R.  Tail mass beyond 12
# is < 1e-30 for the gaussian and < 1e-5 for logistic/sigmoid.
UNBOUNDED_RADIUS = 12.0


def _uniform(u):
    return np.where(np.abs(u) <= 1.0, 0.5, 0.0)


def _triangular(u):
    return np.maximum(1.0 - np.abs(u), 0.0)


def _epanechnikov(u):
    return np.where(np.abs(u) <= 1.0, 0.75 * (1.0 - u * u), 0.0)


def _quartic(u):
    inside = np.abs(u) <= 1.0
    return np.where(inside, 15.0 / 16.0 * (1.0 - u * u) ** 2, 0.0)


def _triweight(u):
    inside = np.abs(u) <= 1.0
    return np.where(inside, 35.0 / 32.0 * (1.0 - u * u) ** 3, 0.0)


def _tricube(u):
    au = np.abs(u)
    return np.where(au <= 1.0, 70.0 / 81.0 * (1.0 - au**3) ** 3, 0.0)


def _gaussian(u):
    return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)


def _cosine(u):
    return np.where(np.abs(u) <= 1.0, np.pi / 4.0 * np.cos(np.pi / 2.0 * u), 0.0)


def _logistic(u):
    return 1.0 / (np.exp(u) + 2.0 + np.exp(-u))


def _sigmoid(u):
    return 2.0 / np.pi / (np.exp(u) + np.exp(-u))


_KERNELS: dict[str, tuple[Callable, bool]] = {
    # name -> (formula, compact support |u| <= 1)
    "uniform": (_uniform, True),
    "triangular": (_triangular, True),
    "epanechnikov": (_epanechnikov, True),
    "quartic": (_quartic, True),
    "triweight": (_triweight, True),
    "tricube": (_tricube, True),
    "gaussian": (_gaussian, False),
    "cosine": (_cosine, True),
    "logistic": (_logistic, False),
    "sigmoid": (_sigmoid, False),
}

KERNEL_NAMES = tuple(_KERNELS)
DEFAULT_KERNEL_NAME = "epanechnikov"


@dataclass(frozen=True)
class Kernel:
    """A named second-order kernel function."""

    name: str = DEFAULT_KERNEL_NAME

    def __post_init__(self):
        if self.name not in _KERNELS:
            raise ValueError(
                f"unknown kernel {self.name!r}; choose one of {sorted(_KERNELS)}"
            )

    @property
    def compact_support(self) -> bool:
        return _KERNELS[self.name][1]

    @property
    def support_radius(self) -> float:
        return 1.0 if self.compact_support else UNBOUNDED_RADIUS

    def __call__(self, u):
        return eval_kernel(self, u)


@dataclass(frozen=True)
class Bandwidth:
    """A positive smoothing bandwidth in treatment units."""

    h: float

    def __post_init__(self):
        if not (self.h > 0.0 and np.isfinite(self.h)):
            raise ValueError(f"bandwidth must be a positive finite real, got {self.h}")


def eval_kernel(kernel: Kernel, u) -> NDArray[np.float64] | float:
    """K(u), zero outside compact support."""
    u = np.asarray(u, dtype=np.float64)
    out = _KERNELS[kernel.name][0](u)
    if out.ndim == 0:
        return float(out)
    return out


def scaled_eval(kernel: Kernel, h: Bandwidth, x) -> NDArray[np.float64] | float:
    """K_h(x) = K(x/h) / h."""
    x = np.asarray(x, dtype=np.float64)
    out = _KERNELS[kernel.name][0](x / h.h) / h.h
    if out.ndim == 0:
        return float(out)
    return out


def moments(kernel: Kernel, n_points: int = 10_001) -> tuple[float, float, float, float]:
    """(int K, int uK, int u^2 K, int K^2) by trapezoid quadrature.

    Unbounded supports are truncated at |u| <= 12.
    """
    r = kernel.support_radius
    u = np.linspace(-r, r, n_points)
    k = eval_kernel(kernel, u)
    m0 = float(np.trapezoid(k, u))
    m1 = float(np.trapezoid(u * k, u))
    m2 = float(np.trapezoid(u * u * k, u))
    k2 = float(np.trapezoid(k * k, u))
    return m0, m1, m2, k2
