"""Conditional continuous normalizing flow for the generalized propensity score.

A scalar treatment is transported back to a conditional Gaussian base by a
fixed-step RK4 integration of dz/dtau = g(z, X, tau).  Because the flowed
state is one-dimensional, the Jacobian trace in the instantaneous
change-of-variables formula is the single partial dg/dz, which is computed
analytically by forward-mode propagation through the tanh layers (itself a
differentiable torch graph, so training backpropagates through the
discretized solver: discretize-then-optimize).

log p(a | x) = log N(z0; mu(x), sigma(x)^2) + integral of dg/dz dtau,
with the integral running from tau1 (where z = a) down to tau0.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from numpy.typing import NDArray

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

DEFAULT_ODE_STEPS = 20
DEFAULT_HIDDEN = (32, 32)

LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def _g_and_dz(net: Mlp, z: torch.Tensor, x: torch.Tensor, tau: float):
    """g(z, x, tau) and its exact partial dg/dz, both batched.

    Forward-mode: alongside each layer's activations, propagate the
    derivative of the activations with respect to the z input column.
    """
    b = z.shape[0]
    tau_col = torch.full((b, 1), float(tau), dtype=z.dtype)
    h = torch.cat([z, x, tau_col], dim=1)
    dh = torch.zeros_like(h)
    dh[:, 0] = 1.0
    last = net.n_layers - 1
    for i, (w, bias) in enumerate(zip(net.weights, net.biases)):
        pre = h @ w.T + bias
        dpre = dh @ w.T
        if i < last:
            h = torch.tanh(pre)
            dh = (1.0 - h * h) * dpre
        else:
            h, dh = pre, dpre
    return h, dh  # both (B, 1)


@dataclass
class CnfModel:
    """Flow dynamics plus conditional-Gaussian base networks."""

    mu_net: Mlp
    logsigma_net: Mlp
    g_net: Mlp
    tau0: float = 0.0
    tau1: float = 1.0
    ode_steps: int = DEFAULT_ODE_STEPS

    def __post_init__(self):
        if self.ode_steps < 1:
            raise ValueError("ode_steps must be at least 1")

    @property
    def covariate_dim(self) -> int:
        return self.mu_net.widths[0]

    def log_density_batch(
        self, a: NDArray[np.float64], x: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        a = np.atleast_1d(np.asarray(a, dtype=np.float64))
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        with torch.no_grad():
            out = _log_density_t(self, torch.tensor(a), torch.tensor(x))
        return out.numpy()

    def density_batch(
        self, a: NDArray[np.float64], x: NDArray[np.float64]
    ) -> NDArray[np.float64]:
        return np.exp(self.log_density_batch(a, x))

    def __call__(self, a: float, x) -> float:
        """Conditional density value p(a | x)."""
        return float(np.exp(log_density(self, a, x)))


def _flow_backward_t(
    model: CnfModel, a: torch.Tensor, x: torch.Tensor
) -> tuple[torch.Tensor, torch.Tensor]:
    """RK4 from tau1 (z = a) to tau0, accumulating the dg/dz integral.

    ``a`` is (B,), ``x`` is (B, d); returns z0 and the divergence integral,
    both (B,).
    """
    n = model.ode_steps
    dt = (model.tau0 - model.tau1) / n
    z = a.reshape(-1, 1)
    ell = torch.zeros_like(z)
    tau = model.tau1
    for step in range(n):
        k1, d1 = _g_and_dz(model.g_net, z, x, tau)
        k2, d2 = _g_and_dz(model.g_net, z + 0.5 * dt * k1, x, tau + 0.5 * dt)
        k3, d3 = _g_and_dz(model.g_net, z + 0.5 * dt * k2, x, tau + 0.5 * dt)
        k4, d4 = _g_and_dz(model.g_net, z + dt * k3, x, tau + dt)
        z = z + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        ell = ell + dt / 6.0 * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
        tau += dt
        if not torch.isfinite(z).all():
            raise NumericalError(f"non-finite flow state at integration step {step}")
    return z.reshape(-1), ell.reshape(-1)


def _base_log_density_t(
    model: CnfModel, z: torch.Tensor, x: torch.Tensor
) -> torch.Tensor:
    mu = forward_t(model.mu_net, x).reshape(-1)
    logsigma = forward_t(model.logsigma_net, x).reshape(-1)
    std = (z - mu) * torch.exp(-logsigma)
    return -0.5 * std * std - logsigma - LOG_SQRT_2PI


def _log_density_t(model: CnfModel, a: torch.Tensor, x: torch.Tensor) -> torch.Tensor:
    z0, ell = _flow_backward_t(model, a, x)
    return _base_log_density_t(model, z0, x) + ell


def flow_backward(model: CnfModel, a: float, x) -> tuple[float, float]:
    """Integrate the treatment value back to the base space.

    Returns (z0, divergence integral).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with torch.no_grad():
        z0, ell = _flow_backward_t(model, torch.tensor([float(a)]), torch.tensor(x))
    return float(z0[0]), float(ell[0])


def base_log_density(model: CnfModel, z: float, x) -> float:
    """Gaussian log-density of the base variable given covariates."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with torch.no_grad():
        out = _base_log_density_t(model, torch.tensor([float(z)]), torch.tensor(x))
    return float(out[0])


def log_density(model: CnfModel, a: float, x) -> float:
    """Exact flow log-density log p(a | x) at the discretization."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    with torch.no_grad():
        out = _log_density_t(model, torch.tensor([float(a)]), torch.tensor(x))
    return float(out[0])


def init_cnf(
    covariate_dim: int,
    rng: np.random.Generator,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    ode_steps: int = DEFAULT_ODE_STEPS,
) -> CnfModel:
    mu_net = init_mlp((covariate_dim, *hidden, 1), rng)
    logsigma_net = init_mlp((covariate_dim, *hidden, 1), rng)
    g_net = init_mlp((covariate_dim + 2, *hidden, 1), rng)
    # start near the identity flow so the base fit dominates early training
    with torch.no_grad():
        g_net.weights[-1].mul_(0.01)
    return CnfModel(mu_net, logsigma_net, g_net, ode_steps=ode_steps)


def cnf_fit(
    a: NDArray[np.float64],
    x: NDArray[np.float64],
    config: TrainConfig | None = None,
    hidden: tuple[int, ...] = DEFAULT_HIDDEN,
    ode_steps: int = DEFAULT_ODE_STEPS,
    train_flow: bool = True,
) -> CnfModel:
    """Maximum-likelihood fit of the conditional density of a given x.

    With ``train_flow=False`` the dynamics stay frozen at initialization and
    only the conditional-Gaussian base is trained.  Deterministic per seed;
    returns the best-validation parameters.
    """
    config = config or TrainConfig()
    a = np.asarray(a, dtype=np.float64)
    x = np.asarray(x, dtype=np.float64)
    n = len(a)
    if n == 0:
        raise ValueError("empty training set")
    if x.shape[0] != n:
        raise ValueError("a and x must have matching first dimensions")

    rng = np.random.default_rng(config.seed)
    model = init_cnf(x.shape[1], rng, hidden=hidden, ode_steps=ode_steps)

    perm = rng.permutation(n)
    n_val = max(1, int(round(config.val_fraction * n))) if n > 1 else 0
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        train_idx, val_idx = perm, perm

    a_t = torch.tensor(a)
    x_t = torch.tensor(x)
    params = [
        *model.mu_net.parameters(),
        *model.logsigma_net.parameters(),
        *(model.g_net.parameters() if train_flow else []),
    ]

    def nll(idx) -> torch.Tensor:
        return -_log_density_t(model, a_t[idx], x_t[idx]).mean()

    def batch_loss(idx: np.ndarray) -> torch.Tensor:
        return nll(train_idx[idx])

    def val_loss() -> float:
        with torch.no_grad():
            return float(nll(val_idx))

    result = train(params, batch_loss, len(train_idx), val_loss, config, rng)
    restore(params, result.best_params)
    return model


def normalization_check(
    model: CnfModel,
    x,
    n_points: int = 801,
    n_sigma: float = 8.0,
) -> float:
    """Quadrature of exp(log p(a | x)) over a wide treatment range."""
    x = np.asarray(x, dtype=np.float64)
    with torch.no_grad():
        mu = float(forward_t(model.mu_net, torch.tensor(x[None, :])).reshape(-1)[0])
        sigma = float(
            np.exp(forward_t(model.logsigma_net, torch.tensor(x[None, :])).reshape(-1)[0])
        )
    a_grid = np.linspace(mu - n_sigma * sigma, mu + n_sigma * sigma, n_points)
    dens = model.density_batch(a_grid, np.repeat(x[None, :], n_points, axis=0))
    return float(np.trapezoid(dens, a_grid))


def cnf_to_dict(model: CnfModel) -> dict:
    return {
        "mu_net": mlp_to_dict(model.mu_net),
        "logsigma_net": mlp_to_dict(model.logsigma_net),
        "g_net": mlp_to_dict(model.g_net),
        "tau0": model.tau0,
        "tau1": model.tau1,
        "ode_steps": model.ode_steps,
    }


def cnf_from_dict(doc: dict) -> CnfModel:
    return CnfModel(
        mu_net=mlp_from_dict(doc["mu_net"]),
        logsigma_net=mlp_from_dict(doc["logsigma_net"]),
        g_net=mlp_from_dict(doc["g_net"]),
        tau0=float(doc["tau0"]),
        tau1=float(doc["tau1"]),
        ode_steps=int(doc["ode_steps"]),
    )
