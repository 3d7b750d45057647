"""Shared feed-forward network machinery for the two nuisance models.

A network is a plain list of float64 weight/bias tensors with tanh hidden
activations and an identity output layer.  Reverse-mode gradients come from
torch autograd on CPU in double precision, which keeps training deterministic
for a fixed seed and makes the finite-difference gradient checks exact to
roundoff.  The optimizer is Adam with decoupled weight decay plus a
halve-on-plateau learning-rate schedule, and the best-validation parameters
are the ones returned from a fit.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import torch

torch.set_default_dtype(torch.float64)

SCHEMA_VERSION = 1

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class NumericalError(RuntimeError):
    """A non-finite value appeared during evaluation or training."""


@dataclass
class TrainConfig:
    learning_rate: float = 0.003
    batch_size: int = 128
    weight_decay: float = 0.001
    plateau_patience: int = 10
    max_epochs: int = 100
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")


@dataclass
class Mlp:
    """Affine layers with tanh hidden activations, identity output."""

    widths: tuple[int, ...]
    weights: list[torch.Tensor]
    biases: list[torch.Tensor]

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    def parameters(self) -> list[torch.Tensor]:
        return [*self.weights, *self.biases]


def init_mlp(widths: Sequence[int], rng: np.random.Generator) -> Mlp:
    """Xavier-uniform initialized network, seeded through ``rng``."""
    widths = tuple(int(w) for w in widths)
    if len(widths) < 2:
        raise ValueError("need at least an input and an output width")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        weights.append(torch.tensor(w, requires_grad=True))
        biases.append(torch.zeros(fan_out, requires_grad=True))
    return Mlp(widths, weights, biases)


def forward_t(net: Mlp, x: torch.Tensor) -> torch.Tensor:
    """Batched forward pass on (B, d_in) -> (B, d_out) tensors."""
    h = x
    last = net.n_layers - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i < last:
            h = torch.tanh(h)
    return h


def forward(net: Mlp, x) -> np.ndarray:
    """Forward pass for a single input vector, with per-layer finite checks."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.widths[0],):
        raise ValueError(
            f"input length {x.shape} does not match first layer width {net.widths[0]}"
        )
    with torch.no_grad():
        h = torch.tensor(x)
        last = net.n_layers - 1
        for i, (w, b) in enumerate(zip(net.weights, net.biases)):
            h = h @ w.T + b
            if i < last:
                h = torch.tanh(h)
            if not torch.isfinite(h).all():
                raise NumericalError(f"non-finite values after layer {i}")
    return h.numpy()


def gradient(
    net: Mlp, loss: Callable[[torch.Tensor], torch.Tensor], batch
) -> list[np.ndarray]:
    """Exact reverse-mode gradients of the mean batch loss.

    ``loss`` maps the (B, d_out) output tensor to a scalar tensor.  Returns
    one gradient array per parameter in ``net.parameters()`` order.
    """
    batch = torch.as_tensor(np.asarray(batch, dtype=np.float64))
    out = forward_t(net, batch)
    if not torch.isfinite(out).all():
        raise NumericalError("non-finite values in network output")
    value = loss(out)
    if not torch.isfinite(value):
        raise NumericalError("non-finite loss value")
    params = net.parameters()
    grads = torch.autograd.grad(value, params, allow_unused=True)
    return [
        torch.zeros_like(p).numpy() if g is None else g.detach().numpy().copy()
        for p, g in zip(params, grads)
    ]


@dataclass
class AdamState:
    """First/second moment accumulators and step counter."""

    m: list[torch.Tensor]
    v: list[torch.Tensor]
    step: int = 0
    lr_scale: float = 1.0

    @classmethod
    def for_params(cls, params: Sequence[torch.Tensor]) -> "AdamState":
        return cls(
            m=[torch.zeros_like(p) for p in params],
            v=[torch.zeros_like(p) for p in params],
        )


def adam_step(
    state: AdamState,
    params: Sequence[torch.Tensor],
    grads: Sequence[torch.Tensor],
    config: TrainConfig,
) -> None:
    """One Adam update with decoupled weight decay, in place."""
    state.step += 1
    t = state.step
    lr = config.learning_rate * state.lr_scale
    bc1 = 1.0 - ADAM_BETA1**t
    bc2 = 1.0 - ADAM_BETA2**t
    with torch.no_grad():
        for p, g, m, v in zip(params, grads, state.m, state.v):
            m.mul_(ADAM_BETA1).add_(g, alpha=1.0 - ADAM_BETA1)
            v.mul_(ADAM_BETA2).addcmul_(g, g, value=1.0 - ADAM_BETA2)
            denom = (v / bc2).sqrt_().add_(ADAM_EPS)
            p.add_(-lr * (m / bc1) / denom)
            if config.weight_decay:
                p.add_(p, alpha=-lr * config.weight_decay)


@dataclass
class FitResult:
    """Best parameters seen during training plus the loss history."""

    best_params: list[torch.Tensor]
    best_val_loss: float
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    lr_halvings: int = 0


def train(
    params: list[torch.Tensor],
    batch_loss: Callable[[np.ndarray], torch.Tensor],
    n_train: int,
    val_loss: Callable[[], float],
    config: TrainConfig,
    rng: np.random.Generator,
) -> FitResult:
    """Minibatch Adam loop with plateau halving and best-checkpoint return.

    ``batch_loss`` maps an index array into the training set to a scalar loss
    tensor; ``val_loss`` evaluates the current parameters on held-out data.
    If the validation loss fails to improve for ``plateau_patience`` epochs
    the learning rate is halved (once per trigger) and the wait restarts.
    """
    state = AdamState.for_params(params)
    best_val = val_loss()
    best = [p.detach().clone() for p in params]
    result = FitResult(best_params=best, best_val_loss=best_val)
    wait = 0
    for _ in range(config.max_epochs):
        order = rng.permutation(n_train)
        epoch_loss = 0.0
        n_batches = 0
        for start in range(0, n_train, config.batch_size):
            idx = order[start : start + config.batch_size]
            value = batch_loss(idx)
            if not torch.isfinite(value):
                raise NumericalError("non-finite training loss; aborting fit")
            grads = torch.autograd.grad(value, params, allow_unused=True)
            grads = [
                torch.zeros_like(p) if g is None else g
                for p, g in zip(params, grads)
            ]
            adam_step(state, params, grads, config)
            epoch_loss += float(value.detach())
            n_batches += 1
        result.train_losses.append(epoch_loss / max(n_batches, 1))
        current = val_loss()
        result.val_losses.append(current)
        if current < result.best_val_loss:
            result.best_val_loss = current
            result.best_params = [p.detach().clone() for p in params]
            wait = 0
        else:
            wait += 1
            if wait >= config.plateau_patience:
                state.lr_scale *= 0.5
                result.lr_halvings += 1
                wait = 0
    return result


def restore(params: Sequence[torch.Tensor], saved: Sequence[torch.Tensor]) -> None:
    with torch.no_grad():
        for p, s in zip(params, saved):
            p.copy_(s)


def mlp_to_dict(net: Mlp) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "widths": list(net.widths),
        "weights": [w.detach().numpy().tolist() for w in net.weights],
        "biases": [b.detach().numpy().tolist() for b in net.biases],
    }


def mlp_from_dict(doc: dict) -> Mlp:
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported weight schema {doc.get('schema_version')!r}")
    widths = tuple(int(w) for w in doc["widths"])
    weights = [
        torch.tensor(np.asarray(w, dtype=np.float64), requires_grad=True)
        for w in doc["weights"]
    ]
    biases = [
        torch.tensor(np.asarray(b, dtype=np.float64), requires_grad=True)
        for b in doc["biases"]
    ]
    net = Mlp(widths, weights, biases)
    for w, (fan_in, fan_out) in zip(weights, zip(widths[:-1], widths[1:])):
        if w.shape != (fan_out, fan_in):
            raise ValueError("weight shapes inconsistent with widths")
    return net


def save_mlp(net: Mlp, path) -> None:
    with open(path, "w") as fh:
        json.dump(mlp_to_dict(net), fh)


def load_mlp(path) -> Mlp:
    with open(path) as fh:
        return mlp_from_dict(json.load(fh))


def clone_mlp(net: Mlp) -> Mlp:
    return mlp_from_dict(copy.deepcopy(mlp_to_dict(net)))
