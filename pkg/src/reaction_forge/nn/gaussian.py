"""Diagonal Gaussian policy head with a state-independent log-std vector."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reaction_forge.errors import InputShapeError
from reaction_forge.nn.mlp import MlpParams, mlp_forward
from reaction_forge.nn.tensor import Tensor

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class GaussianHead:
    """Mean network plus one log-std per action dimension."""

    mean: MlpParams
    log_std: np.ndarray

    def __post_init__(self):
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.log_std.shape != (self.mean.out_dim,):
            raise InputShapeError(
                f"log_std shape {self.log_std.shape}, expected ({self.mean.out_dim},)"
            )

    def tensors(self, prefix: str = "") -> dict[str, np.ndarray]:
        out = self.mean.tensors(prefix + "mean.")
        out[prefix + "log_std"] = self.log_std
        return out


def gaussian_log_prob(mean: np.ndarray, log_std: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Log density of a diagonal Gaussian, summed over the action dimension."""
    z = (x - mean) / np.exp(log_std)
    return -0.5 * (z * z).sum(axis=-1) - log_std.sum() - 0.5 * _LOG_2PI * x.shape[-1]


def gaussian_sample(
    head: GaussianHead,
    x: np.ndarray,
    rng: np.random.Generator | None = None,
    deterministic: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Sample an action and its log-prob.

    Deterministic mode returns the mean with the density evaluated at the mean;
    stochastic mode requires an rng.
    """
    mu = mlp_forward(head.mean, x)
    if deterministic:
        return mu, gaussian_log_prob(mu, head.log_std, mu)
    if rng is None:
        raise InputShapeError("stochastic gaussian_sample needs an rng")
    noise = rng.standard_normal(mu.shape)
    a = mu + np.exp(head.log_std) * noise
    return a, gaussian_log_prob(mu, head.log_std, a)


def gaussian_log_prob_tape(mean: Tensor, log_std: np.ndarray, actions: np.ndarray) -> Tensor:
    """Tape version: differentiable in the mean, log_std held constant."""
    inv_var = np.exp(-2.0 * log_std)
    diff = Tensor(actions) - mean
    quad = (diff * diff * inv_var).sum(axis=-1)
    const = float(log_std.sum() + 0.5 * _LOG_2PI * actions.shape[-1])
    return quad * -0.5 - const
