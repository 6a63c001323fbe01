"""Adam over named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reaction_forge.errors import InputShapeError, TrainingDivergenceError

Params = dict[str, np.ndarray]


@dataclass
class AdamState:
    """Step counter, first/second moments shaped like the parameters, and hyperparameters."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Params = field(default_factory=dict)
    v: Params = field(default_factory=dict)

    def tensors(self, prefix: str = "adam.") -> Params:
        out = {f"{prefix}hyper": np.array([self.lr, self.beta1, self.beta2, self.eps, self.step])}
        for k, a in self.m.items():
            out[f"{prefix}m.{k}"] = a
        for k, a in self.v.items():
            out[f"{prefix}v.{k}"] = a
        return out


def adam_step(params: Params, grads: Params, state: AdamState) -> tuple[Params, AdamState]:
    """One Adam update. Returns fresh dicts; the inputs are not mutated.

    A zero gradient with zero moments leaves the parameter bit-identical, and
    lr=0 updates moments but not parameters.
    """
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise InputShapeError(f"grads/params key mismatch: {sorted(missing)}")
    for k, g in grads.items():
        if g.shape != params[k].shape:
            raise InputShapeError(f"grad {k}: shape {g.shape}, param {params[k].shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingDivergenceError(f"non-finite gradient in {k}")
    t = state.step + 1
    new_m, new_v, new_p = {}, {}, {}
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** t
    bias2 = 1.0 - b2 ** t
    for k, p in params.items():
        g = grads[k]
        m = b1 * state.m.get(k, np.zeros_like(p)) + (1.0 - b1) * g
        v = b2 * state.v.get(k, np.zeros_like(p)) + (1.0 - b2) * g * g
        new_m[k], new_v[k] = m, v
        update = state.lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        new_p[k] = p - update
    next_state = AdamState(state.lr, b1, b2, state.eps, t, new_m, new_v)
    return new_p, next_state


def apply_named(params: Params, updated: Params) -> None:
    """Copy updated values back into the live arrays (shapes already checked)."""
    for k, a in updated.items():
        params[k][...] = a
