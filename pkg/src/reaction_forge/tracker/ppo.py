"""Clipped-surrogate policy optimization for the tracking policy.

The policy emits a residual on the next reference frame's joint angles; the
Gaussian noise scale is a fixed hyperparameter rather than a learned head, so
the entropy bonus is a constant and exploration stays at PD-target scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reaction_forge.errors import ConfigError, InputShapeError, TrainingDivergenceError
from reaction_forge.nn import (
    AdamState,
    GaussianHead,
    MlpParams,
    MlpTape,
    adam_step,
    apply_named,
    gaussian_log_prob,
    gaussian_log_prob_tape,
    minimum,
    mlp_forward,
    mlp_init,
    pack_mlp,
    unpack_mlp,
)

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class PpoConfig:
    discount: float = 0.99
    gae_lambda: float = 0.95
    clip_eps: float = 0.2
    epochs: int = 4
    minibatch: int = 512
    horizon: int = 96
    entropy_coef: float = 0.0
    value_coef: float = 0.5
    lr: float = 3e-4
    action_std: float = 0.05
    normalize_advantages: bool = True

    def __post_init__(self):
        if not (0.0 < self.discount <= 1.0):
            raise ConfigError(f"discount must be in (0, 1], got {self.discount}")
        if self.clip_eps <= 0.0:
            raise ConfigError(f"clip_eps must be > 0, got {self.clip_eps}")
        if not (0.0 <= self.gae_lambda <= 1.0):
            raise ConfigError(f"gae_lambda must be in [0, 1], got {self.gae_lambda}")
        if self.epochs < 1 or self.minibatch < 1 or self.horizon < 1:
            raise ConfigError("epochs, minibatch and horizon must be >= 1")
        if self.action_std <= 0.0:
            raise ConfigError(f"action_std must be > 0, got {self.action_std}")


@dataclass
class TrackerPolicy:
    """Gaussian residual policy plus its value function."""

    head: GaussianHead
    value: MlpParams

    def act(self, obs: np.ndarray, rng: np.random.Generator | None = None,
            deterministic: bool = False) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (delta, log_prob, mean)."""
        mu = mlp_forward(self.head.mean, obs)
        if deterministic:
            return mu, gaussian_log_prob(mu, self.head.log_std, mu), mu
        if rng is None:
            raise InputShapeError("stochastic act needs an rng")
        a = mu + np.exp(self.head.log_std) * rng.standard_normal(mu.shape)
        return a, gaussian_log_prob(mu, self.head.log_std, a), mu

    def value_of(self, obs: np.ndarray) -> np.ndarray:
        return mlp_forward(self.value, obs)[..., 0]

    def tensors(self, prefix: str = "tracker.") -> dict[str, np.ndarray]:
        out = pack_mlp(self.head.mean, prefix + "mean.")
        out[prefix + "log_std"] = self.head.log_std
        out.update(pack_mlp(self.value, prefix + "value."))
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str = "tracker."
                     ) -> "TrackerPolicy":
        mean = unpack_mlp(tensors, prefix + "mean.")
        value = unpack_mlp(tensors, prefix + "value.")
        return cls(GaussianHead(mean, tensors[prefix + "log_std"].copy()), value)


def init_tracker_policy(obs_dim: int, act_dim: int, rng: np.random.Generator,
                        action_std: float = 0.05, hidden: tuple[int, ...] = (128, 128),
                        ) -> TrackerPolicy:
    # near-zero final layer: the initial policy is plain reference following,
    # which already stands and tracks; PPO only has to refine it
    mean = mlp_init([obs_dim, *hidden, act_dim], rng, final_scale=0.01)
    value = mlp_init([obs_dim, *hidden, 1], rng)
    log_std = np.full(act_dim, np.log(action_std))
    return TrackerPolicy(GaussianHead(mean, log_std), value)


def gae_advantages(rewards: np.ndarray, values: np.ndarray, boot_values: np.ndarray,
                   done: np.ndarray, timeout: np.ndarray,
                   gamma: float, lam: float) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over a (T, B) rollout block.

    ``boot_values`` holds V(s_{t+1}) evaluated before any auto-reset. Episodes
    that ended by reference exhaustion (``timeout``) bootstrap through their
    final state; failures do not. Either way the recursion stops at a done.
    """
    T, B = rewards.shape
    boot = (~done) | timeout
    adv = np.zeros((T, B))
    carry = np.zeros(B)
    for t in range(T - 1, -1, -1):
        delta = rewards[t] + gamma * boot_values[t] * boot[t] - values[t]
        carry = delta + gamma * lam * (~done[t]) * carry
        adv[t] = carry
    returns = adv + values
    return adv, returns


def _value_loss(value: MlpParams, obs: np.ndarray, returns: np.ndarray) -> float:
    v = mlp_forward(value, obs)[:, 0]
    return float(((v - returns) ** 2).mean())


def ppo_update(policy: TrackerPolicy, batch: dict[str, np.ndarray], config: PpoConfig,
               policy_adam: AdamState, value_adam: AdamState,
               rng: np.random.Generator) -> dict[str, float]:
    """One PPO improvement phase over a flattened rollout batch.

    batch keys: obs (N, obs_dim), actions (N, act_dim), log_probs (N,),
    advantages (N,), returns (N,). Raises on non-finite advantages instead of
    training on garbage.
    """
    adv = batch["advantages"]
    if not np.all(np.isfinite(adv)):
        bad = int((~np.isfinite(adv)).sum())
        raise TrainingDivergenceError(
            f"rollout batch rejected: {bad}/{adv.size} non-finite advantages")
    for key in ("obs", "actions", "log_probs", "returns"):
        if not np.all(np.isfinite(batch[key])):
            raise TrainingDivergenceError(f"rollout batch rejected: non-finite {key}")

    N = len(adv)
    adv_n = (adv - adv.mean()) / (adv.std() + 1e-8) if config.normalize_advantages else adv
    obs, actions = batch["obs"], batch["actions"]
    logp_old, returns = batch["log_probs"], batch["returns"]
    mu_old = mlp_forward(policy.head.mean, obs)
    vloss_before = _value_loss(policy.value, obs, returns)
    log_std = policy.head.log_std

    clip_lo, clip_hi = 1.0 - config.clip_eps, 1.0 + config.clip_eps
    clipped = 0
    seen = 0
    policy_loss = 0.0
    for _ in range(config.epochs):
        order = rng.permutation(N)
        for start in range(0, N, config.minibatch):
            idx = order[start : start + config.minibatch]
            tape = MlpTape(policy.head.mean)
            mu = tape(obs[idx])
            logp = gaussian_log_prob_tape(mu, log_std, actions[idx])
            ratio = (logp - logp_old[idx]).exp()
            a = adv_n[idx]
            surr = minimum(ratio * a, ratio.clip(clip_lo, clip_hi) * a)
            loss = surr.mean() * -1.0
            loss.backward()
            params = policy.head.mean.tensors()
            new_p, policy_adam = adam_step(params, tape.grads(), policy_adam)
            apply_named(params, new_p)
            policy_loss = float(loss.data)
            clipped += int(((ratio.data < clip_lo) | (ratio.data > clip_hi)).sum())
            seen += len(idx)

            vtape = MlpTape(policy.value)
            v = vtape(obs[idx])
            dv = v - returns[idx][:, None]
            vloss = (dv * dv).mean() * config.value_coef
            vloss.backward()
            vparams = policy.value.tensors()
            new_v, value_adam = adam_step(vparams, vtape.grads(), value_adam)
            apply_named(vparams, new_v)

    vloss_after = _value_loss(policy.value, obs, returns)
    lr_halved = False
    if vloss_after > vloss_before:
        value_adam.lr *= 0.5
        lr_halved = True

    mu_new = mlp_forward(policy.head.mean, obs)
    kl = float((((mu_new - mu_old) ** 2) / (2.0 * np.exp(2.0 * log_std))).sum(axis=1).mean())
    entropy = float((log_std + 0.5 * (_LOG_2PI + 1.0)).sum())
    return {
        "policy_loss": policy_loss,
        "value_loss_before": vloss_before,
        "value_loss_after": vloss_after,
        "kl": kl,
        "clip_fraction": clipped / max(seen, 1),
        "entropy": entropy,
        "lr_halved": float(lr_halved),
    }
