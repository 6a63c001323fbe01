"""Latent forward dynamics trained with a temperature-scaled contrastive loss.

The model maps (state latent, action latent) to a unit-norm prediction of the
next state latent. Supervision is similarity-based: the prediction must rank
its true successor above every other state latent in the batch, which
tolerates stochastic-compatible outcomes instead of forcing a single mean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reaction_forge.data.types import Demonstration
from reaction_forge.errors import (
    ConfigError,
    ContractError,
    InputShapeError,
    TrainingDivergenceError,
)
from reaction_forge.nn import (
    AdamState,
    MlpParams,
    MlpTape,
    Tensor,
    adam_step,
    apply_named,
    mlp_forward,
    mlp_init,
    normalize_rows,
    pack_mlp,
    unpack_mlp,
)
from reaction_forge.representation import Vae, encode_batch, state_feature_rows
from reaction_forge.rng import substream
from reaction_forge.sim.spec import SimModel

DEFAULT_TAU = 0.07


@dataclass
class ForwardDynamicsModel:
    net: MlpParams

    @property
    def state_dim(self) -> int:
        return self.net.out_dim

    def tensors(self, prefix: str = "fdm.") -> dict[str, np.ndarray]:
        return pack_mlp(self.net, prefix)

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str = "fdm."
                     ) -> "ForwardDynamicsModel":
        return cls(unpack_mlp(tensors, prefix))


@dataclass
class FdmBatch:
    """N aligned (state latent, action latent, next state latent) tuples."""

    z_s: np.ndarray
    z_a: np.ndarray
    z_s_next: np.ndarray
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        self.z_s = np.asarray(self.z_s, dtype=np.float64)
        self.z_a = np.asarray(self.z_a, dtype=np.float64)
        self.z_s_next = np.asarray(self.z_s_next, dtype=np.float64)
        n = len(self.z_s)
        if n < 2:
            raise ContractError("contrastive batch needs N >= 2 tuples")
        if len(self.z_a) != n or len(self.z_s_next) != n:
            raise InputShapeError("batch tuple arrays must share their length")
        if self.z_s.shape != self.z_s_next.shape:
            raise InputShapeError("state latents and successors must match shape")
        if not self.tau > 0:
            raise ConfigError(f"temperature must be > 0, got {self.tau}")

    def __len__(self) -> int:
        return len(self.z_s)


def fdm_init(state_dim: int, action_dim: int, rng: np.random.Generator,
             hidden: tuple[int, ...] = (128, 128)) -> ForwardDynamicsModel:
    return ForwardDynamicsModel(mlp_init([state_dim + action_dim, *hidden, state_dim], rng))


def _unit(rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=np.float64)
    n = np.sqrt((rows * rows).sum(axis=-1, keepdims=True) + 1e-24)
    return rows / n


def fdm_forward(fdm: ForwardDynamicsModel, z_s: np.ndarray, z_a: np.ndarray
                ) -> np.ndarray:
    """Unit-norm prediction of the next state latent; (B, Z_s) or a single row."""
    z_s = np.asarray(z_s, dtype=np.float64)
    z_a = np.asarray(z_a, dtype=np.float64)
    single = z_s.ndim == 1
    if single:
        z_s, z_a = z_s[None, :], z_a[None, :]
    out = mlp_forward(fdm.net, np.concatenate([z_s, z_a], axis=1))
    out = _unit(out)
    return out[0] if single else out


def _masked_logits(pred: np.ndarray, batch: FdmBatch
                   ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Similarities of each prediction to [successors | current states].

    Returns (logits (N, 2N), positive mask, denominator mask). The positive is
    the aligned successor; the aligned current state is excluded everywhere.
    """
    n = len(batch)
    cands = np.concatenate([_unit(batch.z_s_next), _unit(batch.z_s)], axis=0)
    logits = _unit(pred) @ cands.T / batch.tau
    pos_mask = np.zeros((n, 2 * n), dtype=bool)
    pos_mask[np.arange(n), np.arange(n)] = True
    denom_mask = np.ones((n, 2 * n), dtype=bool)
    denom_mask[np.arange(n), n + np.arange(n)] = False   # own z_s is not a negative
    return logits, pos_mask, denom_mask


def fdm_contrastive_loss(pred: np.ndarray, batch: FdmBatch,
                         paper_literal_denominator: bool = False) -> float:
    """Mean InfoNCE over the batch.

    Candidates for row i are its true successor (positive) plus the other
    rows' current AND next state latents (2(N-1) negatives). The positive
    term sits in the denominator, which keeps the loss >= 0; the literal flag
    drops it there, reproducing a formulation that can go negative.
    """
    pred = np.asarray(pred, dtype=np.float64)
    if pred.shape != batch.z_s_next.shape:
        raise InputShapeError(
            f"predictions {pred.shape} must match successors {batch.z_s_next.shape}")
    logits, pos_mask, denom_mask = _masked_logits(pred, batch)
    if paper_literal_denominator:
        denom_mask = denom_mask & ~pos_mask
    m = logits.max(axis=1, keepdims=True)
    exp = np.exp(logits - m) * denom_mask
    log_denom = np.log(exp.sum(axis=1)) + m[:, 0]
    pos = logits[pos_mask]
    return float((log_denom - pos).mean())


def fdm_loss(fdm: ForwardDynamicsModel, batch: FdmBatch,
             paper_literal_denominator: bool = False) -> float:
    return fdm_contrastive_loss(fdm_forward(fdm, batch.z_s, batch.z_a), batch,
                                paper_literal_denominator)


def _loss_tape(tape: MlpTape, batch: FdmBatch,
               paper_literal_denominator: bool = False) -> Tensor:
    """Differentiable loss through the prediction network."""
    x = np.concatenate([batch.z_s, batch.z_a], axis=1)
    pred = normalize_rows(tape(Tensor(x)))
    n = len(batch)
    cands = np.concatenate([_unit(batch.z_s_next), _unit(batch.z_s)], axis=0)
    logits = (pred @ Tensor(cands.T)) * (1.0 / batch.tau)
    pos_mask = np.zeros((n, 2 * n))
    pos_mask[np.arange(n), np.arange(n)] = 1.0
    denom_mask = np.ones((n, 2 * n))
    denom_mask[np.arange(n), n + np.arange(n)] = 0.0
    if paper_literal_denominator:
        denom_mask = denom_mask * (1.0 - pos_mask)
    m = logits.data.max(axis=1, keepdims=True)   # constant shift for stability
    exp = (logits - Tensor(m)).exp() * Tensor(denom_mask)
    log_denom = exp.sum(axis=1).log() + Tensor(m[:, 0])
    pos = (logits * Tensor(pos_mask)).sum(axis=1)
    return (log_denom - pos).mean()


def fdm_grads(fdm: ForwardDynamicsModel, batch: FdmBatch,
              paper_literal_denominator: bool = False
              ) -> tuple[float, dict[str, np.ndarray]]:
    """Loss value and analytic parameter gradients for one batch."""
    tape = MlpTape(fdm.net)
    loss = _loss_tape(tape, batch, paper_literal_denominator)
    loss.backward()
    return float(loss.data), tape.grads()


def retrieval_accuracy(fdm: ForwardDynamicsModel, batch: FdmBatch) -> float:
    """Fraction of rows whose true successor outranks all 2(N-1) negatives."""
    pred = fdm_forward(fdm, batch.z_s, batch.z_a)
    logits, pos_mask, denom_mask = _masked_logits(pred, batch)
    logits = np.where(denom_mask, logits, -np.inf)
    hits = logits.argmax(axis=1) == np.arange(len(batch))
    return float(hits.mean())


@dataclass
class FdmTrainConfig:
    epochs: int = 30
    batch: int = 256
    lr: float = 1e-3
    tau: float = DEFAULT_TAU
    hidden: tuple[int, ...] = (128, 128)
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 2:
            raise ConfigError("epochs must be >= 1 and batch >= 2")
        if not self.tau > 0:
            raise ConfigError("temperature must be > 0")
        if not (0.0 <= self.val_fraction < 1.0):
            raise ConfigError("val_fraction must be in [0, 1)")


def demo_tuples(model: SimModel, demos: list[Demonstration], state_vae: Vae,
                action_vae: Vae) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Latent (z_s, z_a, z_s_next) rows from every track of every demo."""
    zs, za, zn = [], [], []
    for demo in demos:
        for track in (demo.actor_track, demo.reactor_track):
            feats = state_feature_rows(model, track.states)
            z = encode_batch(state_vae, feats)
            a = encode_batch(action_vae, track.actions)
            zs.append(z[:-1])
            za.append(a)
            zn.append(z[1:])
    return np.concatenate(zs), np.concatenate(za), np.concatenate(zn)


def train_fdm(model: SimModel, demos: list[Demonstration], state_vae: Vae,
              action_vae: Vae, config: FdmTrainConfig, seed: int
              ) -> tuple[ForwardDynamicsModel, list[dict]]:
    """Contrastive training over demo tuples with frozen VAEs.

    Aborts with a diagnostic if the running loss exceeds 10x the initial
    value, which on this objective only happens when optimization breaks.
    """
    if not demos:
        raise ContractError("train_fdm needs at least one demonstration")
    zs, za, zn = demo_tuples(model, demos, state_vae, action_vae)
    rng = substream(seed, "fdm", "train")
    n_val = int(len(zs) * config.val_fraction)
    order = rng.permutation(len(zs))
    val_idx, train_idx = order[:n_val], order[n_val:]
    fdm = fdm_init(state_vae.latent_dim, action_vae.latent_dim,
                   substream(seed, "fdm", "init"), config.hidden)
    adam = AdamState(lr=config.lr)
    curves: list[dict] = []
    initial_loss = None
    for epoch in range(config.epochs):
        perm = train_idx[rng.permutation(len(train_idx))]
        total, seen = 0.0, 0
        for start in range(0, len(perm) - 1, config.batch):
            idx = perm[start : start + config.batch]
            if len(idx) < 2:
                continue
            batch = FdmBatch(zs[idx], za[idx], zn[idx], tau=config.tau)
            tape = MlpTape(fdm.net)
            loss = _loss_tape(tape, batch)
            loss.backward()
            params = fdm.net.tensors()
            new_p, adam = adam_step(params, tape.grads(), adam)
            apply_named(params, new_p)
            v = float(loss.data)
            if initial_loss is None:
                initial_loss = max(v, 1e-9)
            if v > 10.0 * initial_loss:
                raise TrainingDivergenceError(
                    f"contrastive loss diverged: {v:.4f} > 10x initial {initial_loss:.4f}")
            total += v * len(idx)
            seen += len(idx)
        entry = {"epoch": epoch, "loss": total / max(seen, 1)}
        if n_val >= 2:
            eval_n = min(len(val_idx), config.batch)
            vb = FdmBatch(zs[val_idx[:eval_n]], za[val_idx[:eval_n]],
                          zn[val_idx[:eval_n]], tau=config.tau)
            entry["val_loss"] = fdm_loss(fdm, vb)
            entry["retrieval"] = retrieval_accuracy(fdm, vb)
        curves.append(entry)
    return fdm, curves
