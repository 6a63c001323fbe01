"""State and action variational autoencoders.

Both VAEs are plain MLP encoder/decoder pairs trained with an ELBO whose KL
term is small: the latents feed similarity losses and clustering downstream,
so staying informative matters more than matching the prior. Inference-time
encoding is always the posterior mean; sampling happens only inside the
training loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reaction_forge.errors import ConfigError, ContractError, InputShapeError
from reaction_forge.nn import (
    AdamState,
    MlpParams,
    MlpTape,
    Tensor,
    adam_step,
    apply_named,
    mlp_forward,
    mlp_init,
    pack_mlp,
    unpack_mlp,
)
from reaction_forge.rng import substream
from reaction_forge.sim.kinematics import state_features_batch
from reaction_forge.sim.spec import SimModel

STATE_LATENT_DIM = 32
ACTION_LATENT_DIM = 16
DEFAULT_BETA = 1e-3


def state_feature_rows(model: SimModel, states: np.ndarray,
                       anchor: np.ndarray | None = None) -> np.ndarray:
    """Feature rows for single-character states: keypoints and velocities in a
    frame that translates with the anchor root's x but keeps world height and
    orientation (lean is load-bearing on a planar character; only absolute x
    is a symmetry).

    ``anchor`` defaults to the states themselves (self-canonicalized); pass
    another character's states to express these in that character's frame.
    """
    states = np.asarray(states, dtype=np.float64)
    if anchor is None:
        anchor = states
    anchor = np.asarray(anchor, dtype=np.float64)
    B = states.shape[0]
    frame_pos = np.stack([anchor[:, 0], np.zeros(B)], axis=1)
    return state_features_batch(model, states, frame_pos=frame_pos,
                                frame_theta=np.zeros(B))


@dataclass
class LatentFeature:
    vector: np.ndarray
    kind: str

    def __post_init__(self):
        self.vector = np.asarray(self.vector, dtype=np.float64)
        if self.kind not in ("state", "action"):
            raise ContractError(f"latent kind must be state|action, got {self.kind!r}")
        if not np.all(np.isfinite(self.vector)):
            raise ContractError("latent feature must be finite")


@dataclass
class Vae:
    """Encoder maps input -> (mu, log-variance); decoder maps latent -> input."""

    kind: str
    encoder: MlpParams
    decoder: MlpParams
    latent_dim: int

    def __post_init__(self):
        if self.encoder.out_dim != 2 * self.latent_dim:
            raise ContractError(
                f"encoder must emit 2*{self.latent_dim} values, got {self.encoder.out_dim}")
        if self.decoder.in_dim != self.latent_dim:
            raise ContractError("decoder input dim must equal the latent dim")
        if self.decoder.out_dim != self.encoder.in_dim:
            raise ContractError("decoder must reconstruct the encoder input")

    @property
    def in_dim(self) -> int:
        return self.encoder.in_dim

    def tensors(self, prefix: str = "vae.") -> dict[str, np.ndarray]:
        out = pack_mlp(self.encoder, prefix + "enc.")
        out.update(pack_mlp(self.decoder, prefix + "dec."))
        out[prefix + "meta"] = np.array([float(self.latent_dim),
                                         1.0 if self.kind == "action" else 0.0])
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray], prefix: str = "vae."
                     ) -> "Vae":
        meta = tensors[prefix + "meta"]
        kind = "action" if meta[1] == 1.0 else "state"
        return cls(kind, unpack_mlp(tensors, prefix + "enc."),
                   unpack_mlp(tensors, prefix + "dec."), int(meta[0]))


def vae_init(kind: str, in_dim: int, latent_dim: int, rng: np.random.Generator,
             hidden: tuple[int, ...] = (64, 64)) -> Vae:
    enc = mlp_init([in_dim, *hidden, 2 * latent_dim], rng)
    dec = mlp_init([latent_dim, *hidden, in_dim], rng)
    return Vae(kind, enc, dec, latent_dim)


def _split_heads(h: Tensor, latent_dim: int) -> tuple[Tensor, Tensor]:
    # constant selector matmuls stand in for slicing on the tape
    two_z = 2 * latent_dim
    sel_mu = np.zeros((two_z, latent_dim))
    sel_lv = np.zeros((two_z, latent_dim))
    sel_mu[np.arange(latent_dim), np.arange(latent_dim)] = 1.0
    sel_lv[latent_dim + np.arange(latent_dim), np.arange(latent_dim)] = 1.0
    return h @ Tensor(sel_mu), h @ Tensor(sel_lv)


def _elbo(enc: MlpTape, dec: MlpTape, x: np.ndarray, latent_dim: int,
          beta: float, eps: np.ndarray | None) -> tuple[Tensor, Tensor, Tensor]:
    mu, logvar = _split_heads(enc(Tensor(x)), latent_dim)
    if eps is None:
        z = mu
    else:
        z = mu + logvar.clip(-30.0, 30.0).exp() ** 0.5 * Tensor(eps)
    recon = dec(z)
    diff = recon - Tensor(x)
    mse = (diff * diff).mean()
    kl_terms = mu * mu + logvar.exp() - 1.0 - logvar
    kl = kl_terms.sum(axis=1).mean() * 0.5
    # beta 0 drops the term outright: an overflowed KL (raw logvar, clipped
    # only when sampling) must not poison a pure-reconstruction loss
    loss = mse if beta == 0.0 else mse + kl * beta
    return loss, mse, kl


def vae_loss(vae: Vae, batch: np.ndarray, rng: np.random.Generator | None = None,
             beta: float = DEFAULT_BETA) -> float:
    """ELBO value on one batch: reconstruction MSE plus beta times the closed
    form KL(q(z|x) || N(0, I)). Passing an rng samples the latent with the
    reparameterization trick; without one the posterior mean is used."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or len(batch) == 0:
        raise InputShapeError(f"batch must be (N>0, {vae.in_dim}), got {batch.shape}")
    eps = rng.standard_normal((len(batch), vae.latent_dim)) if rng is not None else None
    loss, _, _ = _elbo(MlpTape(vae.encoder, trainable=False),
                       MlpTape(vae.decoder, trainable=False),
                       batch, vae.latent_dim, beta, eps)
    return float(loss.data)


def encode_batch(vae: Vae, rows: np.ndarray) -> np.ndarray:
    """Posterior means, (N, Z). Deterministic: same rows give the same latents."""
    rows = np.asarray(rows, dtype=np.float64)
    single = rows.ndim == 1
    h = mlp_forward(vae.encoder, rows[None, :] if single else rows)
    z = h[:, : vae.latent_dim]
    return z[0] if single else z


def decode_batch(vae: Vae, z: np.ndarray) -> np.ndarray:
    return mlp_forward(vae.decoder, z)


def encode_state(vae: Vae, feature_row: np.ndarray) -> LatentFeature:
    if vae.kind != "state":
        raise ContractError("encode_state needs a state VAE")
    return LatentFeature(encode_batch(vae, np.asarray(feature_row)), "state")


def encode_action(vae: Vae, action: np.ndarray) -> LatentFeature:
    if vae.kind != "action":
        raise ContractError("encode_action needs an action VAE")
    return LatentFeature(encode_batch(vae, np.asarray(action)), "action")


@dataclass
class VaeTrainConfig:
    latent_dim: int
    hidden: tuple[int, ...] = (64, 64)
    beta: float = DEFAULT_BETA
    lr: float = 1e-3
    epochs: int = 40
    batch: int = 256

    def __post_init__(self):
        if self.latent_dim < 1:
            raise ConfigError("latent_dim must be >= 1")
        if self.beta < 0:
            raise ConfigError("beta must be >= 0")
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be >= 1")


def train_vae(kind: str, rows: np.ndarray, config: VaeTrainConfig, seed: int,
              val_rows: np.ndarray | None = None) -> tuple[Vae, list[dict]]:
    """Adam over shuffled minibatches; returns the model and per-epoch curves."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or len(rows) == 0:
        raise InputShapeError("training rows must be a nonempty (N, D) array")
    vae = vae_init(kind, rows.shape[1], config.latent_dim,
                   substream(seed, "vae", kind, "init"), config.hidden)
    rng = substream(seed, "vae", kind, "train")
    adam = AdamState(lr=config.lr)
    curves: list[dict] = []
    N = len(rows)
    for epoch in range(config.epochs):
        order = rng.permutation(N)
        total, seen = 0.0, 0
        for start in range(0, N, config.batch):
            idx = order[start : start + config.batch]
            x = rows[idx]
            enc_tape = MlpTape(vae.encoder)
            dec_tape = MlpTape(vae.decoder)
            eps = rng.standard_normal((len(idx), config.latent_dim))
            loss, mse, kl = _elbo(enc_tape, dec_tape, x, config.latent_dim,
                                  config.beta, eps)
            loss.backward()
            params = vae.encoder.tensors("enc.")
            params.update(vae.decoder.tensors("dec."))
            grads = enc_tape.grads("enc.")
            grads.update(dec_tape.grads("dec."))
            new_p, adam = adam_step(params, grads, adam)
            apply_named(params, new_p)
            total += float(loss.data) * len(idx)
            seen += len(idx)
        entry = {"epoch": epoch, "loss": total / seen,
                 "train_mse": _recon_mse(vae, rows)}
        if val_rows is not None:
            entry["val_mse"] = _recon_mse(vae, val_rows)
        curves.append(entry)
    return vae, curves


def _recon_mse(vae: Vae, rows: np.ndarray) -> float:
    recon = decode_batch(vae, encode_batch(vae, rows))
    return float(((recon - rows) ** 2).mean())
