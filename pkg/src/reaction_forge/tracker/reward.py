"""Per-frame imitation reward for reference tracking."""

from __future__ import annotations

import numpy as np

from reaction_forge.errors import InputShapeError
from reaction_forge.sim.kinematics import keypoints_batch
from reaction_forge.sim.spec import SimModel

W_POS = 0.7
W_VEL = 0.3
ALPHA_POS = 5.0
ALPHA_VEL = 0.1


def reward_from_keypoints(p_ref: np.ndarray, v_ref: np.ndarray,
                          p_sim: np.ndarray, v_sim: np.ndarray,
                          w_p: float = W_POS, w_v: float = W_VEL,
                          alpha_p: float = ALPHA_POS, alpha_v: float = ALPHA_VEL,
                          ) -> np.ndarray:
    """r = w_p*exp(-alpha_p * sum_j ||dp_j||^2) + w_v*exp(-alpha_v * sum_j ||dv_j||^2).

    Keypoint arrays are (B, K, 2); returns (B,). With the default weights the
    reward lives in (0, 1], hitting 1 exactly on a perfect match.
    """
    if p_ref.shape != p_sim.shape or v_ref.shape != v_sim.shape:
        raise InputShapeError(
            f"keypoint shape mismatch: {p_ref.shape} vs {p_sim.shape}")
    ep = ((p_ref - p_sim) ** 2).sum(axis=(-1, -2))
    ev = ((v_ref - v_sim) ** 2).sum(axis=(-1, -2))
    return w_p * np.exp(-alpha_p * ep) + w_v * np.exp(-alpha_v * ev)


def _split(model: SimModel, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    states = np.asarray(states, dtype=np.float64)
    if states.ndim != 2 or states.shape[1] != 2 * model.nq:
        raise InputShapeError(f"states {states.shape}, expected (*, {2 * model.nq})")
    return states[:, : model.nq], states[:, model.nq :]


def imitation_reward(model: SimModel, ref_states: np.ndarray, sim_states: np.ndarray,
                     w_p: float = W_POS, w_v: float = W_VEL,
                     alpha_p: float = ALPHA_POS, alpha_v: float = ALPHA_VEL,
                     ) -> np.ndarray:
    """Reward for a batch of (reference, simulated) full state rows."""
    p_ref, v_ref = keypoints_batch(model, *_split(model, ref_states))
    p_sim, v_sim = keypoints_batch(model, *_split(model, sim_states))
    return reward_from_keypoints(p_ref, v_ref, p_sim, v_sim, w_p, w_v, alpha_p, alpha_v)


def mean_keypoint_error(model: SimModel, ref_states: np.ndarray, sim_states: np.ndarray,
                        ) -> np.ndarray:
    """Mean over keypoints of the Euclidean position error, (B,). The tracking
    success and early-termination criteria are both thresholds on this."""
    p_ref, _ = keypoints_batch(model, *_split(model, ref_states))
    p_sim, _ = keypoints_batch(model, *_split(model, sim_states))
    return np.linalg.norm(p_ref - p_sim, axis=-1).mean(axis=-1)
