"""Batched forward kinematics and frame canonicalization.

All kernels take state arrays with a leading batch axis; the single-state
wrappers at the bottom are the public per-character API. Angles, anchor
points and point velocities come out of closed-form path sums (one matmul
per quantity) rather than a per-link recursion.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reaction_forge.errors import InputShapeError
from reaction_forge.sim.spec import CharacterSpec, CharacterState, SimModel


def _perp(v: np.ndarray) -> np.ndarray:
    """Rotate 2-D vectors (stacked on the last axis) by +90 degrees."""
    out = np.empty_like(v)
    out[..., 0] = -v[..., 1]
    out[..., 1] = v[..., 0]
    return out


@dataclass
class Fk:
    """Positions of every link frame for a batch of states."""

    phi: np.ndarray     # (B, L) world angle of each link
    origin: np.ndarray  # (B, L, 2) joint anchor / frame origin
    tip: np.ndarray     # (B, L, 2) far capsule end
    com: np.ndarray     # (B, L, 2)
    edge: np.ndarray    # (B, L, 2) origin - parent origin, rotates with the parent

    def shifted(self, delta: np.ndarray) -> "Fk":
        """Rigid root translation (projection step); angles are unaffected."""
        d = delta[:, None, :]
        return Fk(self.phi, self.origin + d, self.tip + d, self.com + d, self.edge)


def fk_positions(model: SimModel, pos: np.ndarray) -> Fk:
    """pos: (B, nq) generalized coordinates [x, y, theta, q...]."""
    th = pos[:, 2]
    q = pos[:, 3:]
    phi = th[:, None] + model.alpha_cum[None, :] + q @ model.anc_dof.T
    cph, sph = np.cos(phi), np.sin(phi)
    ax, ay = model.attach[:, 0], model.attach[:, 1]
    cpar = np.take_along_axis(cph, model.par_idx[None, :], axis=1)
    spar = np.take_along_axis(sph, model.par_idx[None, :], axis=1)
    edge = np.stack([cpar * ax - spar * ay, spar * ax + cpar * ay], axis=-1)
    edge[:, 0, :] = 0.0
    origin = pos[:, None, 0:2] + np.einsum("ml,bmk->blk", model.path_edge, edge)
    direction = np.stack([cph, sph], axis=-1)
    tip = origin + model.length[None, :, None] * direction
    com = origin + (model.length / 2.0)[None, :, None] * direction
    return Fk(phi, origin, tip, com, edge)


def link_rates(model: SimModel, vel: np.ndarray) -> np.ndarray:
    """(B, L) world angular velocity of each link."""
    return vel[:, 2:3] + vel[:, 3:] @ model.anc_dof.T


def origin_velocities(model: SimModel, fk: Fk, vel: np.ndarray,
                      w: np.ndarray | None = None) -> np.ndarray:
    """Velocities of every link frame origin: (B, L, 2)."""
    if w is None:
        w = link_rates(model, vel)
    wpar = np.take_along_axis(w, model.par_idx[None, :], axis=1)
    edge_vel = wpar[:, :, None] * _perp(fk.edge)
    return vel[:, None, 0:2] + np.einsum("ml,bmk->blk", model.path_edge, edge_vel)


def point_velocities(model: SimModel, fk: Fk, vel: np.ndarray, points: np.ndarray,
                     w: np.ndarray | None = None) -> np.ndarray:
    """Velocities of one point per link, points: (B, L, 2) rigidly on link l."""
    if w is None:
        w = link_rates(model, vel)
    return origin_velocities(model, fk, vel, w) + w[:, :, None] * _perp(points - fk.origin)


def keypoints_batch(model: SimModel, pos: np.ndarray, vel: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Root plus every revolute joint anchor: positions and analytic velocities.

    Returns (B, J+1, 2) positions and (B, J+1, 2) velocities.
    """
    fk = fk_positions(model, pos)
    origin_vel = origin_velocities(model, fk, vel)
    p = np.concatenate([pos[:, None, 0:2], fk.origin[:, model.dof_link, :]], axis=1)
    v = np.concatenate([vel[:, None, 0:2], origin_vel[:, model.dof_link, :]], axis=1)
    return p, v


def centripetal_com(model: SimModel, fk: Fk, vel: np.ndarray) -> np.ndarray:
    """COM accelerations with all generalized accelerations zero (bias term)."""
    w = link_rates(model, vel)
    wpar = np.take_along_axis(w, model.par_idx[None, :], axis=1)
    edge_acc = -(wpar**2)[:, :, None] * fk.edge
    origin_acc = np.einsum("ml,bmk->blk", model.path_edge, edge_acc)
    return origin_acc - (w**2)[:, :, None] * (fk.com - fk.origin)


def com_jacobians(model: SimModel, fk: Fk, root: np.ndarray) -> np.ndarray:
    """d(com_l)/d(generalized coords): (B, L, 2, nq)."""
    return point_jacobians(model, fk.com, fk.origin, root, model.anc_dof)


def point_jacobians(model: SimModel, points: np.ndarray, origins: np.ndarray,
                    root: np.ndarray, anc: np.ndarray) -> np.ndarray:
    """Jacobian of points (B, L, 2) rigidly attached to each link."""
    B, L, _ = points.shape
    jac = np.zeros((B, L, 2, model.nq))
    jac[:, :, 0, 0] = 1.0
    jac[:, :, 1, 1] = 1.0
    d_root = _perp(points - root[:, None, :])
    jac[:, :, 0, 2] = d_root[..., 0]
    jac[:, :, 1, 2] = d_root[..., 1]
    anchors = origins[:, model.dof_link, :]                  # (B, J, 2)
    d = _perp(points[:, :, None, :] - anchors[:, None, :, :])  # (B, L, J, 2)
    d *= anc[None, :, :, None]
    jac[:, :, 0, 3:] = d[..., 0]
    jac[:, :, 1, 3:] = d[..., 1]
    return jac


# -- canonicalization ----------------------------------------------------------


def rotate(points: np.ndarray, angle: float | np.ndarray) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    x, y = points[..., 0], points[..., 1]
    return np.stack([c * x - s * y, s * x + c * y], axis=-1)


def canonicalize(points: np.ndarray, vels: np.ndarray, frame_pos: np.ndarray,
                 frame_theta: float | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Express keypoints/velocities in the frame anchored at ``frame_pos`` with
    heading ``frame_theta``: subtract the position, rotate by the inverse heading.
    Velocities rotate only."""
    p = rotate(points - np.asarray(frame_pos)[..., None, :], -frame_theta)
    v = rotate(vels, -frame_theta)
    return p, v


def state_features_batch(model: SimModel, states: np.ndarray,
                         frame_pos: np.ndarray | None = None,
                         frame_theta: np.ndarray | None = None) -> np.ndarray:
    """Canonicalized keypoint (+velocity) features, one row per state.

    With no explicit frame each state is expressed in its own root frame
    (the degenerate reactor-frame case for a single character).
    """
    states = np.asarray(states, dtype=np.float64)
    nq = model.nq
    if states.ndim != 2 or states.shape[1] != 2 * nq:
        raise InputShapeError(f"states {states.shape}, expected (*, {2 * nq})")
    pos, vel = states[:, :nq], states[:, nq:]
    p, v = keypoints_batch(model, pos, vel)
    if frame_pos is None:
        frame_pos = pos[:, 0:2]
    if frame_theta is None:
        frame_theta = pos[:, 2]
    theta = np.asarray(frame_theta, dtype=np.float64).reshape(-1, 1)
    pc, vc = canonicalize(p, v, np.asarray(frame_pos), theta)
    B = states.shape[0]
    return np.concatenate([pc.reshape(B, -1), vc.reshape(B, -1)], axis=1)


def feature_dim(spec: CharacterSpec) -> int:
    return 4 * (spec.n_joints + 1)


# -- single-state wrappers ------------------------------------------------------


def keypoints(spec: CharacterSpec | SimModel, state: CharacterState
              ) -> tuple[np.ndarray, np.ndarray]:
    """Keypoint positions (J+1, 2) and velocities for one character state."""
    model = spec if isinstance(spec, SimModel) else SimModel(spec)
    vec = state.as_vector()[None, :]
    p, v = keypoints_batch(model, vec[:, : model.nq], vec[:, model.nq :])
    return p[0], v[0]


def to_reactor_frame(spec: CharacterSpec | SimModel, state: CharacterState,
                     reactor: CharacterState) -> np.ndarray:
    """Keypoint/velocity features of ``state`` in the reactor's root frame."""
    model = spec if isinstance(spec, SimModel) else SimModel(spec)
    vec = state.as_vector()[None, :]
    return state_features_batch(
        model, vec,
        frame_pos=reactor.root_pos[None, :],
        frame_theta=np.array([reactor.root_theta]),
    )[0]
