"""Reduced-coordinate dynamics for planar capsule trees.

One control step = ``substeps`` semi-implicit Euler substeps. Per substep the
joint-space mass matrix is assembled from COM Jacobians (kinetic energy
metric), bias forces come from the velocity-product COM accelerations, PD
torques are re-evaluated from the current joint state, and ground/obstacle
contacts are resolved by position projection plus projected Gauss-Seidel
normal impulses with Coulomb-style tangential damping.

The batched kernels treat the leading axis as independent characters in
lockstep; ``step`` is the single-character wrapper with the public contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from reaction_forge.errors import InputShapeError, SimulationBlowupError
from reaction_forge.sim.kinematics import (
    Fk,
    _perp,
    centripetal_com,
    com_jacobians,
    fk_positions,
)
from reaction_forge.sim.spec import CharacterSpec, CharacterState, ContactReport, SimModel

CONTACT_MARGIN = 2e-3     # slots this close to the ground join the impulse solve
PROJECTION_EPS = 1e-12
BLOWUP_LIMIT = 1e5


@dataclass
class Obstacles:
    """Kinematic capsules the character may not penetrate (the other character).

    Treated as static within a substep: projection pushes the character out
    along the contact normal and impulses only remove approaching velocity.
    """

    segments: np.ndarray   # (B, K, 2, 2) start/end points per batch row
    radii: np.ndarray      # (K,)


def pd_torque(spec: CharacterSpec | SimModel, state: CharacterState,
              action: np.ndarray) -> np.ndarray:
    """tau = kp*(a - q) - kd*qd, with the target clamped to the joint angle
    limits and the torque clamped to +-torque_limit."""
    model = spec if isinstance(spec, SimModel) else SimModel(spec)
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (model.n_dofs,):
        raise InputShapeError(f"action {action.shape}, expected ({model.n_dofs},)")
    if not np.all(np.isfinite(action)):
        raise InputShapeError("action must be finite")
    return _pd_torque(model, state.q[None, :], state.qd[None, :], action[None, :])[0]


def _pd_torque(model: SimModel, q: np.ndarray, qd: np.ndarray, a: np.ndarray) -> np.ndarray:
    a = np.clip(a, model.angle_min[None, :], model.angle_max[None, :])
    tau = model.kp[None, :] * (a - q) - model.kd[None, :] * qd
    return np.clip(tau, -model.torque_limit[None, :], model.torque_limit[None, :])


# -- contact helpers -----------------------------------------------------------


def _endpoint_data(model: SimModel, fk: Fk):
    """Candidate ground-contact points: both capsule end centers per link."""
    pts = np.concatenate([fk.origin, fk.tip], axis=1)          # (B, 2L, 2)
    link = np.concatenate([np.arange(model.n_links)] * 2)
    rad = model.radius[link]
    return pts, link, rad


def _normal_row(model: SimModel, point: np.ndarray, normal: np.ndarray,
                anchors: np.ndarray, root: np.ndarray, anc_mask: np.ndarray) -> np.ndarray:
    """Contact Jacobian row J so that J @ u = normal velocity of the point.

    point/normal: (B, 2); anchors: (B, J, 2); anc_mask: (B, J) ancestor dofs.
    """
    B = point.shape[0]
    row = np.zeros((B, model.nq))
    row[:, 0:2] = normal
    d_root = _perp(point - root)
    row[:, 2] = (normal * d_root).sum(axis=1)
    d = _perp(point[:, None, :] - anchors)
    row[:, 3:] = (normal[:, None, :] * d).sum(axis=2) * anc_mask
    return row


def _closest_segment_points(a0, a1, b0, b1):
    """Closest points between segment batches (Ericson 5.1.9), broadcastable."""
    d1 = a1 - a0
    d2 = b1 - b0
    r = a0 - b0
    a = (d1 * d1).sum(-1)
    e = (d2 * d2).sum(-1)
    f = (d2 * r).sum(-1)
    c = (d1 * r).sum(-1)
    b = (d1 * d2).sum(-1)
    denom = a * e - b * b
    s = np.where(denom > 1e-12, np.clip((b * f - c * e) / np.where(denom > 1e-12, denom, 1.0), 0.0, 1.0), 0.0)
    t = np.where(e > 1e-12, (b * s + f) / np.where(e > 1e-12, e, 1.0), 0.0)
    t_cl = np.clip(t, 0.0, 1.0)
    s = np.where(t != t_cl,
                 np.clip((t_cl * b - c) / np.where(a > 1e-12, a, 1.0), 0.0, 1.0),
                 s)
    p1 = a0 + s[..., None] * d1
    p2 = b0 + t_cl[..., None] * d2
    return p1, p2


def _deepest_obstacle_contact(model: SimModel, fk: Fk, obstacles: Obstacles):
    """Per-row deepest capsule-capsule contact against the obstacle set.

    Returns (depth (B,), normal (B,2) pointing into the character, point (B,2)
    on the character's capsule axis, link (B,) int).
    """
    a0 = fk.origin[:, :, None, :]
    a1 = fk.tip[:, :, None, :]
    b0 = obstacles.segments[:, None, :, 0, :]
    b1 = obstacles.segments[:, None, :, 1, :]
    p1, p2 = _closest_segment_points(a0, a1, b0, b1)
    diff = p1 - p2
    dist = np.sqrt((diff * diff).sum(-1))
    depth = model.radius[None, :, None] + obstacles.radii[None, None, :] - dist  # (B, L, K)
    B, L, K = depth.shape
    flat = depth.reshape(B, L * K)
    idx = np.argmax(flat, axis=1)
    rows = np.arange(B)
    best_depth = flat[rows, idx]
    link = idx // K
    p1f = p1.reshape(B, L * K, 2)[rows, idx]
    df = diff.reshape(B, L * K, 2)[rows, idx]
    df_n = np.sqrt((df * df).sum(-1))
    normal = np.where(df_n[:, None] > 1e-12, df / np.maximum(df_n, 1e-12)[:, None],
                      np.array([0.0, 1.0])[None, :])
    return best_depth, normal, p1f, link


def _project_positions(model: SimModel, pos: np.ndarray, fk: Fk,
                       obstacles: Obstacles | None) -> tuple[np.ndarray, Fk, np.ndarray]:
    """Shift the root until ground and obstacle penetration both vanish.

    Returns the new pos/fk plus the pre-resolution per-link ground depths
    (for the contact report).
    """
    pts, link_of, rad = _endpoint_data(model, fk)
    pen0 = rad[None, :] - pts[:, :, 1]
    B = pos.shape[0]
    link_depth = np.zeros((B, model.n_links))
    np.maximum.at(link_depth.T, link_of, np.maximum(pen0, 0.0).T)

    for _ in range(6):
        moved = False
        if obstacles is not None:
            depth, normal, _, _ = _deepest_obstacle_contact(model, fk, obstacles)
            push = np.maximum(depth, 0.0)
            if np.any(push > PROJECTION_EPS):
                delta = normal * push[:, None]
                pos[:, 0:2] += delta
                fk = fk.shifted(delta)
                moved = True
        pts = np.concatenate([fk.origin, fk.tip], axis=1)
        pen = rad[None, :] - pts[:, :, 1]
        lift = np.maximum(pen.max(axis=1), 0.0)
        if np.any(lift > PROJECTION_EPS):
            delta = np.stack([np.zeros(B), lift], axis=1)
            pos[:, 1] += lift
            fk = fk.shifted(delta)
            moved = True
        if not moved:
            break
    return pos, fk, link_depth


def _impulse_pass(model: SimModel, vel: np.ndarray, fk: Fk, minv: np.ndarray,
                  pen_pre: np.ndarray, obstacles: Obstacles | None,
                  obs_contact, impulse_accum: np.ndarray) -> np.ndarray:
    """Projected Gauss-Seidel on normal impulses + tangential damping."""
    pts, link_of, rad = _endpoint_data(model, fk)
    anchors = fk.origin[:, model.dof_link, :]
    root = fk.origin[:, 0, :]
    B = vel.shape[0]

    slots = []  # (active, jac_row, minv_jt, eff_mass, link_idx, is_ground)
    up = np.broadcast_to(np.array([0.0, 1.0]), (B, 2))
    for s in range(pts.shape[1]):
        active = pen_pre[:, s] > -CONTACT_MARGIN
        if not active.any():
            continue
        l = int(link_of[s])
        anc = np.broadcast_to(model.anc_dof[l], (B, model.n_dofs))
        row = _normal_row(model, pts[:, s, :], up, anchors, root, anc)
        slots.append((active, row, s, l, True))
    if obstacles is not None and obs_contact is not None:
        depth, normal, point, link = obs_contact
        active = depth > -CONTACT_MARGIN
        if active.any():
            anc = model.anc_dof[link]
            row = _normal_row(model, point, normal, anchors, root, anc)
            slots.append((active, row, -1, link, False))

    if not slots:
        return vel

    solved = []
    for active, row, s, l, is_ground in slots:
        minv_jt = np.einsum("bnm,bm->bn", minv, row)
        eff = np.maximum((row * minv_jt).sum(axis=1), 1e-12)
        solved.append({"active": active, "row": row, "minv_jt": minv_jt, "eff": eff,
                       "slot": s, "link": l, "ground": is_ground,
                       "lam": np.zeros(B)})

    def normal_sweeps(n: int):
        # fixed Gauss-Seidel budget, no convergence break: a row's result must
        # not depend on how fast its batchmates converge, or replaying a
        # recorded trajectory at a different batch size would drift
        nonlocal vel
        for _ in range(n):
            for c in solved:
                vn = (c["row"] * vel).sum(axis=1)
                dl = np.where(c["active"], -vn / c["eff"], 0.0)
                new_lam = np.maximum(c["lam"] + dl, 0.0)
                d = new_lam - c["lam"]
                c["lam"] = new_lam
                vel += c["minv_jt"] * d[:, None]

    normal_sweeps(40)

    # Coulomb friction on ground contacts: cancel tangential velocity at the
    # contact point, impulse clamped to mu * lambda_n. Applied from one shared
    # velocity snapshot so left/right contacts stay symmetric.
    mu = model.friction_damping
    if mu > 0.0:
        tangent = np.broadcast_to(np.array([1.0, 0.0]), (B, 2))
        updates = []
        for c in solved:
            if not c["ground"]:
                continue
            s = c["slot"]
            anc = np.broadcast_to(model.anc_dof[c["link"]], (B, model.n_dofs))
            row_t = _normal_row(model, pts[:, s, :], tangent, anchors, root, anc)
            minv_jt = np.einsum("bnm,bm->bn", minv, row_t)
            eff = np.maximum((row_t * minv_jt).sum(axis=1), 1e-12)
            vt = (row_t * vel).sum(axis=1)
            engaged = c["active"] & (c["lam"] > 0.0)
            dlt = np.where(engaged, -vt / eff, 0.0)
            cap = mu * c["lam"]
            dlt = np.clip(dlt, -cap, cap)
            updates.append(minv_jt * dlt[:, None])
        for u in updates:
            vel += u
        normal_sweeps(4)

    for c in solved:
        if c["ground"]:
            impulse_accum[:, c["link"]] += c["lam"]
        else:
            np.add.at(impulse_accum, (np.arange(B), c["link"]), c["lam"])
    return vel


# -- the integrator ------------------------------------------------------------


def step_batch(model: SimModel, states: np.ndarray, actions: np.ndarray,
               obstacles: Obstacles | None = None,
               constant_torques: np.ndarray | None = None,
               rng: np.random.Generator | None = None,
               ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Advance one control step for a batch of characters.

    ``actions`` are PD targets re-evaluated every substep; passing
    ``constant_torques`` instead applies a fixed joint torque (test harness
    path). Returns (new states, per-link max ground depth, per-link impulse).
    """
    states = np.asarray(states, dtype=np.float64)
    nq = model.nq
    B = states.shape[0]
    pos = states[:, :nq].copy()
    vel = states[:, nq:].copy()
    depth_max = np.zeros((B, model.n_links))
    impulse = np.zeros((B, model.n_links))
    contacts_on = not model.root_fixed

    fk = fk_positions(model, pos)
    for sub in range(model.substeps):
        acom = centripetal_com(model, fk, vel)
        jc = com_jacobians(model, fk, pos[:, 0:2])
        m = np.einsum("l,blin,blim->bnm", model.mass, jc, jc) + model.m_rot[None]
        bias = np.einsum("l,blin,bli->bn", model.mass, jc, acom)
        grav = np.einsum("l,blin,i->bn", model.mass, jc, model.gravity)

        if constant_torques is not None:
            tau = np.broadcast_to(constant_torques, (B, model.n_dofs)).copy()
            tau = np.clip(tau, -model.torque_limit, model.torque_limit)
        else:
            tau = _pd_torque(model, pos[:, 3:], vel[:, 3:], actions)
        if rng is not None and getattr(model.spec, "torque_noise", 0.0) > 0.0:
            tau = tau + rng.normal(0.0, model.spec.torque_noise, size=tau.shape)

        rhs = grav - bias
        rhs[:, 3:] += tau
        if model.root_fixed:
            m[:, :3, :] = 0.0
            m[:, :, :3] = 0.0
            m[:, [0, 1, 2], [0, 1, 2]] = 1.0
            rhs[:, :3] = 0.0
        # impulses must map through the raw mass matrix: a vertical contact
        # impulse may not change horizontal momentum
        minv = np.linalg.inv(m)
        if constant_torques is None:
            # joint damping integrated implicitly: (M + h*D) dv = h*(tau - D*v + f)
            # is backward Euler in the damping term, stable for any kd
            md = m.copy()
            md[:, np.arange(3, nq), np.arange(3, nq)] += model.h * model.kd
            minv_force = np.linalg.inv(md)
        else:
            minv_force = minv
        udot = np.einsum("bnm,bm->bn", minv_force, rhs)
        vel = vel + model.h * udot

        # impulses before position integration: static friction can then hold
        # a loaded stance exactly (zero velocity -> zero displacement)
        if contacts_on:
            pts, _, rad = _endpoint_data(model, fk)
            pen_pre = rad[None, :] - pts[:, :, 1]
            obs_contact = None
            if obstacles is not None:
                obs_contact = _deepest_obstacle_contact(model, fk, obstacles)
            if (pen_pre > -CONTACT_MARGIN).any() or (
                obs_contact is not None and (obs_contact[0] > -CONTACT_MARGIN).any()
            ):
                vel = _impulse_pass(model, vel, fk, minv, pen_pre, obstacles,
                                    obs_contact, impulse)

        pos = pos + model.h * vel
        fk = fk_positions(model, pos)
        if contacts_on:
            pos, fk, link_depth = _project_positions(model, pos, fk, obstacles)
            depth_max = np.maximum(depth_max, link_depth)

        if not np.all(np.isfinite(pos)) or not np.all(np.isfinite(vel)) or \
                np.abs(pos).max() > BLOWUP_LIMIT:
            raise SimulationBlowupError("integrator produced non-finite/absurd state", sub)

    out = np.concatenate([pos, vel], axis=1)
    return out, depth_max, impulse


def step(spec: CharacterSpec | SimModel, state: CharacterState, action: np.ndarray,
         rng: np.random.Generator | None = None,
         obstacles: Obstacles | None = None,
         constant_torques: np.ndarray | None = None,
         ) -> tuple[CharacterState, ContactReport]:
    """One control step for a single character.

    ``action`` is the PD target vector (clamped to joint limits); the PD law is
    re-evaluated at every substep. Deterministic when ``rng`` is absent.
    """
    model = spec if isinstance(spec, SimModel) else SimModel(spec)
    if constant_torques is None:
        action = np.asarray(action, dtype=np.float64)
        if action.shape != (model.n_dofs,):
            raise InputShapeError(f"action {action.shape}, expected ({model.n_dofs},)")
    new, depth, impulse = step_batch(
        model, state.as_vector()[None, :],
        None if constant_torques is not None else action[None, :],
        obstacles=obstacles,
        constant_torques=constant_torques,
        rng=rng,
    )
    report = ContactReport(
        depth=depth[0],
        impulse=impulse[0],
        in_contact=depth[0] > ContactReport.TOLERANCE,
    )
    return CharacterState.from_vector(new[0], model.n_dofs), report
