"""Character description: capsule links on a revolute tree, plus the compiled
constant arrays the dynamics kernels index into.

Conventions. Every link has a frame whose origin sits at its attachment point
on the parent and whose +x axis runs along the capsule. A link's world angle is
``parent_angle + attach_angle + q`` (q = 0 for welded links; the root uses the
state's orientation for ``parent_angle``). Generalized coordinates are
``[root_x, root_y, root_theta, q_0..q_J-1]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from reaction_forge.errors import ConfigError, InputShapeError

ASSETS = Path(__file__).resolve().parent.parent / "assets"


@dataclass
class JointSpec:
    kp: float
    kd: float
    torque_limit: float = 200.0
    angle_min: float = -np.pi
    angle_max: float = np.pi


@dataclass
class LinkSpec:
    name: str
    parent: int            # -1 for the root link
    length: float
    mass: float
    radius: float
    attach: tuple[float, float] = (0.0, 0.0)   # in the parent link frame
    attach_angle: float = 0.0
    joint: JointSpec | None = None             # None = welded (root is always None)


@dataclass
class CharacterSpec:
    name: str
    links: list[LinkSpec]
    gravity: tuple[float, float] = (0.0, -9.81)
    control_dt: float = 1.0 / 30.0
    substeps: int = 8
    friction_damping: float = 0.8
    root_fixed: bool = False
    d: int = 2

    def __post_init__(self):
        if self.d != 2:
            raise ConfigError(f"this build supports D=2 only, got D={self.d}")
        if not self.links or self.links[0].parent != -1 or self.links[0].joint is not None:
            raise ConfigError("links[0] must be the root (parent -1, no joint)")
        for i, ln in enumerate(self.links[1:], start=1):
            if not (0 <= ln.parent < i):
                raise ConfigError(f"link {ln.name}: parent {ln.parent} must precede it (acyclic tree)")
        if self.substeps < 1:
            raise ConfigError("substeps must be >= 1")

    @property
    def joints(self) -> list[JointSpec]:
        return [ln.joint for ln in self.links if ln.joint is not None]

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def nq(self) -> int:
        return 3 + self.n_joints


@dataclass
class CharacterState:
    """Pose and velocity of one character. ``q`` holds joint angles in rad."""

    root_pos: np.ndarray
    root_theta: float
    q: np.ndarray
    root_vel: np.ndarray = None
    root_omega: float = 0.0
    qd: np.ndarray = None

    def __post_init__(self):
        self.root_pos = np.asarray(self.root_pos, dtype=np.float64)
        self.q = np.asarray(self.q, dtype=np.float64)
        if self.root_vel is None:
            self.root_vel = np.zeros(2)
        if self.qd is None:
            self.qd = np.zeros_like(self.q)
        self.root_vel = np.asarray(self.root_vel, dtype=np.float64)
        self.qd = np.asarray(self.qd, dtype=np.float64)

    def as_vector(self) -> np.ndarray:
        return np.concatenate(
            [self.root_pos, [self.root_theta], self.q, self.root_vel, [self.root_omega], self.qd]
        )

    @staticmethod
    def from_vector(vec: np.ndarray, n_joints: int) -> "CharacterState":
        vec = np.asarray(vec, dtype=np.float64)
        nq = 3 + n_joints
        if vec.shape != (2 * nq,):
            raise InputShapeError(f"state vector {vec.shape}, expected ({2 * nq},)")
        return CharacterState(
            root_pos=vec[0:2].copy(),
            root_theta=float(vec[2]),
            q=vec[3:nq].copy(),
            root_vel=vec[nq : nq + 2].copy(),
            root_omega=float(vec[nq + 2]),
            qd=vec[nq + 3 :].copy(),
        )


@dataclass
class ContactReport:
    """Per-link ground contact summary for one control step."""

    depth: np.ndarray      # max pre-resolution penetration, >= 0
    impulse: np.ndarray    # summed normal impulse magnitude
    in_contact: np.ndarray  # depth > tolerance

    TOLERANCE = 1e-9


class SimModel:
    """CharacterSpec compiled to flat arrays (masks, gains, inertias)."""

    def __init__(self, spec: CharacterSpec):
        self.spec = spec
        links = spec.links
        L = len(links)
        self.n_links = L
        self.parent = np.array([ln.parent for ln in links], dtype=np.int64)
        self.attach = np.array([ln.attach for ln in links], dtype=np.float64)
        self.alpha = np.array([ln.attach_angle for ln in links], dtype=np.float64)
        self.length = np.array([ln.length for ln in links], dtype=np.float64)
        self.mass = np.array([ln.mass for ln in links], dtype=np.float64)
        self.radius = np.array([ln.radius for ln in links], dtype=np.float64)
        # capsule approximated as a rod with a disc term for the spin inertia
        self.inertia_com = self.mass * (self.length**2 / 12.0 + self.radius**2 / 2.0)

        dof_link = [i for i, ln in enumerate(links) if ln.joint is not None]
        self.dof_link = np.array(dof_link, dtype=np.int64)
        J = len(dof_link)
        self.n_dofs = J
        self.nq = 3 + J
        link_dof = np.full(L, -1, dtype=np.int64)
        for k, l in enumerate(dof_link):
            link_dof[l] = k
        self.link_dof = link_dof

        # path masks: anc_dof[l, k] = dof k actuates link l;
        # path_edge[m, l] = link m's parent edge lies on the root->l path
        anc_dof = np.zeros((L, J))
        path_edge = np.zeros((L, L))
        alpha_cum = np.zeros(L)
        for l in range(L):
            node = l
            alpha_cum[l] = 0.0
            while node != -1:
                if link_dof[node] >= 0:
                    anc_dof[l, link_dof[node]] = 1.0
                if node != 0:
                    path_edge[node, l] = 1.0
                alpha_cum[l] += self.alpha[node]
                node = int(self.parent[node])
        self.anc_dof = anc_dof
        self.path_edge = path_edge
        self.alpha_cum = alpha_cum
        self.par_idx = np.where(self.parent < 0, 0, self.parent)

        joints = [ln.joint for ln in links if ln.joint is not None]
        self.kp = np.array([j.kp for j in joints])
        self.kd = np.array([j.kd for j in joints])
        self.torque_limit = np.array([j.torque_limit for j in joints])
        self.angle_min = np.array([j.angle_min for j in joints])
        self.angle_max = np.array([j.angle_max for j in joints])

        # rotational part of the mass matrix is configuration independent
        j_theta = np.zeros((L, self.nq))
        j_theta[:, 2] = 1.0
        j_theta[:, 3:] = anc_dof
        self.j_theta = j_theta
        self.m_rot = np.einsum("l,ln,lm->nm", self.inertia_com, j_theta, j_theta)

        self.gravity = np.asarray(spec.gravity, dtype=np.float64)
        self.h = spec.control_dt / spec.substeps
        self.substeps = spec.substeps
        self.friction_damping = spec.friction_damping
        self.root_fixed = spec.root_fixed
        self.total_mass = float(self.mass.sum())


# -- JSON round trip ----------------------------------------------------------


def spec_to_dict(spec: CharacterSpec) -> dict:
    return {
        "name": spec.name,
        "d": spec.d,
        "gravity": list(spec.gravity),
        "control_dt": spec.control_dt,
        "substeps": spec.substeps,
        "friction_damping": spec.friction_damping,
        "root_fixed": spec.root_fixed,
        "links": [
            {
                "name": ln.name,
                "parent": ln.parent,
                "length": ln.length,
                "mass": ln.mass,
                "radius": ln.radius,
                "attach": list(ln.attach),
                "attach_angle": ln.attach_angle,
                "joint": None
                if ln.joint is None
                else {
                    "kp": ln.joint.kp,
                    "kd": ln.joint.kd,
                    "torque_limit": ln.joint.torque_limit,
                    "angle_min": ln.joint.angle_min,
                    "angle_max": ln.joint.angle_max,
                },
            }
            for ln in spec.links
        ],
    }


def spec_from_dict(data: dict) -> CharacterSpec:
    try:
        links = [
            LinkSpec(
                name=ld["name"],
                parent=int(ld["parent"]),
                length=float(ld["length"]),
                mass=float(ld["mass"]),
                radius=float(ld["radius"]),
                attach=(float(ld["attach"][0]), float(ld["attach"][1])),
                attach_angle=float(ld["attach_angle"]),
                joint=None if ld.get("joint") is None else JointSpec(**ld["joint"]),
            )
            for ld in data["links"]
        ]
        return CharacterSpec(
            name=data["name"],
            links=links,
            gravity=tuple(data.get("gravity", (0.0, -9.81))),
            control_dt=float(data.get("control_dt", 1.0 / 30.0)),
            substeps=int(data.get("substeps", 8)),
            friction_damping=float(data.get("friction_damping", 0.8)),
            root_fixed=bool(data.get("root_fixed", False)),
            d=int(data.get("d", 2)),
        )
    except (KeyError, TypeError, ValueError) as e:
        raise ConfigError(f"malformed character spec: {e}") from e


def save_character(path: str | Path, spec: CharacterSpec) -> None:
    Path(path).write_text(json.dumps(spec_to_dict(spec), indent=2) + "\n")


def load_character(path: str | Path | None = None) -> CharacterSpec:
    """Load a character spec; None loads the packaged planar humanoid."""
    p = Path(path) if path is not None else ASSETS / "humanoid2d.json"
    try:
        data = json.loads(p.read_text())
    except FileNotFoundError:
        raise ConfigError(f"character spec not found: {p}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"character spec {p} is not valid JSON: {e}")
    return spec_from_dict(data)


def humanoid_spec() -> CharacterSpec:
    """The default planar humanoid: torso with a welded head, two 2-segment
    arms and two 2-segment legs (8 revolute joints).

    PD gains scale with the driven link's mass: kp = 300 * mass,
    kd = 30 * mass (the integrator treats joint damping implicitly, so the
    high kd is stable).
    """
    spread = 0.20

    def joint(mass: float, lo: float, hi: float) -> JointSpec:
        return JointSpec(kp=300.0 * mass, kd=30.0 * mass, torque_limit=200.0,
                         angle_min=lo, angle_max=hi)

    links = [
        LinkSpec("torso", -1, 0.55, 24.0, 0.14, (0.0, 0.0), np.pi / 2.0, None),
        LinkSpec("head", 0, 0.16, 4.0, 0.10, (0.56, 0.0), 0.0, None),
        LinkSpec("upper_arm_l", 0, 0.28, 2.0, 0.050, (0.50, 0.0), np.pi,
                 joint(2.0, -2.8, 2.8)),
        LinkSpec("forearm_l", 2, 0.28, 1.2, 0.045, (0.28, 0.0), 0.0,
                 joint(1.2, -2.8, 2.8)),
        LinkSpec("upper_arm_r", 0, 0.28, 2.0, 0.050, (0.50, 0.0), np.pi,
                 joint(2.0, -2.8, 2.8)),
        LinkSpec("forearm_r", 4, 0.28, 1.2, 0.045, (0.28, 0.0), 0.0,
                 joint(1.2, -2.8, 2.8)),
        LinkSpec("thigh_l", 0, 0.42, 6.0, 0.070, (-0.05, 0.0), np.pi - spread,
                 joint(6.0, -1.6, 1.6)),
        LinkSpec("shin_l", 6, 0.40, 3.5, 0.060, (0.42, 0.0), 0.0,
                 joint(3.5, -2.6, 2.6)),
        LinkSpec("thigh_r", 0, 0.42, 6.0, 0.070, (-0.05, 0.0), np.pi + spread,
                 joint(6.0, -1.6, 1.6)),
        LinkSpec("shin_r", 8, 0.40, 3.5, 0.060, (0.42, 0.0), 0.0,
                 joint(3.5, -2.6, 2.6)),
    ]
    return CharacterSpec(name="humanoid2d", links=links)
