"""Procedural two-character interaction corpus.

Each family scripts smooth root and arm trajectories for an actor/reactor
pair, keeps both feet planted, and closes the legs with two-link IK so every
frame is kinematically consistent (feet never skate, joints stay inside their
limits). Velocities are finite differences of the scripted poses. All numbers
flow through per-pair RNG substreams keyed by (family, index), so the corpus
is deterministic and independent of generation order.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reaction_forge.data.types import FAMILIES, InteractionPair, MotionSequence, quantize_f32
from reaction_forge.errors import ConfigError
from reaction_forge.rng import substream

THIGH, SHIN = 0.42, 0.40
UPPER, FORE = 0.28, 0.28
HIP_OFF, SHOULDER_OFF = -0.05, 0.50
SPREAD = 0.20
FOOT_R, FORE_R, TORSO_R = 0.06, 0.045, 0.14
LEG_REACH_MAX = 0.818          # keep a little knee bend so the IK branch is stable
ARM_REACH_MAX = UPPER + FORE - 0.01

# dof order: sh_l, el_l, sh_r, el_r, hip_l, knee_l, hip_r, knee_r
SH_L, EL_L, SH_R, EL_R, HIP_L, KNEE_L, HIP_R, KNEE_R = range(8)


@dataclass
class GenConfig:
    n_pairs: int = 200
    families: tuple[str, ...] = FAMILIES
    proportions: tuple[float, ...] = (0.25, 0.25, 0.25, 0.25)
    min_len: int = 60
    max_len: int = 150
    fps: float = 30.0

    def __post_init__(self):
        for fam in self.families:
            if fam not in FAMILIES:
                raise ConfigError(f"unknown interaction family {fam!r}")
        if len(self.proportions) != len(self.families):
            raise ConfigError("one proportion per family required")
        if self.n_pairs < 1 or self.min_len < 2 or self.max_len < self.min_len:
            raise ConfigError("bad corpus sizing")
        total = float(sum(self.proportions))
        if not np.isclose(total, 1.0, atol=1e-6):
            raise ConfigError(f"family proportions must sum to 1, got {total}")


def family_counts(config: GenConfig) -> dict[str, int]:
    """Largest-remainder apportionment so the histogram matches proportions."""
    raw = [p * config.n_pairs for p in config.proportions]
    base = [int(np.floor(r)) for r in raw]
    rem = config.n_pairs - sum(base)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - base[i]), i))
    for i in order[:rem]:
        base[i] += 1
    return dict(zip(config.families, base))


def _wrap(a):
    return (a + np.pi) % (2 * np.pi) - np.pi


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _two_link_ik(anchor, target, l1, l2, base_angle, bend, reach_max):
    """Joint angles closing a 2-link chain from anchor to target.

    anchor/target: (L, 2); base_angle: (L,) world angle of the chain at q=0;
    bend: +1/-1 picks the elbow/knee side. Returns (q1, q2), both (L,).
    """
    w = target - anchor
    d = np.sqrt((w**2).sum(-1))
    lo = abs(l1 - l2) + 1e-3
    scale = np.clip(d, lo, reach_max) / np.maximum(d, 1e-9)
    w = w * scale[:, None]
    d = np.clip(d, lo, reach_max)
    cos_g = np.clip((l1**2 + l2**2 - d**2) / (2 * l1 * l2), -1.0, 1.0)
    gamma = np.arccos(cos_g)
    cos_d = np.clip((l1**2 + d**2 - l2**2) / (2 * l1 * d), -1.0, 1.0)
    delta = np.arccos(cos_d)
    phi = np.arctan2(w[:, 1], w[:, 0])
    a1 = phi + bend * delta
    q1 = _wrap(a1 - base_angle)
    q2 = bend * (gamma - np.pi)
    return q1, q2


def _anchor(root, offset):
    """World position of a torso-frame attachment point, root = (L,3)."""
    up = root[:, 2] + np.pi / 2
    return root[:, :2] + offset * np.stack([np.cos(up), np.sin(up)], axis=-1)


def _legs(root, foot_l, foot_r):
    """IK both legs to fixed foot points (shin-tip centers resting on ground).

    Knees always bow outward. With both knees bowed the same way the stance
    is a loaded mechanism that walks itself over; bowed apart it is an arch.
    """
    hip = _anchor(root, HIP_OFF)
    base_l = root[:, 2] + np.pi / 2 + np.pi - SPREAD
    base_r = root[:, 2] + np.pi / 2 + np.pi + SPREAD
    tl = np.broadcast_to(np.asarray(foot_l, dtype=np.float64), hip.shape)
    tr = np.broadcast_to(np.asarray(foot_r, dtype=np.float64), hip.shape)
    hl, kl = _two_link_ik(hip, tl, THIGH, SHIN, base_l, -1.0, LEG_REACH_MAX)
    hr, kr = _two_link_ik(hip, tr, THIGH, SHIN, base_r, +1.0, LEG_REACH_MAX)
    return hl, kl, hr, kr


def _arm_to(root, target, bend):
    shoulder = _anchor(root, SHOULDER_OFF)
    base = root[:, 2] + np.pi / 2 + np.pi
    return _two_link_ik(shoulder, np.broadcast_to(target, shoulder.shape),
                        UPPER, FORE, base, bend, ARM_REACH_MAX)


def _velocities(p, fps):
    v = np.empty_like(p)
    v[1:-1] = (p[2:] - p[:-2]) * (fps / 2.0)
    v[0] = (p[1] - p[0]) * fps
    v[-1] = (p[-1] - p[-2]) * fps
    return v


def _assemble(x, y, th, q, fps):
    """Pose columns -> (L, 22) state rows with finite-difference velocities."""
    L = len(x)
    pose = np.column_stack([x, y, th, q])
    vel = _velocities(pose, fps)
    frames = np.concatenate([pose, vel], axis=1)
    assert frames.shape == (L, 22)
    return quantize_f32(frames)


def _idle_arms(L, rng, t):
    """Small hanging sway so arms are never perfectly static."""
    q = np.zeros((L, 4))
    for k in range(4):
        amp = rng.uniform(0.02, 0.06)
        f = rng.uniform(0.4, 0.9)
        ph = rng.uniform(0, 2 * np.pi)
        q[:, k] = amp * np.sin(2 * np.pi * f * t + ph)
    return q


def _blend(a, b, w):
    return a * (1.0 - w) + b * w


def mirror_pose(x, y, th, q, mid_x):
    """Reflect a scripted pose about the vertical line x = mid_x.

    The character is left/right symmetric, so reflection maps onto the same
    topology with sides swapped and angles negated.
    """
    qm = np.empty_like(q)
    qm[:, SH_L], qm[:, EL_L] = -q[:, SH_R], -q[:, EL_R]
    qm[:, SH_R], qm[:, EL_R] = -q[:, SH_L], -q[:, EL_L]
    qm[:, HIP_L], qm[:, KNEE_L] = -q[:, HIP_R], -q[:, KNEE_R]
    qm[:, HIP_R], qm[:, KNEE_R] = -q[:, HIP_L], -q[:, KNEE_L]
    return 2.0 * mid_x - x, y.copy(), -th, qm


def _stance(rng, center, half=0.155):
    # near the rest-pose splay so the legs stand almost straight; bent knees
    # under load pump energy into a tipping mode that PD cannot arrest
    w = half * rng.uniform(0.97, 1.03)
    return np.array([center - w, FOOT_R]), np.array([center + w, FOOT_R])


def _root_curves(rng, L, center, fps=30.0, y0=None):
    t = np.arange(L) / L
    tt = np.arange(L) / fps
    # legs near full extension: the stance is then a rigid arch. With knees
    # bent much past ~0.4 rad it turns into a spring-legged inverted pendulum
    # whose tip mode PD cannot arrest (no ankle torque exists to do it)
    y0 = 0.916 + rng.uniform(-0.001, 0.001) if y0 is None else y0
    bob_a = rng.uniform(0.0015, 0.003)
    bob_f = rng.uniform(1.0, 2.0)
    ph = rng.uniform(0, 2 * np.pi)
    x = np.full(L, center)
    y = y0 + bob_a * np.sin(2 * np.pi * bob_f * tt + ph)
    th = 0.008 * np.sin(2 * np.pi * rng.uniform(0.3, 0.7) * tt + ph / 2)
    return x, y, th, t


def _family_handshake(rng, L, fps):
    # separations sized so the meeting point stays inside both arm reaches
    sep = rng.uniform(0.78, 0.86)
    ax, ay, ath, t = _root_curves(rng, L, -sep / 2)
    bx, by, bth, _ = _root_curves(rng, L, +sep / 2)
    approach = rng.uniform(0.05, 0.07)
    ax = ax + approach * _smoothstep(t / 0.55)
    ath = ath + 0.015 * _smoothstep(t / 0.55)        # slight forward lean

    # feet planted under the midpoint of the walk so both ends stay in reach
    fl_a, fr_a = _stance(rng, -sep / 2 + approach / 2)
    fl_b, fr_b = _stance(rng, +sep / 2)

    qa = np.zeros((L, 8))
    qb = np.zeros((L, 8))
    qa[:, :4] = _idle_arms(L, rng, t * L / fps)
    qb[:, :4] = _idle_arms(L, rng, t * L / fps)

    roots_a = np.column_stack([ax, ay, ath])
    roots_b = np.column_stack([bx, by, bth])
    mid = (ax + bx) / 2
    shake_y = rng.uniform(1.06, 1.10)
    gap = FORE_R + 0.006
    ta = np.column_stack([mid - gap, np.full(L, shake_y)])
    tb = np.column_stack([mid + gap, np.full(L, shake_y)])
    sh_a = _arm_to(roots_a, ta, bend=-1.0)
    sh_b = _arm_to(roots_b, tb, bend=+1.0)

    w = _smoothstep((t - 0.50) / 0.12) * (1.0 - _smoothstep((t - 0.86) / 0.10))
    pump = 0.02 * np.sin(2 * np.pi * 2.0 * t * (L / fps))
    qa[:, SH_R] = _blend(qa[:, SH_R], sh_a[0] + pump, w)
    qa[:, EL_R] = _blend(qa[:, EL_R], sh_a[1], w)
    qb[:, SH_L] = _blend(qb[:, SH_L], sh_b[0] - pump, w)
    qb[:, EL_L] = _blend(qb[:, EL_L], sh_b[1], w)

    qa[:, HIP_L], qa[:, KNEE_L], qa[:, HIP_R], qa[:, KNEE_R] = _legs(roots_a, fl_a, fr_a)
    qb[:, HIP_L], qb[:, KNEE_L], qb[:, HIP_R], qb[:, KNEE_R] = _legs(roots_b, fl_b, fr_b)
    return (ax, ay, ath, qa), (bx, by, bth, qb)


def _family_push(rng, L, fps):
    sep = rng.uniform(0.62, 0.70)
    ax, ay, ath, t = _root_curves(rng, L, -sep / 2)
    bx, by, bth, _ = _root_curves(rng, L, +sep / 2)

    recoil = rng.uniform(0.04, 0.06)
    fl_a, fr_a = _stance(rng, -sep / 2)
    fl_b, fr_b = _stance(rng, +sep / 2 + recoil * 0.45)
    rw = _smoothstep((t - 0.42) / 0.18)
    recover = _smoothstep((t - 0.78) / 0.16)
    bx = bx + recoil * rw - 0.5 * recoil * recover
    by = by - 0.005 * rw * (1 - recover)
    bth = bth + 0.05 * rw * (1 - recover)            # tips back, then recovers

    qa = np.zeros((L, 8))
    qb = np.zeros((L, 8))
    qa[:, :4] = _idle_arms(L, rng, t * L / fps)
    qb[:, :4] = _idle_arms(L, rng, t * L / fps)

    roots_a = np.column_stack([ax, ay, ath])
    roots_b = np.column_stack([bx, by, bth])
    push_y = by + rng.uniform(0.36, 0.42)
    target = np.column_stack([bx - TORSO_R - FORE_R - 0.012, push_y])
    arm = _arm_to(roots_a, target, bend=-1.0)
    w = _smoothstep((t - 0.28) / 0.12) * (1.0 - _smoothstep((t - 0.55) / 0.16))
    qa[:, SH_R] = _blend(qa[:, SH_R], arm[0], w)
    qa[:, EL_R] = _blend(qa[:, EL_R], arm[1], w)

    # reactor arms swing up defensively as the push lands
    flail = _smoothstep((t - 0.40) / 0.10) * (1.0 - _smoothstep((t - 0.75) / 0.20))
    qb[:, SH_L] = _blend(qb[:, SH_L], -1.3 + 0.1 * np.sin(9 * t), flail)
    qb[:, EL_L] = _blend(qb[:, EL_L], -0.6, flail)
    qb[:, SH_R] = _blend(qb[:, SH_R], -1.1, flail)
    qb[:, EL_R] = _blend(qb[:, EL_R], -0.5, flail)

    qa[:, HIP_L], qa[:, KNEE_L], qa[:, HIP_R], qa[:, KNEE_R] = _legs(roots_a, fl_a, fr_a)
    qb[:, HIP_L], qb[:, KNEE_L], qb[:, HIP_R], qb[:, KNEE_R] = _legs(roots_b, fl_b, fr_b)
    return (ax, ay, ath, qa), (bx, by, bth, qb)


def _family_mirror(rng, L, fps):
    c = rng.uniform(0.42, 0.55)
    ax, ay, ath, t = _root_curves(rng, L, -c)
    sway_a = rng.uniform(0.025, 0.04)
    sway_f = rng.uniform(0.25, 0.45)
    ax = ax + sway_a * np.sin(2 * np.pi * sway_f * t * (L / fps))
    ath = ath + 0.03 * np.sin(2 * np.pi * sway_f * t * (L / fps) + rng.uniform(0, 1))

    qa = np.zeros((L, 8))
    tt = t * (L / fps)
    for k, base_amp in ((SH_L, 0.9), (EL_L, 0.5), (SH_R, 0.9), (EL_R, 0.5)):
        amp = base_amp * rng.uniform(0.6, 1.0)
        f = rng.uniform(0.3, 0.6)
        ph = rng.uniform(0, 2 * np.pi)
        qa[:, k] = -amp / 2 + amp * 0.5 * np.sin(2 * np.pi * f * tt + ph)

    fl_a, fr_a = _stance(rng, -c)
    roots_a = np.column_stack([ax, ay, ath])
    qa[:, HIP_L], qa[:, KNEE_L], qa[:, HIP_R], qa[:, KNEE_R] = _legs(roots_a, fl_a, fr_a)

    bx, by, bth, qb = mirror_pose(ax, ay, ath, qa, mid_x=0.0)
    return (ax, ay, ath, qa), (bx, by, bth, qb)


def _family_circle(rng, L, fps):
    sep = rng.uniform(0.95, 1.10)
    ax, ay, ath, t = _root_curves(rng, L, -sep / 2)
    bx, by, bth, _ = _root_curves(rng, L, +sep / 2)

    orbit = rng.uniform(0.025, 0.035)
    cycles = rng.uniform(0.8, 1.4)
    phase = 2 * np.pi * cycles * t
    ax = ax + orbit * np.sin(phase)
    ay = ay + 0.004 * np.sin(2 * phase)
    ath = ath + 0.9 * orbit * np.cos(phase)           # leans into the sway

    # the other character turns to keep facing the mover, with a short lag
    lag = rng.uniform(0.05, 0.12)
    bth = bth + 0.05 * np.sin(phase - 2 * np.pi * cycles * lag)
    bx = bx + 0.02 * np.sin(phase - 2 * np.pi * cycles * lag)

    qa = np.zeros((L, 8))
    qb = np.zeros((L, 8))
    tt = t * (L / fps)
    qa[:, :4] = _idle_arms(L, rng, tt)
    qb[:, :4] = _idle_arms(L, rng, tt)
    qb[:, SH_L] += 0.3 * np.sin(phase - 1.0)          # loose trailing gesture

    fl_a, fr_a = _stance(rng, -sep / 2)
    fl_b, fr_b = _stance(rng, +sep / 2)
    roots_a = np.column_stack([ax, ay, ath])
    roots_b = np.column_stack([bx, by, bth])
    qa[:, HIP_L], qa[:, KNEE_L], qa[:, HIP_R], qa[:, KNEE_R] = _legs(roots_a, fl_a, fr_a)
    qb[:, HIP_L], qb[:, KNEE_L], qb[:, HIP_R], qb[:, KNEE_R] = _legs(roots_b, fl_b, fr_b)
    return (ax, ay, ath, qa), (bx, by, bth, qb)


_FAMILY_FN = {
    "approach-and-handshake": _family_handshake,
    "push-and-recoil": _family_push,
    "mirror-follow": _family_mirror,
    "circle-around": _family_circle,
}

JOINT_LIMIT_HI = np.array([2.8, 2.8, 2.8, 2.8, 1.6, 2.6, 1.6, 2.6])


def _make_pair(family: str, index: int, config: GenConfig, seed: int) -> InteractionPair:
    rng = substream(seed, "gen", family, str(index))
    L = int(rng.integers(config.min_len, config.max_len + 1))
    (ax, ay, ath, qa), (bx, by, bth, qb) = _FAMILY_FN[family](rng, L, config.fps)
    limit = JOINT_LIMIT_HI - 0.02
    assert np.all(np.abs(qa) <= limit) and np.all(np.abs(qb) <= limit), family
    fam_id = FAMILIES.index(family)
    actor = MotionSequence(_assemble(ax, ay, ath, qa, config.fps), config.fps, fam_id)
    reactor = MotionSequence(_assemble(bx, by, bth, qb, config.fps), config.fps, fam_id)
    return InteractionPair(actor=actor, reactor=reactor)


def synth_interactions(config: GenConfig, seed: int) -> list[InteractionPair]:
    """Deterministic synthetic corpus; pair i of family f depends only on
    (seed, f, i), never on generation order."""
    counts = family_counts(config)
    out: list[InteractionPair] = []
    for family in config.families:
        for i in range(counts[family]):
            out.append(_make_pair(family, i, config, seed))
    return out
