"""Binary motion pair files.

Layout (little-endian): magic ``RFMO``, version u32, fps f32, J u32, D u32,
L u32, family u32, then L frames of actor/reactor state rows interleaved as
f32 (each row is 2*(D+1+J) floats). Demonstrations ride in the checkpoint
container instead: they need f64 states for exact replay.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from reaction_forge.checkpoint import load_tensors, save_tensors
from reaction_forge.data.types import Demonstration, InteractionPair, MotionSequence, Trajectory
from reaction_forge.errors import MotionFormatError

MAGIC = b"RFMO"
VERSION = 1
DEMO_SUFFIX = ".demo.rfck"


def save_motion(path: str | Path, pair: InteractionPair) -> None:
    L = len(pair)
    statedim = pair.actor.frames.shape[1]
    J = pair.actor.n_joints
    D = (statedim // 2) - 1 - J
    header = MAGIC + struct.pack("<IfIIII", VERSION, pair.actor.fps, J, D, L,
                                 pair.family)
    payload = np.empty((L, 2, statedim), dtype="<f4")
    payload[:, 0, :] = pair.actor.frames
    payload[:, 1, :] = pair.reactor.frames
    Path(path).write_bytes(header + payload.tobytes())


def load_motion(path: str | Path) -> InteractionPair:
    buf = Path(path).read_bytes()
    if buf[:4] != MAGIC:
        raise MotionFormatError(f"bad motion magic {buf[:4]!r}", 0)
    try:
        version, fps, J, D, L, family = struct.unpack_from("<IfIIII", buf, 4)
    except struct.error as e:
        raise MotionFormatError(f"truncated motion header: {e}", 4) from e
    if version != VERSION:
        raise MotionFormatError(f"unsupported motion version {version}", 4)
    if fps <= 0 or L < 2 or D < 1:
        raise MotionFormatError(f"bad motion header (fps={fps}, L={L}, D={D})", 8)
    statedim = 2 * (D + 1 + J)
    off = 4 + struct.calcsize("<IfIIII")
    need = 4 * L * 2 * statedim
    if len(buf) - off < need:
        raise MotionFormatError(
            f"motion payload truncated: need {need} bytes, have {len(buf) - off}",
            off + (len(buf) - off))
    data = np.frombuffer(buf, dtype="<f4", count=L * 2 * statedim, offset=off)
    data = data.reshape(L, 2, statedim).astype(np.float64)
    actor = MotionSequence(frames=data[:, 0, :], fps=float(fps), family=int(family))
    reactor = MotionSequence(frames=data[:, 1, :], fps=float(fps), family=int(family))
    return InteractionPair(actor=actor, reactor=reactor)


# -- demonstrations (f64 sidecar in the checkpoint container) -------------------


def save_demo(path: str | Path, demo: Demonstration) -> None:
    """Store exact trajectories next to the quantized motion file."""
    save_tensors(path, {
        "actor.states": demo.actor_track.states,
        "actor.actions": demo.actor_track.actions,
        "reactor.states": demo.reactor_track.states,
        "reactor.actions": demo.reactor_track.actions,
        "meta": np.array([demo.pair.actor.fps, float(demo.pair.family)]),
    })


def load_demo(path: str | Path, pair: InteractionPair | None = None) -> Demonstration:
    t = load_tensors(path)
    fps, family = float(t["meta"][0]), int(t["meta"][1])
    if pair is None:
        pair = InteractionPair(
            actor=MotionSequence(t["actor.states"].copy(), fps=fps, family=family),
            reactor=MotionSequence(t["reactor.states"].copy(), fps=fps, family=family),
        )
    return Demonstration(
        pair=pair,
        actor_track=Trajectory(t["actor.states"], t["actor.actions"], fps, family),
        reactor_track=Trajectory(t["reactor.states"], t["reactor.actions"], fps, family),
    )
