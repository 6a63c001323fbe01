"""Pose corruption for the robustness study."""

from __future__ import annotations

import numpy as np

from reaction_forge.data.types import MotionSequence, quantize_f32
from reaction_forge.errors import ConfigError
from reaction_forge.rng import substream


def add_noise(seq: MotionSequence, variance: float, seed: int) -> MotionSequence:
    """i.i.d. zero-mean Gaussian on joint angles and root pose, per frame;
    velocities are recomputed from the noisy poses by finite differences.

    variance 0 returns an identical copy.
    """
    if variance < 0:
        raise ConfigError(f"noise variance must be >= 0, got {variance}")
    if variance == 0:
        return MotionSequence(seq.frames.copy(), seq.fps, seq.family)
    rng = substream(seed, "noise", f"{variance!r}")
    half = seq.frames.shape[1] // 2
    pose = seq.frames[:, :half] + rng.normal(0.0, np.sqrt(variance),
                                             size=(len(seq), half))
    vel = np.empty_like(pose)
    vel[1:-1] = (pose[2:] - pose[:-2]) * (seq.fps / 2.0)
    vel[0] = (pose[1] - pose[0]) * seq.fps
    vel[-1] = (pose[-1] - pose[-2]) * seq.fps
    frames = quantize_f32(np.concatenate([pose, vel], axis=1))
    return MotionSequence(frames, seq.fps, seq.family)
