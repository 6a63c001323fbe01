"""Motion and demonstration containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reaction_forge.errors import ContractError, InputShapeError
from reaction_forge.sim.spec import CharacterState

FAMILIES = ("approach-and-handshake", "push-and-recoil", "mirror-follow", "circle-around")


def quantize_f32(arr: np.ndarray) -> np.ndarray:
    """Motion payloads are stored as f32; keeping in-memory values f32-exact
    makes save/load round trips bit-lossless."""
    return np.asarray(arr, dtype=np.float32).astype(np.float64)


@dataclass
class MotionSequence:
    """Kinematic track of one character: (L, 2*(D+1+J)) state rows at fps."""

    frames: np.ndarray
    fps: float = 30.0
    family: int = 0

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or len(self.frames) < 2:
            raise InputShapeError(f"frames must be (L>=2, statedim), got {self.frames.shape}")
        if not (np.isfinite(self.fps) and self.fps > 0):
            raise ContractError("fps must be positive and finite")
        if not np.all(np.isfinite(self.frames)):
            raise ContractError("motion contains non-finite values")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def n_joints(self) -> int:
        return self.frames.shape[1] // 2 - 3

    def state_at(self, i: int) -> CharacterState:
        return CharacterState.from_vector(self.frames[i], self.n_joints)


@dataclass
class InteractionPair:
    actor: MotionSequence
    reactor: MotionSequence

    def __post_init__(self):
        if len(self.actor) != len(self.reactor):
            raise ContractError("actor and reactor must have equal length")
        if self.actor.fps != self.reactor.fps:
            raise ContractError("actor and reactor must share fps")

    def __len__(self) -> int:
        return len(self.actor)

    @property
    def family(self) -> int:
        return self.actor.family


@dataclass
class Trajectory:
    """Demonstration unit: simulator-exact states plus the PD targets that
    produced them. states[i+1] = step(states[i], actions[i])."""

    states: np.ndarray            # (L, statedim) float64
    actions: np.ndarray           # (L-1, J) float64
    fps: float = 30.0
    family: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        self.actions = np.asarray(self.actions, dtype=np.float64)
        if len(self.states) != len(self.actions) + 1:
            raise ContractError(
                f"need one action per transition: {len(self.states)} states, "
                f"{len(self.actions)} actions")

    def __len__(self) -> int:
        return len(self.states)


@dataclass
class Demonstration:
    """Curated tracked pair: kinematic reference plus physical trajectories."""

    pair: InteractionPair
    actor_track: Trajectory
    reactor_track: Trajectory

    def __post_init__(self):
        if len(self.actor_track) != len(self.reactor_track):
            raise ContractError("tracked trajectories must have equal length")
