"""Vectorized training environment for reference tracking.

Each of the B slots runs one character against one reference sequence in
lockstep with the others. Episodes start from a reference frame set into the
simulator exactly, and end either when the sequence runs out of frames or
when the character strays too far from it.
"""

from __future__ import annotations

import numpy as np

from reaction_forge.data.types import MotionSequence
from reaction_forge.errors import ContractError, InputShapeError, SimulationBlowupError
from reaction_forge.sim.dynamics import step_batch
from reaction_forge.sim.kinematics import feature_dim, state_features_batch
from reaction_forge.sim.spec import SimModel
from reaction_forge.tracker.reward import imitation_reward, mean_keypoint_error

TERMINATE_ERROR = 0.5   # mean keypoint error (m) that ends a training episode


def tracking_features(model: SimModel, states: np.ndarray, ref_next: np.ndarray
                      ) -> np.ndarray:
    """Observation rows: own keypoints next to the target frame's keypoints.

    Both blocks are expressed in a frame that translates with the character's
    root x but keeps world orientation and height, so gravity and ground stay
    visible while absolute position (the only symmetry the flat ground gives
    us) drops out.
    """
    states = np.asarray(states, dtype=np.float64)
    ref_next = np.asarray(ref_next, dtype=np.float64)
    B = states.shape[0]
    frame_pos = np.stack([states[:, 0], np.zeros(B)], axis=1)
    zero = np.zeros(B)
    self_f = state_features_batch(model, states, frame_pos=frame_pos, frame_theta=zero)
    goal_f = state_features_batch(model, ref_next, frame_pos=frame_pos, frame_theta=zero)
    return np.concatenate([self_f, goal_f], axis=1)


def obs_dim(model: SimModel) -> int:
    return 2 * feature_dim(model.spec)


class VecTrackingEnv:
    """B tracking episodes advanced in lockstep.

    ``step`` takes residual joint targets (added to the next reference frame's
    joint angles, then clamped to the joint limits) and returns
    (obs, reward, done, timeout, final_obs). ``final_obs`` is the observation
    before any auto-reset, which the value bootstrap needs; ``timeout`` marks
    episodes that ended by exhausting the reference rather than by failure.
    """

    def __init__(self, model: SimModel, refs: list[MotionSequence | np.ndarray],
                 rng: np.random.Generator, batch: int = 16,
                 terminate_error: float = TERMINATE_ERROR):
        if not refs:
            raise ContractError("tracking env needs at least one reference")
        self.model = model
        self.frames = [np.asarray(getattr(r, "frames", r), dtype=np.float64) for r in refs]
        for f in self.frames:
            if f.ndim != 2 or f.shape[1] != 2 * model.nq or len(f) < 2:
                raise InputShapeError(f"reference shaped {f.shape} is not trackable")
        self.rng = rng
        self.B = batch
        self.terminate_error = terminate_error
        self.seq = np.zeros(batch, dtype=np.int64)
        self.t = np.zeros(batch, dtype=np.int64)
        self.states = np.zeros((batch, 2 * model.nq))
        for i in range(batch):
            self._reset_slot(i)

    def _reset_slot(self, i: int) -> None:
        s = int(self.rng.integers(len(self.frames)))
        L = len(self.frames[s])
        t = int(self.rng.integers(0, L - 1))
        self.seq[i] = s
        self.t[i] = t
        self.states[i] = self.frames[s][t]

    def _ref_rows(self, offset: int = 0) -> np.ndarray:
        out = np.empty_like(self.states)
        for i in range(self.B):
            out[i] = self.frames[self.seq[i]][self.t[i] + offset]
        return out

    def observe(self) -> np.ndarray:
        return tracking_features(self.model, self.states, self._ref_rows(1))

    def ref_next_q(self) -> np.ndarray:
        return self._ref_rows(1)[:, 3 : self.model.nq]

    def _step_rows(self, targets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Per-row fallback when the lockstep batch blows up: rows that still
        integrate keep their result, rows that blow up freeze and report."""
        nxt = self.states.copy()
        blown = np.zeros(self.B, dtype=bool)
        for i in range(self.B):
            try:
                res, _, _ = step_batch(self.model, self.states[i : i + 1],
                                       targets[i : i + 1])
                nxt[i] = res[0]
            except SimulationBlowupError:
                blown[i] = True
        return nxt, blown

    def step(self, delta: np.ndarray):
        delta = np.asarray(delta, dtype=np.float64)
        if delta.shape != (self.B, self.model.n_dofs):
            raise InputShapeError(
                f"delta {delta.shape}, expected ({self.B}, {self.model.n_dofs})")
        ref_next = self._ref_rows(1)
        targets = np.clip(ref_next[:, 3 : self.model.nq] + delta,
                          self.model.angle_min, self.model.angle_max)
        try:
            nxt, _, _ = step_batch(self.model, self.states, targets)
            blown = np.zeros(self.B, dtype=bool)
        except SimulationBlowupError:
            nxt, blown = self._step_rows(targets)

        reward = imitation_reward(self.model, ref_next, nxt)
        err = mean_keypoint_error(self.model, ref_next, nxt)
        reward[blown] = 0.0
        self.states = nxt
        self.t += 1

        failed = (err > self.terminate_error) | blown
        lengths = np.array([len(self.frames[s]) for s in self.seq])
        timeout = (self.t >= lengths - 1) & ~failed
        done = failed | timeout

        final_obs = self._pre_reset_obs()
        for i in np.nonzero(done)[0]:
            self._reset_slot(int(i))
        return self.observe(), reward, done, timeout, final_obs

    def _pre_reset_obs(self) -> np.ndarray:
        # rows that timed out have no frame t+1 to feature-ize; their value
        # bootstrap uses the last frame as its own goal (zero remaining error)
        ref = np.empty_like(self.states)
        for i in range(self.B):
            s, t = self.seq[i], self.t[i]
            ref[i] = self.frames[s][min(t + 1, len(self.frames[s]) - 1)]
        return tracking_features(self.model, self.states, ref)
