"""Tracker training, retry-based sequence tracking, and demo curation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from reaction_forge.data.types import Demonstration, FAMILIES, InteractionPair, MotionSequence, Trajectory
from reaction_forge.errors import SimulationBlowupError, StageError, TrainingDivergenceError
from reaction_forge.nn import AdamState
from reaction_forge.rng import substream, substream_seed
from reaction_forge.sim.dynamics import step_batch
from reaction_forge.sim.spec import SimModel
from reaction_forge.tracker.env import VecTrackingEnv, obs_dim, tracking_features
from reaction_forge.tracker.ppo import (
    PpoConfig,
    TrackerPolicy,
    gae_advantages,
    init_tracker_policy,
    ppo_update,
)
from reaction_forge.tracker.reward import mean_keypoint_error

SUCCESS_KP_ERROR = 0.10   # mean keypoint error bound for a successful attempt
SUCCESS_ROOT_DRIFT = 0.5  # max root position drift bound


@dataclass
class TrackerTrainConfig:
    iterations: int = 40
    batch: int = 16
    hidden: tuple[int, ...] = (128, 128)
    ppo: PpoConfig = field(default_factory=PpoConfig)


@dataclass
class TrackResult:
    """Outcome of tracking one reference sequence with retries."""

    trajectory: Trajectory | None
    attempt_errors: np.ndarray
    attempt_drifts: np.ndarray
    chosen: int

    @property
    def success(self) -> bool:
        return self.trajectory is not None


def train_tracker(model: SimModel, corpus: list[InteractionPair],
                  config: TrackerTrainConfig, seed: int,
                  log: list | None = None) -> TrackerPolicy:
    """PPO over the whole corpus (both characters of every pair)."""
    refs: list[MotionSequence] = []
    for pair in corpus:
        refs.append(pair.actor)
        refs.append(pair.reactor)
    env = VecTrackingEnv(model, refs, substream(seed, "tracker", "env"),
                         batch=config.batch)
    policy = init_tracker_policy(obs_dim(model), model.n_dofs,
                                 substream(seed, "tracker", "init"),
                                 action_std=config.ppo.action_std,
                                 hidden=config.hidden)
    rng_act = substream(seed, "tracker", "explore")
    rng_update = substream(seed, "tracker", "minibatch")
    cfg = config.ppo

    obs = env.observe()
    for it in range(config.iterations):
        T, B = cfg.horizon, env.B
        obs_buf = np.empty((T, B, obs.shape[1]))
        act_buf = np.empty((T, B, model.n_dofs))
        logp_buf = np.empty((T, B))
        rew_buf = np.empty((T, B))
        val_buf = np.empty((T, B))
        boot_buf = np.empty((T, B))
        done_buf = np.empty((T, B), dtype=bool)
        tout_buf = np.empty((T, B), dtype=bool)
        for t in range(T):
            delta, logp, _ = policy.act(obs, rng_act)
            value = policy.value_of(obs)
            nxt, reward, done, timeout, final_obs = env.step(delta)
            obs_buf[t], act_buf[t], logp_buf[t] = obs, delta, logp
            rew_buf[t], val_buf[t] = reward, value
            boot_buf[t] = policy.value_of(final_obs)
            done_buf[t], tout_buf[t] = done, timeout
            obs = nxt
        if not np.isfinite(rew_buf).all():
            raise TrainingDivergenceError("non-finite rewards in rollout")

        adv, ret = gae_advantages(rew_buf, val_buf, boot_buf, done_buf, tout_buf,
                                  cfg.discount, cfg.gae_lambda)
        batch = {
            "obs": obs_buf.reshape(T * B, -1),
            "actions": act_buf.reshape(T * B, -1),
            "log_probs": logp_buf.reshape(T * B),
            "advantages": adv.reshape(T * B),
            "returns": ret.reshape(T * B),
        }
        if it == 0:
            policy_adam = AdamState(lr=cfg.lr)
            value_adam = AdamState(lr=cfg.lr)
        stats = ppo_update(policy, batch, cfg, policy_adam, value_adam, rng_update)
        stats["iteration"] = it
        stats["mean_reward"] = float(rew_buf.mean())
        if log is not None:
            log.append(stats)
    return policy


def _rollout_attempts(model: SimModel, policy: TrackerPolicy, ref: np.ndarray,
                      retries: int, seed: int
                      ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Run ``retries`` closed-loop attempts in lockstep from the first frame.

    Attempt 0 follows the policy mean; the rest add per-attempt Gaussian
    exploration from independent substreams, so attempt i's trajectory does
    not depend on how many attempts run beside it.

    Returns (states (R, L, 2nq), actions (R, L-1, J), blown (R,)).
    """
    L = len(ref)
    R = retries
    rngs = [substream(seed, "track", str(i)) for i in range(R)]
    std = np.exp(policy.head.log_std)
    states = np.empty((R, L, ref.shape[1]))
    actions = np.empty((R, L - 1, model.n_dofs))
    states[:, 0] = ref[0]
    blown = np.zeros(R, dtype=bool)

    cur = np.repeat(ref[0][None, :], R, axis=0)
    for t in range(L - 1):
        feats = tracking_features(model, cur, np.repeat(ref[t + 1][None, :], R, axis=0))
        delta, _, _ = policy.act(feats, deterministic=True)
        for i in range(1, R):
            delta[i] += std * rngs[i].standard_normal(model.n_dofs)
        targets = np.clip(ref[t + 1][3 : model.nq] + delta,
                          model.angle_min, model.angle_max)
        try:
            cur, _, _ = step_batch(model, cur, targets)
        except SimulationBlowupError:
            nxt = cur.copy()
            for i in range(R):
                try:
                    res, _, _ = step_batch(model, cur[i : i + 1], targets[i : i + 1])
                    nxt[i] = res[0]
                except SimulationBlowupError:
                    blown[i] = True
            cur = nxt
        actions[:, t] = targets
        states[:, t + 1] = cur
    return states, actions, blown


def track_sequence(model: SimModel, policy: TrackerPolicy, ref: MotionSequence,
                   retries: int = 10, seed: int = 0) -> TrackResult:
    """Track one reference with up to ``retries`` attempts; keep the best.

    Success needs mean keypoint error < 0.10 m and max root drift < 0.5 m
    (stand-in for the source data's manual review). The best attempt is the
    one with the lowest mean error; it is returned only on success.
    """
    frames = ref.frames
    states, actions, blown = _rollout_attempts(model, policy, frames, retries, seed)
    R, L = states.shape[0], len(frames)

    errors = np.empty(R)
    drifts = np.empty(R)
    for i in range(R):
        if blown[i]:
            errors[i] = np.inf
            drifts[i] = np.inf
            continue
        err = mean_keypoint_error(model, frames, states[i])
        errors[i] = float(err.mean())
        drifts[i] = float(np.linalg.norm(states[i][:, 0:2] - frames[:, 0:2],
                                         axis=1).max())
    best = int(np.argmin(errors))
    success = errors[best] < SUCCESS_KP_ERROR and drifts[best] < SUCCESS_ROOT_DRIFT
    traj = None
    if success:
        traj = Trajectory(
            states[best], actions[best], fps=ref.fps, family=ref.family,
            meta={
                "attempt_errors": [float(e) for e in errors],
                "attempt_drifts": [float(d) for d in drifts],
                "chosen": best,
                "mean_error": float(errors[best]),
                "max_drift": float(drifts[best]),
            },
        )
    return TrackResult(traj, errors, drifts, best)


def replay_trajectory(model: SimModel, traj: Trajectory) -> np.ndarray:
    """Open-loop replay of recorded actions from the recorded initial state."""
    out = np.empty_like(traj.states)
    out[0] = traj.states[0]
    cur = traj.states[0][None, :].copy()
    for t, a in enumerate(traj.actions):
        cur, _, _ = step_batch(model, cur, a[None, :])
        out[t + 1] = cur[0]
    return out


def curate(model: SimModel, policy: TrackerPolicy, corpus: list[InteractionPair],
           retries: int = 10, seed: int = 0
           ) -> tuple[list[Demonstration], dict]:
    """Track every character of every pair; keep pairs where both succeed.

    The report carries per-family and overall rates plus the raw per-attempt
    error logs, so the rates can be recounted from primary data.
    """
    demos: list[Demonstration] = []
    fam_attempted: dict[str, int] = {}
    fam_succeeded: dict[str, int] = {}
    attempts: dict[str, dict] = {}
    for i, pair in enumerate(corpus):
        res_a = track_sequence(model, policy, pair.actor, retries,
                               seed=_role_seed(seed, i, "actor"))
        res_b = track_sequence(model, policy, pair.reactor, retries,
                               seed=_role_seed(seed, i, "reactor"))
        fam = FAMILIES[pair.family]
        fam_attempted[fam] = fam_attempted.get(fam, 0) + 1
        for role, res in (("actor", res_a), ("reactor", res_b)):
            attempts[f"{i}.{role}"] = {
                "family": fam,
                "errors": [float(e) for e in res.attempt_errors],
                "drifts": [float(d) for d in res.attempt_drifts],
                "success": bool(res.success),
            }
        if res_a.success and res_b.success:
            fam_succeeded[fam] = fam_succeeded.get(fam, 0) + 1
            demos.append(Demonstration(pair=pair,
                                       actor_track=res_a.trajectory,
                                       reactor_track=res_b.trajectory))
    report = {
        "pairs_attempted": len(corpus),
        "pairs_succeeded": len(demos),
        "success_rate": len(demos) / len(corpus) if corpus else 0.0,
        "criteria": {"mean_keypoint_error": SUCCESS_KP_ERROR,
                     "max_root_drift": SUCCESS_ROOT_DRIFT,
                     "note": "thresholded stand-in for manual review"},
        "families": {
            fam: {
                "attempted": fam_attempted[fam],
                "succeeded": fam_succeeded.get(fam, 0),
                "success_rate": fam_succeeded.get(fam, 0) / fam_attempted[fam],
            }
            for fam in sorted(fam_attempted)
        },
        "attempts": attempts,
    }
    if not demos:
        raise StageError("curation produced no demonstrations; retrain the tracker")
    return demos, report


def _role_seed(seed: int, index: int, role: str) -> int:
    # distinct deterministic seed per (pair, character)
    return substream_seed(seed, "curate", str(index), role)
