"""Tracking policy tests: reward oracles, GAE, PPO invariants, curation."""

import numpy as np
import pytest

from reaction_forge.data import GenConfig, MotionSequence, synth_interactions
from reaction_forge.errors import ConfigError, StageError, TrainingDivergenceError
from reaction_forge.nn import AdamState
from reaction_forge.rng import substream
from reaction_forge.sim import SimModel, humanoid_spec
from reaction_forge.sim.dynamics import step_batch
from reaction_forge.tracker import (
    PpoConfig,
    TrackerPolicy,
    TrackerTrainConfig,
    VecTrackingEnv,
    curate,
    gae_advantages,
    imitation_reward,
    init_tracker_policy,
    mean_keypoint_error,
    obs_dim,
    ppo_update,
    replay_trajectory,
    reward_from_keypoints,
    track_sequence,
    tracking_features,
    train_tracker,
)


@pytest.fixture(scope="module")
def model():
    return SimModel(humanoid_spec())


@pytest.fixture(scope="module")
def corpus():
    return synth_interactions(GenConfig(n_pairs=4), seed=11)


@pytest.fixture(scope="module")
def policy(model):
    # freshly initialized: the near-zero residual head makes this plain
    # reference following, which is already a competent tracker
    return init_tracker_policy(obs_dim(model), model.n_dofs, substream(0, "tp"))


@pytest.fixture(scope="module")
def rest_reference(model, corpus):
    # a true rest pose: re-target the PD to the current joints and settle,
    # repeatedly, until holding the pose needs no spring stretch at all
    # (the character ends up supported by the ground, not by ghost torque)
    state = corpus[0].actor.frames[0][None, :].copy()
    for _ in range(4):
        q = state[:, 3:11].copy()
        for _ in range(400):
            state, _, _ = step_batch(model, state, q)
    frames = np.repeat(state, 70, axis=0)
    return MotionSequence(frames, fps=30.0, family=0)


# -- reward ---------------------------------------------------------------------


def test_reward_perfect_match_is_one():
    rng = np.random.default_rng(0)
    p = rng.normal(size=(5, 9, 2))
    v = rng.normal(size=(5, 9, 2))
    r = reward_from_keypoints(p, v, p.copy(), v.copy())
    np.testing.assert_allclose(r, 1.0, rtol=0, atol=1e-15)


def test_reward_velocity_only_closed_form():
    rng = np.random.default_rng(1)
    p = rng.normal(size=(1, 9, 2))
    v = np.zeros((1, 9, 2))
    v_sim = v.copy()
    v_sim[0, 2, 0] = 1.5
    v_sim[0, 4, 1] = -0.5
    e = 1.5**2 + 0.5**2
    r = reward_from_keypoints(p, v, p.copy(), v_sim)
    np.testing.assert_allclose(r[0], 0.7 + 0.3 * np.exp(-0.1 * e), atol=1e-12)


def test_reward_position_only_closed_form():
    p_ref = np.zeros((1, 9, 2))
    p_sim = np.zeros((1, 9, 2))
    p_sim[0, 0, 0] = 0.2
    v = np.zeros((1, 9, 2))
    r = reward_from_keypoints(p_ref, v, p_sim, v)
    np.testing.assert_allclose(r[0], 0.7 * np.exp(-5 * 0.04) + 0.3, atol=1e-12)


def test_reward_vanishes_with_error():
    p = np.zeros((1, 9, 2))
    v = np.zeros((1, 9, 2))
    r = reward_from_keypoints(p + 100.0, v + 100.0, p, v)
    assert 0.0 <= r[0] < 1e-12


def test_reward_bounded_unit_interval(model):
    rng = np.random.default_rng(2)
    a = rng.normal(scale=2.0, size=(64, 22))
    b = rng.normal(scale=2.0, size=(64, 22))
    r = imitation_reward(model, a, b)
    assert ((r > 0) & (r <= 1.0)).all()


# -- GAE and PPO ------------------------------------------------------------------


def test_ppo_config_validation():
    with pytest.raises(ConfigError):
        PpoConfig(discount=0.0)
    with pytest.raises(ConfigError):
        PpoConfig(discount=1.2)
    with pytest.raises(ConfigError):
        PpoConfig(clip_eps=0.0)
    with pytest.raises(ConfigError):
        PpoConfig(action_std=-0.1)
    assert PpoConfig(discount=1.0).discount == 1.0


def test_gae_hand_case_timeout_bootstraps():
    gamma, lam = 0.9, 0.8
    rewards = np.array([[1.0], [2.0]])
    values = np.array([[0.5], [0.4]])
    boot = np.array([[0.7], [0.6]])
    done = np.array([[False], [True]])
    timeout = np.array([[False], [True]])
    adv, ret = gae_advantages(rewards, values, boot, done, timeout, gamma, lam)
    d1 = 2.0 + gamma * 0.6 - 0.4
    d0 = 1.0 + gamma * 0.7 - 0.5
    np.testing.assert_allclose(adv[1, 0], d1, atol=1e-12)
    np.testing.assert_allclose(adv[0, 0], d0 + gamma * lam * d1, atol=1e-12)
    np.testing.assert_allclose(ret, adv + values, atol=1e-12)


def test_gae_hand_case_failure_does_not_bootstrap():
    gamma, lam = 0.9, 0.8
    rewards = np.array([[1.0], [2.0]])
    values = np.array([[0.5], [0.4]])
    boot = np.array([[0.7], [0.6]])
    done = np.array([[False], [True]])
    timeout = np.array([[False], [False]])
    adv, _ = gae_advantages(rewards, values, boot, done, timeout, gamma, lam)
    d1 = 2.0 - 0.4
    np.testing.assert_allclose(adv[1, 0], d1, atol=1e-12)


def test_gae_resets_across_episode_boundary():
    gamma, lam = 0.99, 0.95
    rewards = np.array([[1.0], [1.0], [1.0]])
    values = np.zeros((3, 1))
    boot = np.zeros((3, 1))
    done = np.array([[False], [True], [False]])
    timeout = np.zeros((3, 1), dtype=bool)
    adv, _ = gae_advantages(rewards, values, boot, done, timeout, gamma, lam)
    # t=2 belongs to a fresh episode; t=1's done cuts the recursion
    np.testing.assert_allclose(adv[1, 0], 1.0, atol=1e-12)
    np.testing.assert_allclose(adv[0, 0], 1.0 + gamma * lam * 1.0, atol=1e-12)
    np.testing.assert_allclose(adv[2, 0], 1.0, atol=1e-12)


def _one_sample_batch(policy, obs_dim_, act_dim, ratio, adv):
    rng = np.random.default_rng(3)
    obs = rng.normal(size=(1, obs_dim_))
    from reaction_forge.nn import gaussian_log_prob, mlp_forward
    mu = mlp_forward(policy.head.mean, obs)
    action = mu + 0.01
    logp_cur = gaussian_log_prob(mu, policy.head.log_std, action)
    return {
        "obs": obs,
        "actions": action,
        "log_probs": logp_cur - np.log(ratio),
        "advantages": np.array([adv]),
        "returns": np.array([0.0]),
    }


@pytest.mark.parametrize("ratio,adv,expected", [
    (1.5, 2.0, -2.4),    # clipped from above: min(3.0, 1.2*2)
    (1.5, -1.0, 1.5),    # negative advantage keeps the unclipped branch
    (0.5, 1.0, -0.5),    # below band, positive: unclipped is smaller
])
def test_ppo_single_transition_surrogate_oracle(model, ratio, adv, expected):
    rng = substream(4, "oracle")
    pol = init_tracker_policy(12, 3, rng)
    batch = _one_sample_batch(pol, 12, 3, ratio, adv)
    cfg = PpoConfig(epochs=1, minibatch=8, normalize_advantages=False)
    stats = ppo_update(pol, batch, cfg, AdamState(lr=0.0), AdamState(lr=0.0),
                       substream(5, "mb"))
    np.testing.assert_allclose(stats["policy_loss"], expected, atol=1e-9)


def test_ppo_zero_advantage_is_noop_on_policy():
    rng = substream(6, "zero")
    pol = init_tracker_policy(10, 4, rng)
    before = {k: v.copy() for k, v in pol.head.mean.tensors().items()}
    obs = np.random.default_rng(7).normal(size=(32, 10))
    from reaction_forge.nn import gaussian_log_prob, mlp_forward
    mu = mlp_forward(pol.head.mean, obs)
    batch = {
        "obs": obs,
        "actions": mu + 0.02,
        "log_probs": gaussian_log_prob(mu, pol.head.log_std, mu + 0.02),
        "advantages": np.zeros(32),
        "returns": np.random.default_rng(8).normal(size=32),
    }
    ppo_update(pol, batch, PpoConfig(epochs=3, minibatch=8),
               AdamState(), AdamState(), substream(9, "mb"))
    for k, v in pol.head.mean.tensors().items():
        assert np.array_equal(v, before[k]), f"policy tensor {k} moved"


def test_ppo_rejects_nonfinite_advantages():
    pol = init_tracker_policy(6, 2, substream(10, "rej"))
    batch = {
        "obs": np.zeros((4, 6)),
        "actions": np.zeros((4, 2)),
        "log_probs": np.zeros(4),
        "advantages": np.array([1.0, np.nan, 0.0, 2.0]),
        "returns": np.zeros(4),
    }
    with pytest.raises(TrainingDivergenceError):
        ppo_update(pol, batch, PpoConfig(), AdamState(), AdamState(),
                   substream(11, "mb"))


def test_policy_tensor_roundtrip(model, policy):
    tensors = policy.tensors()
    back = TrackerPolicy.from_tensors(tensors)
    obs = np.random.default_rng(12).normal(size=(5, obs_dim(model)))
    a1, lp1, _ = policy.act(obs, deterministic=True)
    a2, lp2, _ = back.act(obs, deterministic=True)
    assert np.array_equal(a1, a2) and np.array_equal(lp1, lp2)
    assert np.array_equal(back.value_of(obs), policy.value_of(obs))


# -- environment ------------------------------------------------------------------


def test_env_reference_state_init(model, corpus):
    env = VecTrackingEnv(model, [corpus[0].actor, corpus[0].reactor],
                         substream(13, "env"), batch=6)
    for i in range(env.B):
        ref = env.frames[env.seq[i]][env.t[i]]
        assert np.array_equal(env.states[i], ref)


def test_env_obs_shape_and_translation_invariance(model, corpus):
    env = VecTrackingEnv(model, [corpus[0].actor], substream(14, "env"), batch=3)
    obs = env.observe()
    assert obs.shape == (3, obs_dim(model))
    states = env.states.copy()
    ref = env._ref_rows(1)
    shifted = states.copy()
    shifted[:, 0] += 3.7
    ref_shifted = ref.copy()
    ref_shifted[:, 0] += 3.7
    f0 = tracking_features(model, states, ref)
    f1 = tracking_features(model, shifted, ref_shifted)
    np.testing.assert_allclose(f0, f1, atol=1e-9)


def test_env_keeps_height_and_heading_visible(model, corpus):
    # same pose at two different heights / lean angles must look different,
    # or the policy cannot know where gravity points
    state = corpus[0].actor.frames[10][None, :].copy()
    ref = corpus[0].actor.frames[11][None, :]
    lifted = state.copy()
    lifted[:, 1] += 0.3
    leaned = state.copy()
    leaned[:, 2] += 0.4
    base = tracking_features(model, state, ref)
    assert not np.allclose(tracking_features(model, lifted, ref), base)
    assert not np.allclose(tracking_features(model, leaned, ref), base)


def test_env_step_rewards_and_termination(model, corpus):
    env = VecTrackingEnv(model, [corpus[0].actor], substream(15, "env"), batch=4)
    obs, reward, done, timeout, final_obs = env.step(np.zeros((4, model.n_dofs)))
    assert reward.shape == (4,) and ((reward > 0) & (reward <= 1)).all()
    assert reward.min() > 0.5
    assert final_obs.shape == obs.shape

    strict = VecTrackingEnv(model, [corpus[0].actor], substream(16, "env"),
                            batch=4, terminate_error=1e-12)
    _, _, done, timeout, _ = strict.step(np.zeros((4, model.n_dofs)))
    assert done.all() and not timeout.any()


def test_env_timeout_at_reference_end(model, rest_reference):
    env = VecTrackingEnv(model, [rest_reference], substream(17, "env"), batch=2)
    env.t[:] = len(rest_reference.frames) - 2
    _, _, done, timeout, _ = env.step(np.zeros((2, model.n_dofs)))
    assert done.all() and timeout.all()


# -- tracking and curation ---------------------------------------------------------


def test_track_stationary_reference_succeeds(model, policy, rest_reference):
    res = track_sequence(model, policy, rest_reference, retries=3, seed=21)
    assert res.success
    assert res.attempt_errors[0] < 0.02   # the first, noise-free attempt suffices
    assert res.trajectory.meta["mean_error"] < 0.02
    assert len(res.trajectory.states) == len(rest_reference.frames)


def test_track_impossible_reference_fails(model, policy):
    frames = np.tile(np.asarray([0.0, 0.91, 0.0] + [0.0] * 8 + [0.0] * 11), (70, 1))
    frames[1::2, 0] += 6.0   # root teleports 6 m back and forth every frame
    ref = MotionSequence(frames, fps=30.0, family=0)
    res = track_sequence(model, policy, ref, retries=3, seed=22)
    assert not res.success
    assert res.trajectory is None
    assert (res.attempt_errors > 0.10).all()


def test_track_best_attempt_has_min_error(model, policy, corpus):
    res = track_sequence(model, policy, corpus[1].actor, retries=5, seed=23)
    assert res.attempt_errors[res.chosen] == res.attempt_errors.min()


def test_track_attempts_stable_under_retry_count(model, policy, corpus):
    few = track_sequence(model, policy, corpus[1].reactor, retries=3, seed=24)
    many = track_sequence(model, policy, corpus[1].reactor, retries=6, seed=24)
    np.testing.assert_array_equal(few.attempt_errors, many.attempt_errors[:3])
    assert many.attempt_errors.min() <= few.attempt_errors.min()
    assert few.success <= many.success


def test_tracked_trajectory_replays_exactly(model, policy, corpus):
    res = track_sequence(model, policy, corpus[2].actor, retries=2, seed=25)
    assert res.success
    replayed = replay_trajectory(model, res.trajectory)
    err = np.abs(replayed - res.trajectory.states).max()
    assert err <= 1e-6
    limits_ok = (res.trajectory.actions >= model.angle_min - 1e-12).all() and \
        (res.trajectory.actions <= model.angle_max + 1e-12).all()
    assert limits_ok


def test_curate_reports_match_recount(model, policy, corpus):
    demos, report = curate(model, policy, corpus[:2], retries=2, seed=26)
    assert 0 < len(demos) <= 2
    assert report["pairs_succeeded"] == len(demos)
    # recount success from the raw attempt logs
    by_pair = {}
    for key, log in report["attempts"].items():
        idx, role = key.split(".")
        ok = (min(log["errors"]) < 0.10 and
              log["drifts"][int(np.argmin(log["errors"]))] < 0.5)
        assert ok == log["success"]
        by_pair.setdefault(int(idx), []).append(log["success"])
    recount = sum(1 for flags in by_pair.values() if all(flags))
    assert recount == report["pairs_succeeded"]
    rate = report["pairs_succeeded"] / report["pairs_attempted"]
    assert report["success_rate"] == rate


def test_curate_excludes_pair_with_one_failed_character(model, policy, corpus):
    from reaction_forge.data import InteractionPair
    good = corpus[0]
    frames = good.reactor.frames.copy()
    frames[1::2, 0] += 6.0
    broken = InteractionPair(actor=good.actor,
                             reactor=MotionSequence(frames, fps=30.0,
                                                    family=good.reactor.family))
    demos, report = curate(model, policy, [good, broken], retries=2, seed=27)
    assert len(demos) == 1
    assert demos[0].pair is good
    assert report["pairs_succeeded"] == 1


def test_curate_empty_result_is_stage_error(model, policy):
    frames = np.tile(np.asarray([0.0, 0.91, 0.0] + [0.0] * 19), (60, 1))
    frames[1::2, 0] += 6.0
    from reaction_forge.data import InteractionPair
    bad = InteractionPair(actor=MotionSequence(frames, fps=30.0, family=0),
                          reactor=MotionSequence(frames + 0.5, fps=30.0, family=0))
    with pytest.raises(StageError):
        curate(model, policy, [bad], retries=2, seed=28)


def test_train_tracker_runs_and_logs(model, corpus):
    log = []
    cfg = TrackerTrainConfig(iterations=2, batch=4,
                             ppo=PpoConfig(horizon=24, minibatch=48))
    trained = train_tracker(model, corpus[:2], cfg, seed=29, log=log)
    assert len(log) == 2
    for s in log:
        assert np.isfinite(s["mean_reward"]) and np.isfinite(s["kl"])
    assert log[-1]["mean_reward"] > 0.5
    res = track_sequence(model, trained, corpus[0].actor, retries=2, seed=30)
    assert np.isfinite(res.attempt_errors).all()
