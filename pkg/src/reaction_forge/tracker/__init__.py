from reaction_forge.tracker.env import VecTrackingEnv, obs_dim, tracking_features
from reaction_forge.tracker.pipeline import (
    SUCCESS_KP_ERROR,
    SUCCESS_ROOT_DRIFT,
    TrackResult,
    TrackerTrainConfig,
    curate,
    replay_trajectory,
    track_sequence,
    train_tracker,
)
from reaction_forge.tracker.ppo import (
    PpoConfig,
    TrackerPolicy,
    gae_advantages,
    init_tracker_policy,
    ppo_update,
)
from reaction_forge.tracker.reward import (
    imitation_reward,
    mean_keypoint_error,
    reward_from_keypoints,
)

__all__ = [
    "PpoConfig",
    "SUCCESS_KP_ERROR",
    "SUCCESS_ROOT_DRIFT",
    "TrackResult",
    "TrackerPolicy",
    "TrackerTrainConfig",
    "VecTrackingEnv",
    "curate",
    "gae_advantages",
    "imitation_reward",
    "init_tracker_policy",
    "mean_keypoint_error",
    "obs_dim",
    "ppo_update",
    "replay_trajectory",
    "reward_from_keypoints",
    "track_sequence",
    "tracking_features",
    "train_tracker",
]
