"""Planar articulated rigid-body simulation."""

from reaction_forge.sim.dynamics import Obstacles, pd_torque, step, step_batch
from reaction_forge.sim.geometry import capsule_segments, min_distance, penetration
from reaction_forge.sim.kinematics import (
    feature_dim,
    keypoints,
    keypoints_batch,
    state_features_batch,
    to_reactor_frame,
)
from reaction_forge.sim.spec import (
    CharacterSpec,
    CharacterState,
    ContactReport,
    JointSpec,
    LinkSpec,
    SimModel,
    humanoid_spec,
    load_character,
    save_character,
    spec_from_dict,
    spec_to_dict,
)

__all__ = [
    "CharacterSpec",
    "CharacterState",
    "ContactReport",
    "JointSpec",
    "LinkSpec",
    "Obstacles",
    "SimModel",
    "capsule_segments",
    "feature_dim",
    "humanoid_spec",
    "keypoints",
    "keypoints_batch",
    "load_character",
    "min_distance",
    "pd_torque",
    "penetration",
    "save_character",
    "spec_from_dict",
    "spec_to_dict",
    "state_features_batch",
    "step",
    "step_batch",
    "to_reactor_frame",
]
