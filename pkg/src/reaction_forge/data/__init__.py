"""Synthetic interaction corpus, motion I/O, noise, and splitting."""

from reaction_forge.data.generate import FAMILIES, GenConfig, family_counts, synth_interactions
from reaction_forge.data.motion_io import load_demo, load_motion, save_demo, save_motion
from reaction_forge.data.noise import add_noise
from reaction_forge.data.split import split
from reaction_forge.data.types import (
    Demonstration,
    InteractionPair,
    MotionSequence,
    Trajectory,
    quantize_f32,
)

__all__ = [
    "Demonstration",
    "FAMILIES",
    "GenConfig",
    "InteractionPair",
    "MotionSequence",
    "Trajectory",
    "add_noise",
    "family_counts",
    "load_demo",
    "load_motion",
    "quantize_f32",
    "save_demo",
    "save_motion",
    "split",
    "synth_interactions",
]
