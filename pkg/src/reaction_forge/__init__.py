"""Physically grounded reaction synthesis on a planar articulated character.

The package covers the full loop: a scripted two-character interaction corpus,
a PPO tracking policy that turns kinematic references into physically valid
demonstrations, state/action VAEs, a contrastive forward dynamics model, an
imitation policy trained against it, generalist-specialist refinement, and a
metric suite (FVD, diversity, ground distance, interpenetration, throughput).
"""

__version__ = "0.1.0"
