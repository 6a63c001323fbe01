"""Capsule overlap queries between two characters.

Depth and minimum separation come from segment-segment distances (cheap,
exact). Overlap *area* only exists when capsules actually intersect, so the
polygon work (shapely buffered segments) runs only behind a positive-depth
gate; a non-penetrating pair costs a handful of vector ops.
"""

from __future__ import annotations

import numpy as np
from shapely.geometry import LineString, Point

from reaction_forge.sim.dynamics import _closest_segment_points
from reaction_forge.sim.kinematics import fk_positions
from reaction_forge.sim.spec import CharacterSpec, CharacterState, ContactReport, SimModel

QUAD_SEGS = 64  # circle-arc resolution of the buffered capsule polygons


def capsule_segments(spec: CharacterSpec | SimModel, state: CharacterState):
    """(L, 2, 2) axis segments and (L,) radii in world frame."""
    model = spec if isinstance(spec, SimModel) else SimModel(spec)
    fk = fk_positions(model, state.as_vector()[None, : model.nq])
    seg = np.stack([fk.origin[0], fk.tip[0]], axis=1)
    return seg, model.radius.copy()


def pairwise_depths(seg_a: np.ndarray, rad_a: np.ndarray,
                    seg_b: np.ndarray, rad_b: np.ndarray) -> np.ndarray:
    """(La, Lb) signed penetration depths; positive means overlap."""
    a0 = seg_a[:, None, 0, :]
    a1 = seg_a[:, None, 1, :]
    b0 = seg_b[None, :, 0, :]
    b1 = seg_b[None, :, 1, :]
    p1, p2 = _closest_segment_points(a0, a1, b0, b1)
    dist = np.sqrt(((p1 - p2) ** 2).sum(-1))
    return rad_a[:, None] + rad_b[None, :] - dist


def min_distance(spec_a, state_a: CharacterState, spec_b, state_b: CharacterState) -> float:
    """Smallest surface-to-surface distance between the two characters.

    Negative when they interpenetrate.
    """
    seg_a, rad_a = capsule_segments(spec_a, state_a)
    seg_b, rad_b = capsule_segments(spec_b, state_b)
    return float(-pairwise_depths(seg_a, rad_a, seg_b, rad_b).max())


def _capsule_polygon(seg: np.ndarray, radius: float):
    p0, p1 = seg[0], seg[1]
    if np.allclose(p0, p1):
        return Point(p0).buffer(radius, quad_segs=QUAD_SEGS)
    return LineString([p0, p1]).buffer(radius, quad_segs=QUAD_SEGS)


def penetration(spec_a, state_a: CharacterState,
                spec_b, state_b: CharacterState) -> tuple[float, float]:
    """(overlap area in m^2, max penetration depth in m) between two characters.

    Exact zeros when the capsule hulls do not touch; area is computed from
    buffered polygons only for the pairs whose depth clears the contact
    tolerance.
    """
    seg_a, rad_a = capsule_segments(spec_a, state_a)
    seg_b, rad_b = capsule_segments(spec_b, state_b)
    depths = pairwise_depths(seg_a, rad_a, seg_b, rad_b)
    max_depth = float(depths.max())
    if max_depth <= ContactReport.TOLERANCE:
        return 0.0, max(max_depth, 0.0)

    area = 0.0
    pairs = np.argwhere(depths > ContactReport.TOLERANCE)
    polys_a: dict[int, object] = {}
    polys_b: dict[int, object] = {}
    for i, j in pairs:
        if i not in polys_a:
            polys_a[i] = _capsule_polygon(seg_a[i], float(rad_a[i]))
        if j not in polys_b:
            polys_b[j] = _capsule_polygon(seg_b[j], float(rad_b[j]))
        area += polys_a[i].intersection(polys_b[j]).area
    return area, max_depth
