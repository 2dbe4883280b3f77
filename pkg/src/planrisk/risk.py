"""Trajectory risk labels: average displacement error and footprint collision."""

from __future__ import annotations

import math

import numpy as np

from .core import EgoStatus, ObstacleBox, as_trajectory
from .errors import ArgumentError

_MIN_STEP = 1e-6


def ade(pred, gt) -> float:
    """Mean per-step Euclidean distance between two trajectories."""
    pred, gt = as_trajectory(pred), as_trajectory(gt)
    if pred.shape != gt.shape:
        raise ArgumentError(f"trajectory lengths differ: {len(pred)} vs {len(gt)}")
    return float(np.linalg.norm(pred - gt, axis=1).mean())


def rectangle_corners(cx, cy, yaw, length, width) -> np.ndarray:
    """Corners of an oriented rectangle, counter-clockwise, shape (4, 2)."""
    c, s = math.cos(yaw), math.sin(yaw)
    hl, hw = 0.5 * length, 0.5 * width
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([cx, cy])


def _axes(corners):
    edges = np.roll(corners, -1, axis=0) - corners
    normals = np.stack([-edges[:, 1], edges[:, 0]], axis=1)
    return normals[:2] / np.linalg.norm(normals[:2], axis=1, keepdims=True)


def separation(a: np.ndarray, b: np.ndarray) -> float:
    """Signed overlap depth of two convex rectangles along their edge normals.

    Negative means a separating axis exists; zero means the rectangles touch.
    Only two normals per rectangle are needed since opposite edges are parallel.
    """
    depth = math.inf
    for axis in np.vstack([_axes(a), _axes(b)]):
        pa, pb = a @ axis, b @ axis
        depth = min(depth, min(pa.max(), pb.max()) - max(pa.min(), pb.min()))
    return depth


def rectangles_intersect(a: np.ndarray, b: np.ndarray) -> bool:
    """Separating-axis test; touching boundaries count as intersecting."""
    return separation(a, b) >= 0.0


def ego_headings(pred) -> np.ndarray:
    """Heading at each waypoint from the displacement since the previous one.

    The first displacement starts at the ego origin. Steps shorter than 1e-6 m
    keep the previous heading; the initial heading is +x.
    """
    pred = as_trajectory(pred)
    prev = np.zeros(2)
    heading = 0.0
    out = np.empty(len(pred))
    for t, p in enumerate(pred):
        d = p - prev
        if math.hypot(d[0], d[1]) >= _MIN_STEP:
            heading = math.atan2(d[1], d[0])
        out[t] = heading
        prev = p
    return out


def ego_footprints(pred, ego: EgoStatus):
    pred = as_trajectory(pred)
    return [
        rectangle_corners(p[0], p[1], yaw, ego.length, ego.width)
        for p, yaw in zip(pred, ego_headings(pred))
    ]


def collision_any(pred, ego: EgoStatus, boxes) -> bool:
    """True when the ego footprint at some step meets an obstacle box of that step."""
    pred = as_trajectory(pred)
    if len(boxes) != len(pred):
        raise ArgumentError(f"{len(boxes)} obstacle steps for a horizon of {len(pred)}")
    for fp, step in zip(ego_footprints(pred, ego), boxes):
        for b in step:
            if isinstance(b, ObstacleBox):
                b = rectangle_corners(b.cx, b.cy, b.yaw, b.length, b.width)
            if rectangles_intersect(fp, np.asarray(b, dtype=np.float64)):
                return True
    return False
