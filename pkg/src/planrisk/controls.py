"""Scene-composition controls computed from object annotations.

Matched controls mirror the three saliency statistics on projected object
footprints; extended controls summarise ego motion, clutter and kinematics
in the ego ground plane (x forward, y left).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import CameraCalibration, ObjectAnnotation, SampleRecord
from .stats import gini, weighted_spread

VEHICLE = {"vehicle"}
BARRIER_CONE = {"barrier", "traffic_cone"}
DYNAMIC = {"vehicle", "pedestrian", "bicycle", "motorcycle"}

MATCHED_NAMES = ("n_obj", "d_obj", "gini_obj")
EXTENDED_NAMES = (
    "ego_speed", "barrier_cone_count", "nearfield_count", "side_object_count", "mean_radar_pts",
    "nearest_veh_speed", "mean_speed_20m", "approach_count", "approach_veh_count", "dyn_ratio",
)


@dataclass(frozen=True)
class Footprint:
    """Axis-aligned image box; u is the column axis, v the row axis."""

    u_min: float
    v_min: float
    u_max: float
    v_max: float

    @property
    def center(self):
        return (0.5 * (self.u_min + self.u_max), 0.5 * (self.v_min + self.v_max))


def box_corners(a: ObjectAnnotation) -> np.ndarray:
    """Eight (x, y, z) corners of the annotation box in the ego frame."""
    l, w, h = a.size
    sx, sy, sz = np.meshgrid([-0.5, 0.5], [-0.5, 0.5], [-0.5, 0.5], indexing="ij")
    local = np.stack([sx.ravel() * l, sy.ravel() * w, sz.ravel() * h], axis=1)
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    return local @ rot.T + np.asarray(a.center, dtype=np.float64)


def project_box(a: ObjectAnnotation, cal: CameraCalibration, dims) -> Footprint | None:
    """Footprint of ``a`` in one camera, or None when it is not visible.

    Corners at non-positive camera depth are dropped; the footprint is the
    unclipped bounding box of the rest and counts as visible when it overlaps
    the [0, W) x [0, H) image rectangle with positive area.
    """
    h_img, w_img = dims
    corners = box_corners(a)
    cam = (cal.extrinsics[:3, :3] @ corners.T + cal.extrinsics[:3, 3:4]).T
    cam = cam[cam[:, 2] > 0]
    if len(cam) == 0:
        return None
    uvw = (cal.intrinsics @ cam.T).T
    u, v = uvw[:, 0] / uvw[:, 2], uvw[:, 1] / uvw[:, 2]
    fp = Footprint(float(u.min()), float(v.min()), float(u.max()), float(v.max()))
    if fp.u_max > 0 and fp.u_min < w_img and fp.v_max > 0 and fp.v_min < h_img:
        return fp
    return None


@dataclass(frozen=True)
class MatchedControls:
    n_obj: int
    d_obj: float | None
    gini_obj: float | None
    n_per_camera: tuple


def visible_footprints(s: SampleRecord, dims):
    """Per camera, the list of (object index, footprint) pairs that are visible."""
    out = []
    for cal in s.calibrations:
        cam = []
        for k, a in enumerate(s.annotations):
            fp = project_box(a, cal, dims)
            if fp is not None:
                cam.append((k, fp))
        out.append(cam)
    return out


def matched_controls(s: SampleRecord, dims) -> MatchedControls:
    per_cam = visible_footprints(s, dims)
    n_c = tuple(len(cam) for cam in per_cam)
    seen = {k for cam in per_cam for k, _ in cam}
    if sum(n_c) == 0:
        return MatchedControls(0, None, None, n_c)
    # (row, col) ordering to match the saliency spread routine
    points = [[(fp.center[1], fp.center[0]) for _, fp in cam] for cam in per_cam]
    weights = [np.ones(len(cam)) for cam in per_cam]
    d_obj = weighted_spread(
        [np.asarray(p, dtype=np.float64).reshape(-1, 2) for p in points], weights
    )
    return MatchedControls(len(seen), d_obj, gini(n_c), n_c)


@dataclass(frozen=True)
class ExtendedControls:
    ego_speed: float
    barrier_cone_count: int
    nearfield_count: int
    side_object_count: int
    mean_radar_pts: float | None
    nearest_veh_speed: float | None
    mean_speed_20m: float | None
    approach_count: int
    approach_veh_count: int
    dyn_ratio: float | None

    def as_dict(self):
        return asdict(self)


def _approaching(a: ObjectAnnotation, v_e) -> bool:
    px, py = a.center[0], a.center[1]
    rvx, rvy = a.velocity[0] - v_e[0], a.velocity[1] - v_e[1]
    return px * rvx + py * rvy < 0


def extended_controls(s: SampleRecord) -> ExtendedControls:
    objs = s.annotations
    v_e = s.ego.velocity
    dist = [math.hypot(a.center[0], a.center[1]) for a in objs]
    speed = [math.hypot(*a.velocity) for a in objs]

    radar = [a.radar_points for a in objs if a.radar_points is not None and math.isfinite(a.radar_points)]
    vehicles = [i for i, a in enumerate(objs) if a.label in VEHICLE]
    dyn = [i for i, a in enumerate(objs) if a.label in DYNAMIC]
    near_dyn = [i for i in dyn if dist[i] <= 20.0]

    side = 0
    for a in objs:
        theta = abs(math.atan2(a.center[1], a.center[0]))
        if math.pi / 3 < theta < 2 * math.pi / 3:
            side += 1

    nearest = min(vehicles, key=lambda i: (dist[i], i)) if vehicles else None
    return ExtendedControls(
        ego_speed=math.hypot(*v_e),
        barrier_cone_count=sum(a.label in BARRIER_CONE for a in objs),
        nearfield_count=sum(d <= 5.0 for d in dist),
        side_object_count=side,
        mean_radar_pts=(sum(radar) / len(radar)) if radar else None,
        nearest_veh_speed=speed[nearest] if nearest is not None else None,
        mean_speed_20m=(sum(speed[i] for i in near_dyn) / len(near_dyn)) if near_dyn else None,
        approach_count=sum(_approaching(objs[i], v_e) for i in dyn),
        approach_veh_count=sum(_approaching(objs[i], v_e) for i in vehicles),
        dyn_ratio=(len(dyn) / len(objs)) if objs else None,
    )
