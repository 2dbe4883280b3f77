"""Seeded synthetic datasets with planted region dependencies.

Each sample gets a latent risk level ``z`` in [0, 1). Higher ``z`` makes the
planted planner lean on fewer regions and fewer cameras, and widens the gap
between the planner output and the ground-truth trajectory. Risk labels are
therefore tied to attribution statistics by construction; correlations
measured on these datasets check the pipeline, they are not evidence about
real planners.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attribution import AttributionResult, score_ordering
from .core import (CameraCalibration, EgoStatus, ObjectAnnotation, ObstacleBox, SampleRecord, Scene,
                   build_manifest, save_manifest, write_tensor)
from .errors import ArgumentError
from .partition import grid_partition, save_partition
from .planner import ModularPlannerSpec
from .risk import collision_any

PROFILES = ("concentrated", "diffuse", "single-camera", "mixed")
DT = 0.5
_CAMERA_YAWS_6 = (0.0, 55.0, -55.0, 110.0, -110.0, 180.0)
_FOV = math.radians(70.0)
_CAM_HEIGHT = 1.5
_CLASS_SIZES = {
    "vehicle": (4.5, 1.9, 1.6),
    "pedestrian": (0.7, 0.7, 1.8),
    "bicycle": (1.8, 0.6, 1.4),
    "motorcycle": (2.1, 0.8, 1.5),
    "barrier": (2.0, 0.5, 1.0),
    "traffic_cone": (0.4, 0.4, 0.8),
}
_CLASS_P = (0.45, 0.2, 0.08, 0.07, 0.1, 0.1)


@dataclass(frozen=True)
class SynthSpec:
    scenes: int = 10
    samples_per_scene: int = 2
    cameras: int = 6
    channels: int = 3
    height: int = 32
    width: int = 32
    grid: int = 4  # regions per camera = grid * grid
    profile: str = "mixed"
    offset_scale: float = 1.0
    obstacles: float = 3.0  # mean non-colliding obstacles per sample
    collision_rate: float = 0.1
    noise_scale: float = 0.5
    horizon: int = 6
    seed: int = 0

    def __post_init__(self):
        for name in ("scenes", "samples_per_scene", "cameras", "channels", "height", "width", "grid", "horizon"):
            if getattr(self, name) < 1:
                raise ArgumentError(f"{name} must be >= 1")
        for name in ("offset_scale", "obstacles", "noise_scale"):
            if getattr(self, name) < 0:
                raise ArgumentError(f"{name} must be >= 0")
        if not 0.0 <= self.collision_rate <= 1.0:
            raise ArgumentError("collision_rate must lie in [0, 1]")
        if self.profile not in PROFILES:
            raise ArgumentError(f"profile must be one of {PROFILES}")
        if self.grid > min(self.height, self.width):
            raise ArgumentError("grid finer than the view")

    @property
    def n_samples(self):
        return self.scenes * self.samples_per_scene

    @property
    def regions_per_camera(self):
        return self.grid * self.grid


@dataclass(frozen=True)
class SynthDataset:
    root: Path
    manifest: object
    planners: dict
    planted: dict
    partition: object
    flags: tuple


def camera_calibrations(c, h, w):
    """Ring of pinhole cameras at 1.5 m height, 70 degree horizontal field of view."""
    yaws = _CAMERA_YAWS_6 if c == 6 else tuple(360.0 * k / c for k in range(c))
    f = 0.5 * w / math.tan(0.5 * _FOV)
    K = np.array([[f, 0.0, 0.5 * w], [0.0, f, 0.5 * h], [0.0, 0.0, 1.0]])
    out = []
    for yd in yaws:
        psi = math.radians(yd)
        # camera axes in the ego frame: x right, y down, z along the optical axis
        R = np.array([
            [math.sin(psi), -math.cos(psi), 0.0],
            [0.0, 0.0, -1.0],
            [math.cos(psi), math.sin(psi), 0.0],
        ])
        E = np.eye(4)
        E[:3, :3] = R
        E[:3, 3] = -R @ np.array([0.0, 0.0, _CAM_HEIGHT])
        out.append(CameraCalibration(K, E))
    return tuple(out)


def _pick_profile(spec, z, rng):
    if spec.profile != "mixed":
        return spec.profile
    # riskier samples lean on narrower evidence
    w = np.array([0.2 + z, 1.2 - z, 0.1 + 0.8 * z])
    return ("concentrated", "diffuse", "single-camera")[rng.choice(3, p=w / w.sum())]


def _planted_regions(spec, profile, z, rng):
    """Planted region ids and offset magnitudes."""
    rpc = spec.regions_per_camera
    n = spec.cameras * rpc
    if profile == "concentrated":
        k = min(n, 4 if z > 0.5 else 5)
        cams = rng.choice(spec.cameras, size=min(spec.cameras, 2), replace=False)
        pool = np.concatenate([np.arange(c * rpc, (c + 1) * rpc) for c in cams])
        regions = rng.choice(pool, size=min(k, len(pool)), replace=False)
        mags = 0.5 ** np.arange(len(regions)) * rng.uniform(0.9, 1.1, len(regions))
    elif profile == "single-camera":
        cam = rng.integers(spec.cameras)
        k = min(rpc, 3 + int(rng.integers(0, 4)))
        regions = cam * rpc + rng.choice(rpc, size=k, replace=False)
        mags = rng.uniform(0.4, 1.0, k)
    else:
        k = max(1, int(round(n * (0.5 - 0.3 * z))))
        regions = rng.choice(n, size=k, replace=False)
        mags = rng.uniform(0.5, 1.0, k)
    return regions.astype(int), mags * spec.offset_scale


def _base_trajectory(rng, horizon):
    speed = rng.uniform(3.0, 10.0)
    yaw_rate = rng.normal(0.0, 0.1)
    t = DT * np.arange(1, horizon + 1)
    heading = yaw_rate * t
    steps = np.stack([np.cos(heading), np.sin(heading)], axis=1) * speed * DT
    return np.cumsum(steps, axis=0), speed


def _view_tensor(spec, rng):
    """Smooth low-frequency structure plus pixel noise, kept well away from zero."""
    c, ch, h, w = spec.cameras, spec.channels, spec.height, spec.width
    coarse = rng.random((c, ch, 4, 4))
    ri = np.minimum((np.arange(h) * 4) // h, 3)
    ci = np.minimum((np.arange(w) * 4) // w, 3)
    smooth = coarse[:, :, ri][:, :, :, ci]
    x = 0.15 + 0.6 * smooth + 0.2 * rng.random((c, ch, h, w))
    return x.astype(np.float32)


def _annotation(rng, oid, label, x, y, yaw=None):
    size = _CLASS_SIZES[label]
    moving = label in ("vehicle", "pedestrian", "bicycle", "motorcycle")
    speed = rng.uniform(0.0, 8.0 if label == "vehicle" else 2.0) if moving else 0.0
    yaw = rng.uniform(-math.pi, math.pi) if yaw is None else yaw
    dist = math.hypot(x, y)
    radar = int(rng.poisson(max(0.5, 40.0 / (1.0 + 0.2 * dist))))
    return ObjectAnnotation(
        id=oid, label=label, center=(float(x), float(y), 0.5 * size[2]), size=size, yaw=float(yaw),
        velocity=(float(speed * math.cos(yaw)), float(speed * math.sin(yaw))), radar_points=radar,
    )


def _box_of(a: ObjectAnnotation):
    return ObstacleBox(a.center[0], a.center[1], a.yaw, a.size[0], a.size[1])


def _sample(spec, index, z, collide, rng, dims):
    """Return (record fields, planner spec, planted entry, flags)."""
    flags = []
    profile = _pick_profile(spec, z, rng)
    regions, mags = _planted_regions(spec, profile, z, rng)
    base, speed = _base_trajectory(rng, spec.horizon)
    n = spec.cameras * spec.regions_per_camera
    offsets = np.zeros((n, spec.horizon, 2))
    phi = rng.uniform(-math.pi, math.pi)
    ramp = (np.arange(1, spec.horizon + 1) / spec.horizon)[:, None]
    for r, m in zip(regions, mags):
        a = phi + rng.normal(0.0, 0.3)
        direction = ramp * np.array([math.cos(a), math.sin(a)])
        offsets[r] = m * direction / np.linalg.norm(direction)
    planner = ModularPlannerSpec(base=base, offsets=offsets, input_shape=dims)

    sigma = spec.noise_scale * (0.2 + 1.8 * z ** 2)
    noise = rng.normal(0.0, 1.0, (spec.horizon, 2)) * sigma * ramp
    gt = base + noise

    ego = EgoStatus(velocity=(float(speed), 0.0))
    annotations, boxes = [], []
    if collide:
        t_hit = int(rng.integers(spec.horizon))
        a = _annotation(rng, f"o{index}_hit", "vehicle", base[t_hit, 0], base[t_hit, 1])
        annotations.append(a)
        boxes.append(_box_of(a))
    n_obs = int(rng.poisson(spec.obstacles * (0.5 + z)))
    labels = list(_CLASS_SIZES)
    for k in range(n_obs):
        for _ in range(50):
            label = labels[rng.choice(len(labels), p=_CLASS_P)]
            r, th = rng.uniform(6.0, 40.0), rng.uniform(-math.pi, math.pi)
            a = _annotation(rng, f"o{index}_{k}", label, r * math.cos(th), r * math.sin(th))
            box = _box_of(a)
            if not collision_any(base, ego, [[box]] * spec.horizon):
                annotations.append(a)
                boxes.append(box)
                break
        else:
            flags.append(f"obstacle {k} of sample {index} could not be placed clear of the plan")
    steps = tuple(tuple(boxes) for _ in range(spec.horizon))
    planted = {
        "profile": profile,
        "latent_risk": float(z),
        "regions": [int(r) for r in regions],
        "weights": [float(np.linalg.norm(offsets[r])) for r in regions],
        "collision": bool(collide),
    }
    return gt, ego, tuple(annotations), steps, planner, planted, flags


def generate(spec: SynthSpec, out_dir) -> SynthDataset:
    """Write manifest, tensors, planner specs, planted truth and the grid partition."""
    out = Path(out_dir)
    (out / "tensors").mkdir(parents=True, exist_ok=True)
    dims = (spec.cameras, spec.channels, spec.height, spec.width)
    n = spec.n_samples
    top = np.random.default_rng([spec.seed, 0])
    z = top.random(n)
    n_hit = int(math.floor(spec.collision_rate * n + 0.5))
    hit = np.zeros(n, dtype=bool)
    if n_hit:
        w = (0.1 + z) ** 2
        hit[top.choice(n, size=n_hit, replace=False, p=w / w.sum())] = True

    cals = camera_calibrations(spec.cameras, spec.height, spec.width)
    planners, planted, flags, scenes = {}, {}, [], []
    index = 0
    for s in range(spec.scenes):
        scene_id = f"scene{s:04d}"
        records = []
        for k in range(spec.samples_per_scene):
            sid = f"{scene_id}_{k:03d}"
            rng = np.random.default_rng([spec.seed, 1, index])
            gt, ego, ann, steps, planner, truth, f = _sample(spec, index, z[index], hit[index], rng, dims)
            tensor_path = f"tensors/{sid}.mvtn"
            write_tensor(_view_tensor(spec, rng), out / tensor_path)
            records.append(SampleRecord(sid, scene_id, tensor_path, cals, ann, ego, gt, steps))
            planners[sid] = planner.to_json()
            planted[sid] = truth
            flags.extend(f)
            index += 1
        scenes.append(Scene(scene_id, tuple(records)))

    manifest = build_manifest(out, dims, scenes)
    save_manifest(manifest, out / "manifest.json")
    (out / "planners.json").write_text(json.dumps(planners, indent=1) + "\n")
    (out / "planted.json").write_text(json.dumps(planted, indent=1) + "\n")
    p = grid_partition((spec.cameras, spec.height, spec.width), spec.grid, spec.grid)
    save_partition(p, out / "partition")
    info = {"spec": asdict(spec), "collisions": int(hit.sum()), "flags": flags}
    (out / "synth.json").write_text(json.dumps(info, indent=1) + "\n")
    return SynthDataset(out, manifest, planners, planted, p, tuple(flags))


def load_planted(path) -> dict:
    return json.loads(Path(path).read_text())


def recovery_score(result: AttributionResult | list, planted) -> float:
    """Share of planted offset mass held by the K top-scoring regions.

    ``planted`` is a planted-truth entry (``regions`` and ``weights``) or a
    ``{region: weight}`` mapping; K counts the nonzero planted regions.
    ``result`` may also be a plain ranked list of region ids.
    """
    if isinstance(planted, dict) and "regions" in planted:
        weights = dict(zip(planted["regions"], planted["weights"]))
    else:
        weights = {int(r): float(w) for r, w in dict(planted).items()}
    weights = {r: w for r, w in weights.items() if w > 0}
    total = sum(weights.values())
    if total == 0:
        return 1.0
    ranked = score_ordering(result) if isinstance(result, AttributionResult) else [int(r) for r in result]
    top = ranked[: len(weights)]
    return float(sum(weights.get(r, 0.0) for r in top) / total)
