"""Shared data model, the MVTN tensor file format and the scene manifest.

Tensors live on disk as float32 (or int32 for label maps); everything derived
from them is computed in float64.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ArgumentError, FormatError, TruncationError, ValidationError

MAGIC = b"MVTN"
FORMAT_VERSION = 1
MANIFEST_VERSION = 1

DTYPE_FLOAT32 = 1
DTYPE_INT32 = 2
_DTYPES = {DTYPE_FLOAT32: np.dtype("<f4"), DTYPE_INT32: np.dtype("<i4")}

OBJECT_CLASSES = (
    "vehicle", "pedestrian", "bicycle", "motorcycle", "barrier", "traffic_cone", "other",
)


def _frozen(a, dtype):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ViewTensor:
    """C x ch x H x W camera stack, camera-major."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, np.float32)
        if data.ndim != 4:
            raise ArgumentError(f"ViewTensor needs rank 4 (C, ch, H, W), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("ViewTensor contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def cameras(self):
        return self.data.shape[0]

    @property
    def channels(self):
        return self.data.shape[1]

    @property
    def height(self):
        return self.data.shape[2]

    @property
    def width(self):
        return self.data.shape[3]

    def __eq__(self, other):
        return isinstance(other, ViewTensor) and np.array_equal(self.data, other.data)


@dataclass(frozen=True, eq=False)
class SaliencyTensor:
    """Signed C x H x W attribution values."""

    data: np.ndarray

    def __post_init__(self):
        data = _frozen(self.data, np.float32)
        if data.ndim != 3:
            raise ArgumentError(f"SaliencyTensor needs rank 3 (C, H, W), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValidationError("SaliencyTensor contains non-finite values")
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape

    @property
    def cameras(self):
        return self.data.shape[0]

    def __eq__(self, other):
        return isinstance(other, SaliencyTensor) and np.array_equal(self.data, other.data)


def as_trajectory(points) -> np.ndarray:
    """Validate and return a (T, 2) float64 waypoint array."""
    traj = np.asarray(points, dtype=np.float64)
    if traj.ndim != 2 or traj.shape[1] != 2 or traj.shape[0] < 1:
        raise ArgumentError(f"trajectory must have shape (T>=1, 2), got {traj.shape}")
    if not np.all(np.isfinite(traj)):
        raise ValidationError("trajectory has non-finite coordinates")
    return traj


@dataclass(frozen=True, eq=False)
class CameraCalibration:
    intrinsics: np.ndarray  # 3x3, pixels
    extrinsics: np.ndarray  # 4x4 ego -> camera, meters

    def __post_init__(self):
        k = _frozen(self.intrinsics, np.float64)
        e = _frozen(self.extrinsics, np.float64)
        if k.shape != (3, 3) or e.shape != (4, 4):
            raise ValidationError(f"calibration shapes {k.shape}/{e.shape}, expected (3,3)/(4,4)")
        if k[2, 2] != 1.0:
            raise ValidationError("intrinsics[2][2] must be 1")
        rot = e[:3, :3]
        if not np.allclose(rot @ rot.T, np.eye(3), atol=1e-6, rtol=0):
            raise ValidationError("extrinsics rotation block is not orthonormal")
        object.__setattr__(self, "intrinsics", k)
        object.__setattr__(self, "extrinsics", e)

    def to_json(self):
        return {"intrinsics": self.intrinsics.tolist(), "extrinsics": self.extrinsics.tolist()}

    @classmethod
    def from_json(cls, d):
        return cls(np.array(d["intrinsics"]), np.array(d["extrinsics"]))


@dataclass(frozen=True)
class ObjectAnnotation:
    id: str
    label: str
    center: tuple  # (x, y, z) meters, ego frame
    size: tuple  # (l, w, h) meters
    yaw: float = 0.0
    velocity: tuple = (0.0, 0.0)
    radar_points: int | None = None

    def __post_init__(self):
        if self.label not in OBJECT_CLASSES:
            raise ValidationError(f"object {self.id}: unknown class {self.label!r}")
        if len(self.size) != 3 or min(self.size) <= 0:
            raise ValidationError(f"object {self.id}: box dimensions must be positive, got {self.size}")
        if len(self.center) != 3 or not all(math.isfinite(c) for c in self.center):
            raise ValidationError(f"object {self.id}: center must be 3 finite values")
        if len(self.velocity) != 2 or not all(math.isfinite(v) for v in self.velocity):
            raise ValidationError(f"object {self.id}: velocity must be 2 finite values")
        if self.radar_points is not None and self.radar_points < 0:
            raise ValidationError(f"object {self.id}: negative radar point count")

    def to_json(self):
        return {
            "id": self.id, "label": self.label, "center": list(self.center),
            "size": list(self.size), "yaw": self.yaw, "velocity": list(self.velocity),
            "radar_points": self.radar_points,
        }

    @classmethod
    def from_json(cls, d):
        return cls(
            id=str(d["id"]), label=d["label"],
            center=tuple(float(v) for v in d["center"]),
            size=tuple(float(v) for v in d["size"]),
            yaw=float(d.get("yaw", 0.0)),
            velocity=tuple(float(v) for v in d.get("velocity", (0.0, 0.0))),
            radar_points=d.get("radar_points"),
        )


@dataclass(frozen=True)
class EgoStatus:
    velocity: tuple = (0.0, 0.0)
    length: float = 4.08
    width: float = 1.73

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0:
            raise ValidationError("ego footprint dimensions must be positive")

    def to_json(self):
        return {"velocity": list(self.velocity), "length": self.length, "width": self.width}

    @classmethod
    def from_json(cls, d):
        return cls(
            velocity=tuple(float(v) for v in d.get("velocity", (0.0, 0.0))),
            length=float(d.get("length", 4.08)),
            width=float(d.get("width", 1.73)),
        )


@dataclass(frozen=True)
class ObstacleBox:
    """Oriented ground-plane rectangle in the ego frame."""

    cx: float
    cy: float
    yaw: float
    length: float
    width: float

    def to_json(self):
        return {"cx": self.cx, "cy": self.cy, "yaw": self.yaw, "l": self.length, "w": self.width}

    @classmethod
    def from_json(cls, d):
        return cls(float(d["cx"]), float(d["cy"]), float(d["yaw"]), float(d["l"]), float(d["w"]))


@dataclass(frozen=True, eq=False)
class SampleRecord:
    sample_id: str
    scene_id: str
    tensor_path: str
    calibrations: tuple
    annotations: tuple
    ego: EgoStatus
    gt_trajectory: np.ndarray
    obstacle_boxes: tuple  # one tuple of ObstacleBox per horizon step

    def __post_init__(self):
        gt = as_trajectory(self.gt_trajectory)
        gt.setflags(write=False)
        object.__setattr__(self, "gt_trajectory", gt)
        if len(self.obstacle_boxes) != len(gt):
            raise ValidationError(
                f"sample {self.sample_id}: {len(self.obstacle_boxes)} obstacle-box steps "
                f"for horizon {len(gt)}"
            )

    @property
    def horizon(self):
        return len(self.gt_trajectory)

    def to_json(self):
        return {
            "sample_id": self.sample_id,
            "tensor_path": self.tensor_path,
            "calibrations": [c.to_json() for c in self.calibrations],
            "annotations": [a.to_json() for a in self.annotations],
            "ego": self.ego.to_json(),
            "gt_trajectory": self.gt_trajectory.tolist(),
            "obstacle_boxes": [[b.to_json() for b in step] for step in self.obstacle_boxes],
        }

    @classmethod
    def from_json(cls, d, scene_id):
        return cls(
            sample_id=str(d["sample_id"]),
            scene_id=scene_id,
            tensor_path=d["tensor_path"],
            calibrations=tuple(CameraCalibration.from_json(c) for c in d.get("calibrations", [])),
            annotations=tuple(ObjectAnnotation.from_json(a) for a in d.get("annotations", [])),
            ego=EgoStatus.from_json(d.get("ego", {})),
            gt_trajectory=np.array(d["gt_trajectory"], dtype=np.float64),
            obstacle_boxes=tuple(
                tuple(ObstacleBox.from_json(b) for b in step) for step in d.get("obstacle_boxes", [])
            ),
        )


@dataclass(frozen=True)
class Scene:
    scene_id: str
    samples: tuple


@dataclass(frozen=True)
class SceneManifest:
    root: Path
    cameras: int
    channels: int
    height: int
    width: int
    scenes: tuple = ()
    version: int = MANIFEST_VERSION
    _index: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def dims(self):
        return (self.cameras, self.channels, self.height, self.width)

    def samples(self) -> Iterator[SampleRecord]:
        for scene in self.scenes:
            yield from scene.samples

    @property
    def n_samples(self):
        return sum(len(s.samples) for s in self.scenes)

    def sample(self, sample_id) -> SampleRecord:
        if not self._index:
            self._index.update({s.sample_id: s for s in self.samples()})
        return self._index[sample_id]

    def tensor_file(self, sample: SampleRecord) -> Path:
        return (self.root / sample.tensor_path).resolve()

    def load_tensor(self, sample: SampleRecord) -> ViewTensor:
        t = read_tensor(self.tensor_file(sample))
        if t.shape != self.dims:
            raise ValidationError(f"sample {sample.sample_id}: tensor shape {t.shape} != manifest {self.dims}")
        return t

    def to_json(self):
        return {
            "version": self.version,
            "cameras": self.cameras, "channels": self.channels,
            "height": self.height, "width": self.width,
            "scenes": [
                {"scene_id": sc.scene_id, "samples": [s.to_json() for s in sc.samples]}
                for sc in self.scenes
            ],
        }


# --- tensor file format --------------------------------------------------


def encode_tensor(array: np.ndarray) -> bytes:
    """Serialize a float32 or int32 array to MVTN bytes."""
    a = np.asarray(array)
    if a.dtype.kind == "f":
        code = DTYPE_FLOAT32
    elif a.dtype.kind in "iu":
        code = DTYPE_INT32
    else:
        raise ArgumentError(f"unsupported dtype {a.dtype}")
    payload = np.ascontiguousarray(a, dtype=_DTYPES[code]).tobytes()
    header = MAGIC + struct.pack(f"<II{a.ndim}IB", FORMAT_VERSION, a.ndim, *a.shape, code)
    return header + payload


def decode_tensor(buf: bytes) -> np.ndarray:
    if buf[:4] != MAGIC:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    if len(buf) < 12:
        raise TruncationError("header shorter than 12 bytes")
    version, rank = struct.unpack_from("<II", buf, 4)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported tensor format version {version}")
    end = 12 + 4 * rank + 1
    if len(buf) < end:
        raise TruncationError("header truncated inside dims")
    dims = struct.unpack_from(f"<{rank}I", buf, 12)
    code = buf[end - 1]
    if code not in _DTYPES:
        raise FormatError(f"unknown dtype code {code}")
    dtype = _DTYPES[code]
    expected = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(buf) - end != expected:
        raise TruncationError(f"payload has {len(buf) - end} bytes, dims {dims} need {expected}")
    return np.frombuffer(buf, dtype=dtype, offset=end).reshape(dims).copy()


def write_tensor(t, path) -> None:
    """Write a ViewTensor, SaliencyTensor or raw float32/int32 array."""
    array = t.data if isinstance(t, (ViewTensor, SaliencyTensor)) else np.asarray(t)
    path = Path(path)
    try:
        path.write_bytes(encode_tensor(array))
    except OSError as exc:
        raise OSError(f"cannot write tensor to {path}: {exc}") from exc


def read_tensor(path):
    """Read an MVTN file.

    Rank-4 float payloads come back as ViewTensor, rank-3 float payloads as
    SaliencyTensor, int32 payloads (label maps) as a plain array.
    """
    path = Path(path)
    try:
        buf = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read tensor {path}: {exc}") from exc
    try:
        array = decode_tensor(buf)
    except ValidationError as exc:
        raise type(exc)(f"{path}: {exc}") from None
    if array.dtype.kind == "f":
        if not np.all(np.isfinite(array)):
            raise ValidationError(f"{path}: payload contains NaN or Inf")
        if array.ndim == 4:
            return ViewTensor(array)
        if array.ndim == 3:
            return SaliencyTensor(array)
    return array


# --- manifest ---------------------------------------------------------


def manifest_from_json(doc: dict, root) -> SceneManifest:
    root = Path(root)
    for key in ("cameras", "channels", "height", "width"):
        if key not in doc:
            raise ValidationError(f"manifest missing field {key!r}")
    n_cams = int(doc["cameras"])
    seen = set()
    scenes = []
    for sc in doc.get("scenes", []):
        scene_id = str(sc["scene_id"])
        samples = []
        for raw in sc.get("samples", []):
            sample = SampleRecord.from_json(raw, scene_id)
            if sample.sample_id in seen:
                raise ValidationError(f"duplicate sample id {sample.sample_id!r}")
            seen.add(sample.sample_id)
            if len(sample.calibrations) != n_cams:
                raise ValidationError(
                    f"sample {sample.sample_id}: {len(sample.calibrations)} calibrations for {n_cams} cameras"
                )
            if not (root / sample.tensor_path).is_file():
                raise ValidationError(f"sample {sample.sample_id}: missing tensor file {sample.tensor_path}")
            samples.append(sample)
        scenes.append(Scene(scene_id, tuple(samples)))
    return SceneManifest(
        root=root, cameras=n_cams, channels=int(doc["channels"]),
        height=int(doc["height"]), width=int(doc["width"]),
        scenes=tuple(scenes), version=int(doc.get("version", MANIFEST_VERSION)),
    )


def load_manifest(path) -> SceneManifest:
    """Load and eagerly validate a manifest; tensor paths resolve against its directory."""
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: not valid JSON ({exc})") from None
    return manifest_from_json(doc, path.parent)


def save_manifest(manifest: SceneManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=1) + "\n")


def build_manifest(root, dims: Sequence[int], scenes) -> SceneManifest:
    c, ch, h, w = dims
    return SceneManifest(root=Path(root), cameras=c, channels=ch, height=h, width=w, scenes=tuple(scenes))
