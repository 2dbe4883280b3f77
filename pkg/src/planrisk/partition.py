"""Region partitions over all camera views, coarse grouping and masking."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .core import ViewTensor, read_tensor, write_tensor
from .errors import ArgumentError, ValidationError

_FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)


@dataclass(frozen=True, eq=False)
class RegionPartition:
    """Per-camera label maps with globally unique, dense region ids.

    ``labels`` is a (C, H, W) int32 array. Centroids are (row, col) means of
    the region's integer pixel indices.
    """

    labels: np.ndarray
    camera: np.ndarray
    pixels: np.ndarray
    centroid: np.ndarray

    @classmethod
    def from_labels(cls, labels) -> "RegionPartition":
        labels = np.array(labels, dtype=np.int32, copy=True)
        if labels.ndim != 3:
            raise ArgumentError(f"label map must be (C, H, W), got {labels.shape}")
        n = int(labels.max()) + 1 if labels.size else 0
        flat = labels.ravel()
        counts = np.bincount(flat, minlength=n)
        if labels.min() < 0 or np.any(counts == 0):
            raise ValidationError("region labels must be dense 0..N-1")
        c_idx, r_idx, col_idx = np.indices(labels.shape)
        cams = np.zeros(n, dtype=np.int64)
        cams[flat] = c_idx.ravel()
        # each region must live in exactly one camera
        cam_sum = np.bincount(flat, weights=c_idx.ravel(), minlength=n)
        if not np.allclose(cam_sum, cams * counts):
            raise ValidationError("a region spans more than one camera")
        cent = np.stack(
            [
                np.bincount(flat, weights=r_idx.ravel(), minlength=n) / counts,
                np.bincount(flat, weights=col_idx.ravel(), minlength=n) / counts,
            ],
            axis=1,
        )
        labels.setflags(write=False)
        for a in (cams, counts, cent):
            a.setflags(write=False)
        return cls(labels=labels, camera=cams, pixels=counts, centroid=cent)

    @property
    def n_regions(self) -> int:
        return len(self.pixels)

    @property
    def dims(self):
        return self.labels.shape

    def region_ids(self):
        return range(self.n_regions)

    def regions_in_camera(self, c):
        return np.flatnonzero(self.camera == c)

    def kept_mask(self, kept) -> np.ndarray:
        """Boolean vector over regions from an id iterable (or pass-through)."""
        if isinstance(kept, np.ndarray) and kept.dtype == bool:
            if kept.shape != (self.n_regions,):
                raise ArgumentError("kept mask length differs from region count")
            return kept
        mask = np.zeros(self.n_regions, dtype=bool)
        ids = np.fromiter((int(r) for r in kept), dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n_regions):
            bad = ids[(ids < 0) | (ids >= self.n_regions)][0]
            raise ArgumentError(f"region id {bad} not in partition of {self.n_regions} regions")
        mask[ids] = True
        return mask

    def pixel_mask(self, kept) -> np.ndarray:
        """(C, H, W) boolean map of pixels belonging to kept regions."""
        return self.kept_mask(kept)[self.labels]

    def paint(self, values) -> np.ndarray:
        """Broadcast one value per region onto its pixels."""
        values = np.asarray(values, dtype=np.float64)
        return values[self.labels]

    def is_four_connected(self) -> bool:
        for c in range(self.labels.shape[0]):
            for r in self.regions_in_camera(c):
                _, n = ndimage.label(self.labels[c] == r, structure=_FOUR_CONNECTED)
                if n != 1:
                    return False
        return True

    def table(self):
        return [
            {
                "id": i,
                "camera": int(self.camera[i]),
                "pixels": int(self.pixels[i]),
                "centroid": [float(self.centroid[i, 0]), float(self.centroid[i, 1])],
            }
            for i in range(self.n_regions)
        ]


@dataclass(frozen=True, eq=False)
class GroupAssignment:
    region_group: np.ndarray  # region id -> group id
    group_camera: tuple
    members: tuple  # group id -> tuple of region ids, ascending

    @property
    def n_groups(self):
        return len(self.members)

    @classmethod
    def from_members(cls, p: RegionPartition, members) -> "GroupAssignment":
        members = tuple(tuple(sorted(int(r) for r in m)) for m in members)
        region_group = np.full(p.n_regions, -1, dtype=np.int64)
        cams = []
        for g, m in enumerate(members):
            if not m:
                raise ArgumentError(f"group {g} is empty")
            if np.any(region_group[list(m)] >= 0):
                raise ArgumentError("a region belongs to two groups")
            region_group[list(m)] = g
            cam = set(p.camera[list(m)].tolist())
            if len(cam) != 1:
                raise ArgumentError(f"group {g} spans cameras {sorted(cam)}")
            cams.append(cam.pop())
        if np.any(region_group < 0):
            raise ArgumentError("grouping does not cover every region")
        region_group.setflags(write=False)
        return cls(region_group=region_group, group_camera=tuple(cams), members=members)


def _tile_edges(n, parts):
    step = n // parts
    edges = [i * step for i in range(parts)] + [n]
    return edges


def grid_partition(dims, rows: int, cols: int) -> RegionPartition:
    """Tile every camera into ``rows x cols`` rectangles.

    The last row and column absorb the remainder pixels. Labels run
    camera-major, then row-major.
    """
    c, h, w = dims
    if rows <= 0 or cols <= 0:
        raise ArgumentError("rows and cols must be positive")
    if rows > h or cols > w:
        raise ArgumentError(f"grid {rows}x{cols} does not fit a {h}x{w} view")
    re, ce = _tile_edges(h, rows), _tile_edges(w, cols)
    row_of = np.searchsorted(re, np.arange(h), side="right") - 1
    col_of = np.searchsorted(ce, np.arange(w), side="right") - 1
    cell = row_of[:, None] * cols + col_of[None, :]
    labels = cell[None, :, :] + (np.arange(c) * rows * cols)[:, None, None]
    return RegionPartition.from_labels(labels)


def _seed_grid(h, w, k):
    gr = max(1, min(h, round(math.sqrt(k * h / w))))
    gc = max(1, min(w, round(k / gr)))
    rows = (np.arange(gr) + 0.5) * h / gr - 0.5
    cols = (np.arange(gc) + 0.5) * w / gc - 0.5
    rr, cc = np.meshgrid(rows, cols, indexing="ij")
    return rr.ravel(), cc.ravel()


def _slico_camera(intensity, k, compactness, iterations):
    h, w = intensity.shape
    step = math.sqrt(h * w / k)
    cr, cc = _seed_grid(h, w, k)
    ci = intensity[np.clip(np.round(cr).astype(int), 0, h - 1), np.clip(np.round(cc).astype(int), 0, w - 1)]
    rr, col = np.indices((h, w))
    rr, col, iv = rr.ravel().astype(float), col.ravel().astype(float), intensity.ravel()
    m_color = np.full(len(cr), max(compactness, 1e-12))
    assign = np.zeros(h * w, dtype=np.int64)
    for _ in range(max(1, iterations)):
        dr = rr[None, :] - cr[:, None]
        dc = col[None, :] - cc[:, None]
        dcol = np.abs(iv[None, :] - ci[:, None])
        d = (dcol / m_color[:, None]) ** 2 + (dr**2 + dc**2) / step**2
        # SLIC only searches a 2S x 2S window around each centre
        d[(np.abs(dr) > 2 * step) | (np.abs(dc) > 2 * step)] = np.inf
        assign = np.argmin(d, axis=0)
        counts = np.bincount(assign, minlength=len(cr))
        live = counts > 0
        cr[live] = np.bincount(assign, weights=rr, minlength=len(cr))[live] / counts[live]
        cc[live] = np.bincount(assign, weights=col, minlength=len(cr))[live] / counts[live]
        ci[live] = np.bincount(assign, weights=iv, minlength=len(cr))[live] / counts[live]
        # SLICO: per-cluster colour scale = largest colour distance seen this pass
        seen = np.zeros(len(cr))
        np.maximum.at(seen, assign, np.abs(iv - ci[assign]))
        m_color = np.where(seen > 1e-12, seen, m_color)
    return assign.reshape(h, w)


def _dominant_neighbour(labels, component):
    grown = ndimage.binary_dilation(component, structure=_FOUR_CONNECTED)
    ring = labels[grown & ~component]
    ring = ring[ring >= 0]
    if ring.size == 0:
        return None
    vals, counts = np.unique(ring, return_counts=True)
    return int(vals[np.argmax(counts)])


def enforce_connectivity(labels, min_size=1):
    """Relabel so every label is one 4-connected component.

    Orphan components (every component of a label but its largest) and
    components smaller than ``min_size`` are merged into the neighbouring
    label they share the longest boundary with. Returns labels densified in
    raster order of first appearance.
    """
    labels = np.array(labels, dtype=np.int64, copy=True)
    for _ in range(labels.size):
        changed = False
        orphans = []
        for lab in np.unique(labels):
            comp, n = ndimage.label(labels == lab, structure=_FOUR_CONNECTED)
            sizes = np.bincount(comp.ravel())[1:]
            keep = int(np.argmax(sizes)) + 1
            for i in range(1, n + 1):
                if i != keep or (sizes[i - 1] < min_size and len(np.unique(labels)) > 1):
                    orphans.append((int(sizes[i - 1]), comp == i))
        orphans.sort(key=lambda o: o[0])
        for _, comp in orphans:
            target = _dominant_neighbour(np.where(comp, -1, labels), comp)
            if target is not None and not np.all(labels[comp] == target):
                labels[comp] = target
                changed = True
        if not changed:
            break
    _, first = np.unique(labels.ravel(), return_index=True)
    order = np.argsort(first)
    remap = np.empty(labels.max() + 1, dtype=np.int64)
    remap[np.unique(labels.ravel())[order]] = np.arange(len(order))
    return remap[labels]


def slic_partition(x: ViewTensor, regions_per_camera: int, compactness: float = 0.1,
                   iterations: int = 10) -> RegionPartition:
    """SLICO-style superpixels per camera on channel-mean intensity.

    k-means over (intensity, row, col) with grid-initialised centres, a
    per-cluster colour scale adapted to the largest colour distance observed
    in the previous pass, and a connectivity post-pass.
    """
    c, _, h, w = x.shape
    if regions_per_camera < 1:
        raise ArgumentError("regions_per_camera must be >= 1")
    if regions_per_camera > h * w:
        raise ArgumentError(f"{regions_per_camera} regions exceed {h * w} pixels per camera")
    intensity = x.data.astype(np.float64).mean(axis=1)
    out = np.empty((c, h, w), dtype=np.int64)
    offset = 0
    for cam in range(c):
        lab = _slico_camera(intensity[cam], regions_per_camera, compactness, iterations)
        lab = enforce_connectivity(lab)
        out[cam] = lab + offset
        offset += int(lab.max()) + 1
    return RegionPartition.from_labels(out)


def group_regions(p: RegionPartition, group_rows: int, group_cols: int) -> GroupAssignment:
    """Assign each region to the coarse grid cell holding its centroid.

    Cells are half-open in continuous pixel coordinates (pixel i spans
    [i, i+1)), so every centroid falls into exactly one cell.
    """
    if group_rows < 1 or group_cols < 1:
        raise ArgumentError("group grid counts must be >= 1")
    _, h, w = p.dims
    gr = np.minimum(np.floor((p.centroid[:, 0] + 0.5) * group_rows / h), group_rows - 1).astype(int)
    gc = np.minimum(np.floor((p.centroid[:, 1] + 0.5) * group_cols / w), group_cols - 1).astype(int)
    key = p.camera * (group_rows * group_cols) + gr * group_cols + gc
    members = [tuple(np.flatnonzero(key == k).tolist()) for k in np.unique(key)]
    return GroupAssignment.from_members(p, members)


def singleton_groups(p: RegionPartition) -> GroupAssignment:
    return GroupAssignment.from_members(p, [(r,) for r in p.region_ids()])


def single_group(p: RegionPartition) -> GroupAssignment:
    """All regions in one group; only meaningful for single-camera partitions."""
    return GroupAssignment.from_members(p, [tuple(p.region_ids())])


def mask_views(x: ViewTensor, p: RegionPartition, kept, baseline: float = 0.0) -> ViewTensor:
    """Keep the pixels of ``kept`` regions across all channels, set the rest to ``baseline``."""
    if x.shape[0] != p.dims[0] or x.shape[2:] != p.dims[1:]:
        raise ArgumentError(f"tensor {x.shape} does not match partition {p.dims}")
    keep = p.pixel_mask(kept)
    return ViewTensor(np.where(keep[:, None, :, :], x.data, np.float32(baseline)))


def save_partition(p: RegionPartition, path) -> None:
    """Write ``<path>.json`` (region table) and ``<path>.labels.mvtn`` (int32 label map)."""
    path = Path(path)
    label_file = path.with_suffix(".labels.mvtn")
    write_tensor(p.labels.astype(np.int32), label_file)
    doc = {"dims": list(p.dims), "label_map": label_file.name, "regions": p.table()}
    path.with_suffix(".json").write_text(json.dumps(doc, indent=1) + "\n")


def load_partition(path) -> RegionPartition:
    path = Path(path).with_suffix(".json")
    doc = json.loads(path.read_text())
    labels = read_tensor(path.parent / doc["label_map"])
    p = RegionPartition.from_labels(labels)
    if p.n_regions != len(doc["regions"]):
        raise ValidationError(f"{path}: region table lists {len(doc['regions'])} regions, label map has {p.n_regions}")
    return p
