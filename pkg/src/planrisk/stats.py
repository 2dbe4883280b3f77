"""Distributional statistics of a multi-camera saliency tensor.

The absolute saliency is normalised into a joint distribution over
(camera, row, col). Three scalars summarise it: entropy in nats, the
camera-mass-weighted within-camera spatial variance (pixels^2), and the Gini
coefficient of the per-camera masses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import SaliencyTensor
from .errors import ZeroMassError


@dataclass(frozen=True)
class SaliencyDistribution:
    joint: np.ndarray  # (C, H, W), sums to 1
    p_cam: np.ndarray  # (C,)
    masses: np.ndarray  # unnormalised per-camera mass m_c

    def conditional(self, c):
        """Spatial distribution within camera ``c`` (None when it has no mass)."""
        if self.p_cam[c] == 0:
            return None
        return self.joint[c] / self.p_cam[c]


@dataclass(frozen=True)
class AttributionStats:
    entropy: float
    spatial_variance: float
    gini_cam: float
    camera_masses: tuple
    p_cam: tuple


def _as_array(t):
    data = t.data if isinstance(t, SaliencyTensor) else t
    return np.abs(np.asarray(data, dtype=np.float64))


def normalize_saliency(t) -> SaliencyDistribution:
    m = _as_array(t)
    total = m.sum()
    if not total > 0:
        raise ZeroMassError("saliency tensor has zero total mass")
    masses = m.sum(axis=(1, 2))
    joint = m / total
    return SaliencyDistribution(joint=joint, p_cam=masses / total, masses=masses)


def entropy(p) -> float:
    """Shannon entropy in nats with 0 log 0 = 0."""
    p = np.asarray(p, dtype=np.float64).ravel()
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def attribution_entropy(dist: SaliencyDistribution) -> float:
    return entropy(dist.joint)


def weighted_spread(points_per_camera, weights_per_camera) -> float:
    """Mass-weighted mean squared distance to each camera's centroid.

    Each camera contributes its own weighted second moment about its
    weighted centroid; cameras are combined with weights proportional to
    their total mass. Cameras with zero mass contribute nothing.
    """
    masses = np.array([np.sum(w) for w in weights_per_camera], dtype=np.float64)
    total = masses.sum()
    if not total > 0:
        raise ZeroMassError("no camera carries mass")
    out = 0.0
    for pts, w, m in zip(points_per_camera, weights_per_camera, masses):
        if m == 0:
            continue
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2)
        w = np.asarray(w, dtype=np.float64).ravel() / m
        centroid = w @ pts
        out += (m / total) * float(w @ np.sum((pts - centroid) ** 2, axis=1))
    return out


def spatial_variance(t, normalized_coords=False) -> float:
    """Within-camera spatial variance; coordinates are (row, col) pixel indices.

    ``normalized_coords`` divides rows by H and columns by W first.
    """
    m = _as_array(t)
    c, h, w = m.shape
    rr, cc = np.indices((h, w), dtype=np.float64)
    if normalized_coords:
        rr, cc = rr / h, cc / w
    coords = np.stack([rr.ravel(), cc.ravel()], axis=1)
    return weighted_spread([coords] * c, [m[i].ravel() for i in range(c)])


def gini(masses) -> float:
    """Mean absolute pairwise difference over ordered pairs, / (2 C sum)."""
    m = np.asarray(masses, dtype=np.float64)
    total = m.sum()
    if not total > 0:
        raise ZeroMassError("Gini of an all-zero vector is undefined")
    return float(np.abs(m[:, None] - m[None, :]).sum() / (2 * len(m) * total))


gini_cameras = gini


def attribution_stats(t, normalized_coords=False) -> AttributionStats:
    dist = normalize_saliency(t)
    return AttributionStats(
        entropy=attribution_entropy(dist),
        spatial_variance=spatial_variance(t, normalized_coords),
        gini_cam=gini(dist.masses),
        camera_masses=tuple(float(v) for v in dist.masses),
        p_cam=tuple(float(v) for v in dist.p_cam),
    )


def entropy_decomposition(dist: SaliencyDistribution):
    """(H(camera), sum_c p_cam(c) H(space | c)); they add up to the joint entropy."""
    h_cam = entropy(dist.p_cam)
    h_cond = sum(
        dist.p_cam[c] * entropy(dist.conditional(c)) for c in range(len(dist.p_cam)) if dist.p_cam[c] > 0
    )
    return h_cam, float(h_cond)


def sign_align(stats: AttributionStats):
    """Risk-aligned triple: lower entropy and variance, higher Gini mean more risk."""
    return (-stats.entropy, -stats.spatial_variance, stats.gini_cam)
