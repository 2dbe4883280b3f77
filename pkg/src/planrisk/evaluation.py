"""Rank metrics, scene-clustered resampling and high-risk triage."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ArgumentError


def spearman(a, b) -> float | None:
    """Pearson correlation of mid-ranks; None when either side is constant."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1 or len(a) < 2:
        raise ArgumentError("spearman needs two equal-length vectors of length >= 2")
    ra, rb = rankdata(a), rankdata(b)
    ra -= ra.mean()
    rb -= rb.mean()
    denom = math.sqrt(float(ra @ ra) * float(rb @ rb))
    if denom == 0:
        return None
    return float(np.clip((ra @ rb) / denom, -1.0, 1.0))


def auroc(scores, labels) -> float | None:
    """Mann-Whitney AUROC, (concordant + 0.5 tied) / (pos * neg); None for one class."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    if s.shape != y.shape:
        raise ArgumentError("scores and labels differ in length")
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(s)
    # rank sums of mid-ranks are exact half-integers, so U is exact
    u = ranks[y].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


@dataclass(frozen=True)
class BootstrapResult:
    point: float | None
    half_width: float | None
    values: tuple
    undefined: int
    flagged: bool


def scene_bootstrap(metric, scene_ids, n_boot=100, confidence=0.95, seed=0) -> BootstrapResult:
    """Resample whole scenes with replacement and recompute ``metric``.

    ``metric`` receives an integer index array into the samples (duplicates
    allowed) and returns a float or None. The half-width is half the central
    ``confidence`` quantile range of the resampled values. Results are
    flagged when more than 20% of the resamples are undefined.
    """
    scene_ids = np.asarray(scene_ids)
    scenes, inverse = np.unique(scene_ids, return_inverse=True)
    if len(scenes) < 2:
        raise ArgumentError("scene bootstrap needs at least 2 scenes")
    members = [np.flatnonzero(inverse == k) for k in range(len(scenes))]
    point = metric(np.arange(len(scene_ids)))
    rng = np.random.default_rng(seed)
    vals, undefined = [], 0
    for _ in range(n_boot):
        pick = rng.integers(0, len(scenes), size=len(scenes))
        idx = np.concatenate([members[k] for k in pick])
        v = metric(idx)
        if v is None or not np.isfinite(v):
            undefined += 1
        else:
            vals.append(float(v))
    flagged = undefined > 0.2 * n_boot
    if vals:
        lo, hi = np.quantile(vals, [(1 - confidence) / 2, 1 - (1 - confidence) / 2])
        half = float(hi - lo) / 2
    else:
        half = None
    return BootstrapResult(point, half, tuple(vals), undefined, flagged)


def half_width(values, confidence=0.95) -> float | None:
    vals = [v for v in values if v is not None]
    if not vals:
        return None
    lo, hi = np.quantile(vals, [(1 - confidence) / 2, 1 - (1 - confidence) / 2])
    return float(hi - lo) / 2


def scene_splits(scenes, train_frac=0.8, n_splits=20, seed=0):
    """Random scene-level train/test partitions, ``round(train_frac * n)`` train scenes."""
    scenes = list(dict.fromkeys(scenes))
    n = len(scenes)
    if n < 2:
        raise ArgumentError("scene splits need at least 2 scenes")
    n_train = min(n - 1, max(1, int(math.floor(train_frac * n + 0.5))))
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n_splits):
        perm = rng.permutation(n)
        train = tuple(scenes[i] for i in sorted(perm[:n_train]))
        test = tuple(scenes[i] for i in sorted(perm[n_train:]))
        out.append((train, test))
    return out


def _top_fraction(values, ids, frac):
    n = len(values)
    k = int(math.floor(frac * n + 0.5))
    order = sorted(range(n), key=lambda i: (-values[i], ids[i]))
    return set(order[:k])


@dataclass(frozen=True)
class TriageResult:
    recall: float
    precision: float
    positives: int
    selected: int
    flagged: bool


def triage(scores, ade_values, k_percent, sample_ids=None, positive_percent=10.0) -> TriageResult:
    """Recall and precision of the score-top-k% against the ADE-top-10%.

    Both top sets break ties by sample id. Fewer than 10 samples are flagged.
    """
    if not 0 < k_percent < 100:
        raise ArgumentError("budget k must lie strictly between 0 and 100 percent")
    scores = np.asarray(scores, dtype=np.float64)
    ade_values = np.asarray(ade_values, dtype=np.float64)
    n = len(scores)
    ids = list(sample_ids) if sample_ids is not None else list(range(n))
    pos = _top_fraction(ade_values, ids, positive_percent / 100)
    sel = _top_fraction(scores, ids, k_percent / 100)
    hit = len(pos & sel)
    recall = hit / len(pos) if pos else float("nan")
    precision = hit / len(sel) if sel else float("nan")
    return TriageResult(recall, precision, len(pos), len(sel), n < 10)


def random_triage_baseline(k_percent, positive_percent=10.0):
    """Expected (recall, precision) of uniformly random selection."""
    return k_percent / 100.0, positive_percent / 100.0


def top_fraction_labels(values, frac, ids=None):
    """Boolean labels marking the top ``frac`` of ``values`` (ties by id)."""
    ids = list(ids) if ids is not None else list(range(len(values)))
    top = _top_fraction(np.asarray(values, dtype=np.float64), ids, frac)
    return np.array([i in top for i in range(len(values))])
