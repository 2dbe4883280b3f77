"""Insertion/deletion faithfulness of a region ordering."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .attribution import Objective, ObjectiveConfig
from .errors import ArgumentError

S_HIGH_RULE = "mean of the top ceil(10%) planning scores along the insertion curve"


@dataclass(frozen=True, eq=False)
class FaithfulnessResult:
    insertion_auc: float
    deletion_auc: float
    s_high: float
    insertion_curve: np.ndarray
    deletion_curve: np.ndarray
    fractions: np.ndarray


def complete_ordering(ordering, n_regions):
    """Attribution order followed by the unranked regions in id order."""
    seen = []
    mark = set()
    for r in ordering:
        r = int(r)
        if r in mark:
            raise ArgumentError(f"region {r} appears twice in the ordering")
        if not 0 <= r < n_regions:
            raise ArgumentError(f"region {r} outside the partition")
        mark.add(r)
        seen.append(r)
    return seen + [r for r in range(n_regions) if r not in mark]


def trapezoid(y, x) -> float:
    y, x = np.asarray(y, dtype=np.float64), np.asarray(x, dtype=np.float64)
    return float(np.sum((y[1:] + y[:-1]) * np.diff(x)) / 2)


def s_high(insertion_curve, frac=0.1) -> float:
    vals = np.sort(np.asarray(insertion_curve, dtype=np.float64))[::-1]
    k = max(1, math.ceil(frac * len(vals)))
    return float(vals[:k].mean())


def insertion_deletion(h, x, p, ordering, cfg: ObjectiveConfig | None = None,
                       objective_ctx: Objective | None = None) -> FaithfulnessResult:
    """Planning-score curves as regions are inserted into / deleted from the input.

    Insertion grows the kept set from empty in attribution order; deletion
    removes regions from the full set in the same order. Both curves have
    |V| + 1 points on a fraction axis and are integrated with the trapezoid
    rule.
    """
    obj = objective_ctx or Objective(h, x, p, cfg)
    order = complete_ordering(ordering, p.n_regions)
    n = p.n_regions
    ins, dele = [], []
    mask = np.zeros(n, dtype=bool)
    ins.append(mask.copy())
    dele.append(~mask)
    for r in order:
        mask[r] = True
        ins.append(mask.copy())
        dele.append(~mask)
    scores = obj.planning_scores(ins + dele)
    ins_s, del_s = scores[: n + 1], scores[n + 1:]
    frac = np.arange(n + 1) / n
    return FaithfulnessResult(
        insertion_auc=trapezoid(ins_s, frac),
        deletion_auc=trapezoid(del_s, frac),
        s_high=s_high(ins_s),
        insertion_curve=ins_s,
        deletion_curve=del_s,
        fractions=frac,
    )
