"""Brute-force checks of set-function properties on small ground sets.

Used to verify that grouping a normalized, monotone, submodular function
keeps those properties, and that greedy selection stays within a factor
(1 - 1/e) of the best subset.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ArgumentError

GREEDY_BOUND = 1.0 - 1.0 / math.e
MAX_CHECK = 12
MAX_GREEDY = 16


@dataclass(frozen=True, eq=False)
class CoverageFunction:
    """F(S) = total weight of the elements covered by any member of S."""

    weights: np.ndarray  # (E,)
    covers: np.ndarray  # (n, E) boolean

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        c = np.asarray(self.covers, dtype=bool)
        if c.ndim != 2 or c.shape[1] != len(w):
            raise ArgumentError("covers must be (n_regions, n_elements)")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ArgumentError("element weights must be finite and >= 0")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "covers", c)

    @property
    def n(self):
        return self.covers.shape[0]

    def __call__(self, S) -> float:
        return eval_coverage(self, S)

    @classmethod
    def from_sets(cls, sets, weights):
        weights = np.asarray(weights, dtype=np.float64)
        covers = np.zeros((len(sets), len(weights)), dtype=bool)
        for i, s in enumerate(sets):
            covers[i, list(s)] = True
        return cls(weights, covers)


def eval_coverage(f: CoverageFunction, S) -> float:
    S = list(S)
    if not S:
        return 0.0
    covered = np.any(f.covers[S], axis=0)
    return float(f.weights[covered].sum())


def random_coverage(rng, n_regions, n_elements, density=0.3) -> CoverageFunction:
    covers = rng.random((n_regions, n_elements)) < density
    weights = rng.random(n_elements) * rng.choice([0.1, 1.0, 10.0], size=n_elements)
    return CoverageFunction(weights, covers)


@dataclass
class PropertyReport:
    normalized: bool
    monotone: bool
    submodular: bool
    witnesses: dict = field(default_factory=dict)

    @property
    def ok(self):
        return self.normalized and self.monotone and self.submodular

    def to_json(self):
        return {
            "normalized": self.normalized, "monotone": self.monotone,
            "submodular": self.submodular, "witnesses": self.witnesses,
        }


def _table(F, n):
    vals = np.empty(1 << n)
    for mask in range(1 << n):
        vals[mask] = F(frozenset(i for i in range(n) if mask >> i & 1))
    return vals


def _members(mask, labels):
    return [labels[i] for i in range(len(labels)) if mask >> i & 1]


def check_properties(F, V, tol=1e-9) -> PropertyReport:
    """Exhaustively test normalization, monotonicity and diminishing returns.

    ``F`` is called with frozensets of indices into ``V``. Monotonicity and
    diminishing returns are checked on every cover pair (A, A + g) of the
    subset lattice, which implies them for every A subset of B by chaining.
    The first counterexample found is reported with element labels from V.
    """
    labels = list(V)
    n = len(labels)
    if n > MAX_CHECK:
        raise ArgumentError(f"exhaustive checks are limited to |V| <= {MAX_CHECK}")
    vals = _table(F, n)
    scale = tol * max(1.0, float(np.abs(vals).max()))
    report = PropertyReport(bool(abs(vals[0]) <= scale), True, True)
    if not report.normalized:
        report.witnesses["normalized"] = {"F_empty": float(vals[0])}
    masks = np.arange(1 << n)
    for g in range(n):
        base = masks[(masks >> g & 1) == 0]
        drop = vals[base] - vals[base | (1 << g)]
        bad = np.flatnonzero(drop > scale)
        if bad.size and report.monotone:
            a = int(base[bad[0]])
            report.monotone = False
            report.witnesses["monotone"] = {"A": _members(a, labels), "B": _members(a | 1 << g, labels)}
    for h in range(n):
        for g in range(n):
            if g == h:
                continue
            base = masks[((masks >> g & 1) == 0) & ((masks >> h & 1) == 0)]
            gain_small = vals[base | (1 << h)] - vals[base]
            gain_big = vals[base | (1 << g) | (1 << h)] - vals[base | (1 << g)]
            bad = np.flatnonzero(gain_big - gain_small > scale)
            if bad.size and report.submodular:
                a = int(base[bad[0]])
                report.submodular = False
                report.witnesses["submodular"] = {
                    "A": _members(a, labels), "B": _members(a | 1 << g, labels), "h": labels[h],
                }
    return report


def grouped(F, groups):
    """F_grp(P) = F(union of the groups indexed by P)."""
    groups = [frozenset(g) for g in groups]

    def f_grp(P):
        union = frozenset().union(*(groups[i] for i in P)) if P else frozenset()
        return F(union)

    return f_grp


def check_grouped(F, groups, tol=1e-9) -> PropertyReport:
    if len(groups) > 10:
        raise ArgumentError("grouped checks are limited to 10 groups")
    return check_properties(grouped(F, groups), range(len(groups)), tol)


def greedy_select(F, n, budget):
    """Marginal-gain greedy over indices 0..n-1, ties to the lowest index."""
    chosen, value = [], F(frozenset())
    for _ in range(min(budget, n)):
        best, best_val = None, -math.inf
        for v in range(n):
            if v in chosen:
                continue
            val = F(frozenset(chosen + [v]))
            if val > best_val:
                best, best_val = v, val
        chosen.append(best)
        value = best_val
    return chosen, value


@dataclass(frozen=True)
class GreedyRatio:
    greedy: float
    optimum: float
    ratio: float
    chosen: tuple
    best: tuple


def greedy_ratio(F, n, budget) -> GreedyRatio:
    """Greedy value against the exhaustive optimum over subsets of size <= budget."""
    if n > MAX_GREEDY:
        raise ArgumentError(f"brute-force optimum is limited to {MAX_GREEDY} elements")
    chosen, g_val = greedy_select(F, n, budget)
    opt, best = F(frozenset()), ()
    for k in range(1, min(budget, n) + 1):
        for combo in itertools.combinations(range(n), k):
            v = F(frozenset(combo))
            if v > opt:
                opt, best = v, combo
    ratio = 1.0 if opt == 0 else g_val / opt
    return GreedyRatio(g_val, opt, ratio, tuple(chosen), tuple(best))
