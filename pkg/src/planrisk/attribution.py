"""Sufficiency/necessity region attribution for trajectory planners.

Three search engines share one objective::

    F(S) = lam_suf * -||y(S) - y|| + lam_nec * ||y(V \\ S) - y||

where ``y(S)`` is the planner output with every region outside ``S`` masked
to a baseline and norms are flat L2 over all waypoint coordinates.

* :func:`exact_greedy` ranks every region by marginal gain.
* :func:`hierarchical_attribute` ranks coarse groups first, then ranks the
  members of each group conditioned on all groups ranked before it.
* :func:`rise_attribute` is the search-free random-mask baseline.
"""

from __future__ import annotations

import json
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import SaliencyTensor, ViewTensor, read_tensor, write_tensor
from .errors import ArgumentError, SearchAborted
from .partition import GroupAssignment, RegionPartition, mask_views
from .planner import PlannerHandle

RISE_SCORE_RULE = "s = max(0, 1 - ||y(S) - y|| / ||y(empty) - y||); s = 1 when the denominator is 0"

# masked tensors are materialised in chunks of this many planner queries
_CHUNK = 64


@dataclass(frozen=True)
class ObjectiveConfig:
    lambda_suf: float = 1.0
    lambda_nec: float = 1.0
    baseline: float = 0.0

    def __post_init__(self):
        if self.lambda_suf < 0 or self.lambda_nec < 0 or self.lambda_suf + self.lambda_nec <= 0:
            raise ArgumentError("objective weights must be >= 0 with a positive sum")


@dataclass(frozen=True)
class SearchConfig:
    """Search budgets.

    ``budget`` caps the number of regions in the final ordering (None: all),
    ``coarse_budget`` the number of groups ranked by the coarse stage (None:
    all groups), ``refine_budget`` the members ranked per group.
    """

    budget: int | None = None
    coarse_budget: int | None = None
    refine_budget: int | None = None
    seed: int = 0
    early_stop_negative: bool = False
    area_normalize: bool = False
    jobs: int = 1

    def __post_init__(self):
        for name in ("budget", "coarse_budget", "refine_budget"):
            v = getattr(self, name)
            if v is not None and v < 1:
                raise ArgumentError(f"{name} must be >= 1")
        if self.jobs < 1:
            raise ArgumentError("jobs must be >= 1")


@dataclass(frozen=True)
class OrderedSelection:
    regions: tuple
    gains: tuple
    calls: tuple  # planner calls spent on each step

    def __len__(self):
        return len(self.regions)


@dataclass(frozen=True, eq=False)
class AttributionResult:
    selection: OrderedSelection
    saliency: SaliencyTensor
    seconds: float
    planner_calls: int
    method: str
    metadata: dict = field(default_factory=dict)


class Objective:
    """Objective evaluator bound to one sample.

    The full-input trajectory and the all-masked trajectory are planned once
    and cached (two calls); after that every :meth:`values` entry costs two
    planner calls and every :meth:`planning_scores` entry one.
    """

    def __init__(self, planner: PlannerHandle, x: ViewTensor, p: RegionPartition,
                 cfg: ObjectiveConfig | None = None):
        self.planner = planner
        self.x = x
        self.p = p
        self.cfg = cfg or ObjectiveConfig()
        self.n = p.n_regions
        self._calls = 0
        self._lock = threading.Lock()
        self._full = None
        self._empty = None

    @property
    def calls(self):
        return self._calls

    def _trajectories(self, masks):
        out = []
        for start in range(0, len(masks), _CHUNK):
            chunk = masks[start:start + _CHUNK]
            xs = [mask_views(self.x, self.p, m, self.cfg.baseline) for m in chunk]
            out.extend(self.planner.plan_batch(xs, kept=chunk))
            with self._lock:
                self._calls += len(chunk)
        return out

    def _anchors(self):
        if self._full is None:
            everything = np.ones(self.n, dtype=bool)
            full, empty = self._trajectories([everything, ~everything])
            self._full, self._empty = full, empty
        return self._full, self._empty

    @property
    def y_full(self):
        return self._anchors()[0]

    @property
    def empty_deviation(self):
        full, empty = self._anchors()
        return float(np.linalg.norm((empty - full).ravel()))

    def deviations(self, masks):
        full = self.y_full
        return np.array([np.linalg.norm((t - full).ravel()) for t in self._trajectories(masks)])

    def mask(self, subset):
        return self.p.kept_mask(subset).copy()

    def empty_value(self):
        """F of the empty set from the cached anchors (y(V) is y by construction)."""
        return -self.cfg.lambda_suf * self.empty_deviation

    def values(self, masks):
        masks = [np.asarray(m, dtype=bool) for m in masks]
        if not masks:
            return np.zeros(0)
        paired = []
        for m in masks:
            paired.extend((m, ~m))
        dev = self.deviations(paired).reshape(-1, 2)
        return -self.cfg.lambda_suf * dev[:, 0] + self.cfg.lambda_nec * dev[:, 1]

    def planning_scores(self, masks):
        d0 = self.empty_deviation
        dev = self.deviations([np.asarray(m, dtype=bool) for m in masks])
        if d0 == 0.0:
            return np.ones(len(dev))
        return np.maximum(0.0, 1.0 - dev / d0)


def suff_score(h, x, p, S, cfg: ObjectiveConfig | None = None) -> float:
    obj = Objective(h, x, p, cfg)
    return -float(obj.deviations([obj.mask(S)])[0])


def nec_score(h, x, p, S, cfg: ObjectiveConfig | None = None) -> float:
    obj = Objective(h, x, p, cfg)
    return float(obj.deviations([~obj.mask(S)])[0])


def objective(h, x, p, S, cfg: ObjectiveConfig | None = None) -> float:
    obj = Objective(h, x, p, cfg)
    return float(obj.values([obj.mask(S)])[0])


def _greedy(obj: Objective, units, prefix, prefix_value, steps, early_stop=False):
    """Marginal-gain greedy over ``units`` (boolean region masks).

    Returns (chosen unit indices, gains, calls per step, objective values
    after each step). Ties go to the lowest unit index.
    """
    remaining = list(range(len(units)))
    current, value = prefix.copy(), prefix_value
    chosen, gains, calls, values = [], [], [], []
    for step in range(steps):
        if not remaining:
            break
        try:
            vals = obj.values([current | units[u] for u in remaining])
        except Exception as exc:
            raise SearchAborted(
                f"planner failed at greedy step {step}: {exc}",
                steps_completed=step, planner_calls=obj.calls,
            ) from exc
        k = int(np.argmax(vals))
        gain = float(vals[k] - value)
        if early_stop and gain < 0:
            break
        u = remaining.pop(k)
        chosen.append(u)
        gains.append(gain)
        calls.append(2 * (len(remaining) + 1))
        current |= units[u]
        value = float(vals[k])
        values.append(value)
    return chosen, gains, calls, values


def _singletons(n, ids):
    units = []
    for r in ids:
        m = np.zeros(n, dtype=bool)
        m[r] = True
        units.append(m)
    return units


def exact_greedy(h, x, p, cfg: ObjectiveConfig | None = None, search: SearchConfig | None = None,
                 objective_ctx: Objective | None = None) -> OrderedSelection:
    """Rank regions one at a time by marginal objective gain.

    With budget K over |V| regions this spends ``sum_{r<K} (|V| - r)``
    objective evaluations (two planner calls each) plus the two cached
    anchor calls.
    """
    search = search or SearchConfig()
    obj = objective_ctx or Objective(h, x, p, cfg)
    k = p.n_regions if search.budget is None else search.budget
    if k > p.n_regions:
        raise ArgumentError(f"budget {k} exceeds {p.n_regions} regions")
    empty = np.zeros(p.n_regions, dtype=bool)
    start = obj.empty_value()
    chosen, gains, calls, _ = _greedy(
        obj, _singletons(p.n_regions, range(p.n_regions)), empty, start, k, search.early_stop_negative
    )
    return OrderedSelection(tuple(chosen), tuple(gains), tuple(calls))


def _saliency(p: RegionPartition, regions, scores, area_normalize=False):
    values = np.zeros(p.n_regions)
    values[list(regions)] = scores
    if area_normalize:
        values = values / p.pixels
    return SaliencyTensor(p.paint(values).astype(np.float32))


def _metadata(method, cfg, search, obj, **extra):
    meta = {
        "method": method,
        "lambda_suf": cfg.lambda_suf,
        "lambda_nec": cfg.lambda_nec,
        "baseline": cfg.baseline,
        "empty_deviation": obj.empty_deviation,
        "regions": obj.n,
        "prediction": obj.y_full.tolist(),
    }
    if search is not None:
        meta.update(
            budget=search.budget, coarse_budget=search.coarse_budget,
            refine_budget=search.refine_budget, seed=search.seed,
            early_stop_negative=search.early_stop_negative, area_normalize=search.area_normalize,
        )
    meta.update(extra)
    return meta


def exact_attribute(h, x, p, cfg: ObjectiveConfig | None = None,
                    search: SearchConfig | None = None) -> AttributionResult:
    cfg, search = cfg or ObjectiveConfig(), search or SearchConfig()
    t0 = time.perf_counter()
    obj = Objective(h, x, p, cfg)
    sel = exact_greedy(h, x, p, cfg, search, objective_ctx=obj)
    sal = _saliency(p, sel.regions, sel.gains, search.area_normalize)
    return AttributionResult(
        sel, sal, time.perf_counter() - t0, obj.calls, "exact", _metadata("exact", cfg, search, obj)
    )


def hierarchical_attribute(h, x, p, g: GroupAssignment, cfg: ObjectiveConfig | None = None,
                           search: SearchConfig | None = None) -> AttributionResult:
    """Coarse-to-fine attribution.

    The coarse stage runs greedy over groups with F applied to the union of
    the chosen groups. Each selected group is then refined on its own: its
    members are ranked greedily with the union of all earlier groups as a
    fixed prefix, so refinements are independent and may run concurrently.
    A region's score is its refinement gain.
    """
    cfg, search = cfg or ObjectiveConfig(), search or SearchConfig()
    if len(g.region_group) != p.n_regions:
        raise ArgumentError("grouping does not cover the partition")
    t0 = time.perf_counter()
    obj = Objective(h, x, p, cfg)
    n = p.n_regions
    group_units = []
    for members in g.members:
        m = np.zeros(n, dtype=bool)
        m[list(members)] = True
        group_units.append(m)
    lc = g.n_groups if search.coarse_budget is None else min(search.coarse_budget, g.n_groups)
    start = obj.empty_value()
    order, coarse_gains, coarse_calls, coarse_values = _greedy(
        obj, group_units, np.zeros(n, dtype=bool), start, lc, search.early_stop_negative
    )

    prefixes, prefix_values = [], []
    acc = np.zeros(n, dtype=bool)
    for j, gid in enumerate(order):
        prefixes.append(acc.copy())
        prefix_values.append(start if j == 0 else coarse_values[j - 1])
        acc |= group_units[gid]

    def refine(j):
        members = g.members[order[j]]
        steps = len(members) if search.refine_budget is None else min(search.refine_budget, len(members))
        chosen, gains, calls, _ = _greedy(
            obj, _singletons(n, members), prefixes[j], prefix_values[j], steps, search.early_stop_negative
        )
        return [members[c] for c in chosen], gains, calls

    if search.jobs > 1 and len(order) > 1:
        with ThreadPoolExecutor(max_workers=search.jobs) as pool:
            refined = list(pool.map(refine, range(len(order))))
    else:
        refined = [refine(j) for j in range(len(order))]

    regions, gains, calls = [], [], []
    for r, gn, cl in refined:
        regions.extend(r)
        gains.extend(gn)
        calls.extend(cl)
    if search.budget is not None:
        regions, gains, calls = regions[: search.budget], gains[: search.budget], calls[: search.budget]
    sel = OrderedSelection(tuple(regions), tuple(gains), tuple(calls))
    sal = _saliency(p, sel.regions, sel.gains, search.area_normalize)
    meta = _metadata(
        "hierarchical", cfg, search, obj,
        groups=g.n_groups,
        coarse_order=[int(o) for o in order],
        coarse_gains=[float(d) for d in coarse_gains],
        coarse_calls=int(sum(coarse_calls)),
    )
    return AttributionResult(sel, sal, time.perf_counter() - t0, obj.calls, "hierarchical", meta)


def rise_attribute(h, x, p, n_masks: int = 500, keep_prob: float = 0.5, seed: int = 0,
                   cfg: ObjectiveConfig | None = None) -> AttributionResult:
    """Random region-mask attribution.

    Each of ``n_masks`` kept-sets keeps every region independently with
    probability ``keep_prob``. A region's importance is the planning score
    summed over the sets containing it, divided by ``n_masks * keep_prob``.
    """
    if n_masks < 1:
        raise ArgumentError("n_masks must be >= 1")
    if not 0.0 < keep_prob < 1.0:
        raise ArgumentError("keep_prob must lie strictly between 0 and 1")
    cfg = cfg or ObjectiveConfig()
    t0 = time.perf_counter()
    obj = Objective(h, x, p, cfg)
    rng = np.random.default_rng(seed)
    masks = rng.random((n_masks, p.n_regions)) < keep_prob
    scores = obj.planning_scores(list(masks))
    importance = (scores @ masks) / (n_masks * keep_prob)
    order = np.lexsort((np.arange(p.n_regions), -importance))
    # no sequential steps: per-step call counts are zero, the total lives on the result
    sel = OrderedSelection(
        tuple(int(r) for r in order), tuple(float(importance[r]) for r in order), (0,) * len(order)
    )
    sal = SaliencyTensor(p.paint(importance).astype(np.float32))
    meta = _metadata(
        "rise", cfg, None, obj, n_masks=n_masks, keep_prob=keep_prob, seed=seed, score_rule=RISE_SCORE_RULE
    )
    return AttributionResult(sel, sal, time.perf_counter() - t0, obj.calls, "rise", meta)


def score_ordering(result: AttributionResult) -> list:
    """Selected regions by descending attribution score, ties kept in selection order."""
    sel = result.selection
    idx = sorted(range(len(sel.regions)), key=lambda i: (-sel.gains[i], i))
    return [int(sel.regions[i]) for i in idx]


def save_result(result: AttributionResult, path, timing: bool = True) -> None:
    """Write ``<path>.saliency.mvtn`` and the ``<path>.json`` sidecar.

    With ``timing=False`` the wall-clock field is left out so that reruns
    produce identical files.
    """
    path = Path(path)
    write_tensor(result.saliency, path.with_suffix(".saliency.mvtn"))
    doc = {
        "method": result.method,
        "regions": [int(r) for r in result.selection.regions],
        "gains": [float(v) for v in result.selection.gains],
        "step_calls": [int(c) for c in result.selection.calls],
        "planner_calls": int(result.planner_calls),
        "metadata": result.metadata,
    }
    if timing:
        doc["seconds"] = result.seconds
    path.with_suffix(".json").write_text(json.dumps(doc, indent=1) + "\n")


def load_result(path) -> AttributionResult:
    path = Path(path)
    doc = json.loads(path.with_suffix(".json").read_text())
    sal = read_tensor(path.with_suffix(".saliency.mvtn"))
    sel = OrderedSelection(tuple(doc["regions"]), tuple(doc["gains"]), tuple(doc["step_calls"]))
    return AttributionResult(sel, sal, doc.get("seconds", float("nan")), doc["planner_calls"], doc["method"], doc["metadata"])


def greedy_call_count(n_regions: int, budget: int) -> int:
    """Planner calls of :func:`exact_greedy`: two anchors plus two per evaluation."""
    if not 0 <= budget <= n_regions:
        raise ArgumentError("budget must lie in [0, n_regions]")
    return 2 + 2 * sum(n_regions - r for r in range(budget))
