"""Black-box planner handles and the synthetic planners used as oracles.

A planner maps a camera tensor to a (T, 2) float64 trajectory. Synthetic
planners have planted per-region offsets: on an input where the regions
outside S are masked they return ``base - sum_{r not in S} w_r``. They take
the kept region set as a side channel so the algebra holds exactly for any
baseline value; without it they recover the kept set from the pixels.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ViewTensor, as_trajectory
from .errors import ArgumentError, PlannerError, ValidationError


@dataclass(frozen=True, eq=False)
class ModularPlannerSpec:
    """Base trajectory plus one (T, 2) offset per region id.

    ``cap`` switches on saturation: the summed offset at each waypoint is
    clamped to Euclidean norm ``cap`` before it is subtracted.
    """

    base: np.ndarray  # (T, 2)
    offsets: np.ndarray  # (N, T, 2)
    cap: float | None = None
    input_shape: tuple | None = None

    def __post_init__(self):
        base = as_trajectory(self.base)
        offsets = np.array(self.offsets, dtype=np.float64)
        if offsets.ndim != 3 or offsets.shape[1:] != base.shape:
            raise ValidationError(f"offsets shape {offsets.shape} does not match base {base.shape}")
        if not np.all(np.isfinite(offsets)):
            raise ValidationError("planner offsets must be finite")
        if self.cap is not None and not (np.isfinite(self.cap) and self.cap > 0):
            raise ValidationError("saturation cap must be finite and positive")
        base.setflags(write=False)
        offsets.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "offsets", offsets)
        if self.input_shape is not None:
            object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))

    @property
    def horizon(self):
        return self.base.shape[0]

    @property
    def n_regions(self):
        return self.offsets.shape[0]

    @property
    def kind(self):
        return "synthetic-modular" if self.cap is None else "synthetic-saturating"

    def to_json(self):
        nz = np.flatnonzero(np.any(self.offsets != 0, axis=(1, 2)))
        return {
            "kind": self.kind,
            "base": self.base.tolist(),
            "n_regions": self.n_regions,
            "offsets": {str(int(r)): self.offsets[r].tolist() for r in nz},
            "cap": self.cap,
            "input_shape": list(self.input_shape) if self.input_shape else None,
        }

    @classmethod
    def from_json(cls, d):
        base = np.array(d["base"], dtype=np.float64)
        offsets = np.zeros((int(d["n_regions"]),) + base.shape)
        for r, w in d.get("offsets", {}).items():
            offsets[int(r)] = w
        return cls(base=base, offsets=offsets, cap=d.get("cap"), input_shape=d.get("input_shape"))


def SaturatingPlannerSpec(base, offsets, cap, input_shape=None) -> ModularPlannerSpec:
    return ModularPlannerSpec(base=base, offsets=offsets, cap=cap, input_shape=input_shape)


def load_planner_specs(path) -> dict:
    """Read a ``{sample_id: spec}`` JSON file written by the synthetic generator."""
    doc = json.loads(Path(path).read_text())
    return {sid: ModularPlannerSpec.from_json(d) for sid, d in doc.items()}


class PlannerHandle:
    """Common surface of every planner backend.

    Subclasses implement ``_plan``. ``calls`` counts every trajectory
    produced, which is what the attribution cost accounting checks.
    """

    kind = "abstract"

    def __init__(self, horizon=None, max_in_flight=1):
        if horizon is not None and horizon < 1:
            raise ArgumentError("horizon must be >= 1")
        if max_in_flight < 1:
            raise ArgumentError("max_in_flight must be >= 1")
        self.horizon = horizon
        self.max_in_flight = max_in_flight
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def calls(self):
        return self._calls

    def reset_calls(self):
        with self._lock:
            self._calls = 0

    def _count(self, n=1):
        with self._lock:
            self._calls += n

    def _plan(self, x: ViewTensor, kept):
        raise NotImplementedError

    def plan(self, x: ViewTensor, kept=None) -> np.ndarray:
        """Trajectory for one input. ``kept`` is ignored by external backends."""
        traj = self._plan(x, kept)
        self._count()
        return traj

    def plan_batch(self, xs, kept=None) -> list:
        """Plan every input, preserving order; up to ``max_in_flight`` run at once."""
        xs = list(xs)
        if not xs:
            raise ArgumentError("plan_batch needs at least one input")
        kept = [None] * len(xs) if kept is None else list(kept)

        def one(i):
            try:
                return self.plan(xs[i], kept[i])
            except Exception as exc:  # noqa: BLE001 - re-raised with the index
                raise PlannerError(f"batch element {i} failed: {exc}", index=i) from exc

        if self.max_in_flight == 1 or len(xs) == 1:
            return [one(i) for i in range(len(xs))]
        with ThreadPoolExecutor(max_workers=min(self.max_in_flight, len(xs))) as pool:
            return list(pool.map(one, range(len(xs))))

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class SyntheticPlanner(PlannerHandle):
    """In-process planner driven by a :class:`ModularPlannerSpec`.

    With a ``partition`` attached, calls without a kept set infer it from the
    pixels: a region survives when any of its values differs from
    ``baseline``. That is the path an external server has to take.
    """

    def __init__(self, spec: ModularPlannerSpec, partition=None, baseline=0.0, max_in_flight=1):
        super().__init__(horizon=spec.horizon, max_in_flight=max_in_flight)
        if partition is not None and partition.n_regions != spec.n_regions:
            raise ArgumentError(
                f"partition has {partition.n_regions} regions, planner spec {spec.n_regions}"
            )
        self.spec = spec
        self.partition = partition
        self.baseline = baseline
        self.kind = spec.kind

    def infer_kept(self, x: ViewTensor) -> np.ndarray:
        p = self.partition
        differs = np.any(x.data != np.float32(self.baseline), axis=1)
        return np.bincount(p.labels.ravel(), weights=differs.ravel(), minlength=p.n_regions) > 0

    def _plan(self, x: ViewTensor, kept):
        spec = self.spec
        if spec.input_shape is not None and tuple(x.shape) != spec.input_shape:
            raise ArgumentError(f"input shape {x.shape} != planner input shape {spec.input_shape}")
        if kept is None:
            if self.partition is None:
                return spec.base.copy()
            keep = self.infer_kept(x)
        elif isinstance(kept, np.ndarray) and kept.dtype == bool:
            keep = kept
        else:
            keep = np.zeros(spec.n_regions, dtype=bool)
            keep[list(kept)] = True
        removed = spec.offsets[~keep]
        shift = removed.sum(axis=0) if len(removed) else np.zeros_like(spec.base)
        if spec.cap is not None:
            norms = np.linalg.norm(shift, axis=1, keepdims=True)
            scale = np.where(norms > spec.cap, spec.cap / np.maximum(norms, 1e-300), 1.0)
            shift = shift * scale
        return spec.base - shift
