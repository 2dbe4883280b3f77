"""Hierarchical attribution vs random masks on planted synthetic planners.

    python3 demos/planted_recovery.py [n_samples]
"""

import sys
import tempfile

import numpy as np

from planrisk import (SynthSpec, SyntheticPlanner, generate, group_regions, hierarchical_attribute,
                      insertion_deletion, recovery_score, rise_attribute, score_ordering)
from planrisk.planner import ModularPlannerSpec


def main(n=20):
    with tempfile.TemporaryDirectory() as tmp:
        ds = generate(SynthSpec(scenes=max(1, n // 2), samples_per_scene=2, profile="concentrated", seed=1), tmp)
        p = ds.partition
        groups = group_regions(p, 2, 2)
        print(f"{p.n_regions} regions in {groups.n_groups} groups")
        print(f"{'sample':<16}{'hier rec':>9}{'rise rec':>9}{'hier ins':>9}{'rise ins':>9}{'calls':>7}")
        rows = []
        for s in ds.manifest.samples():
            spec = ModularPlannerSpec.from_json(ds.planners[s.sample_id])
            x = ds.manifest.load_tensor(s)
            h = SyntheticPlanner(spec, p)
            hr = hierarchical_attribute(h, x, p, groups)
            rr = rise_attribute(h, x, p, n_masks=hr.planner_calls - 2)
            truth = ds.planted[s.sample_id]
            row = (recovery_score(hr, truth), recovery_score(rr, truth),
                   insertion_deletion(h, x, p, score_ordering(hr)).insertion_auc,
                   insertion_deletion(h, x, p, score_ordering(rr)).insertion_auc)
            rows.append(row)
            print(f"{s.sample_id:<16}" + "".join(f"{v:9.3f}" for v in row) + f"{hr.planner_calls:7d}")
        med = np.median(np.array(rows), axis=0)
        print(f"{'median':<16}" + "".join(f"{v:9.3f}" for v in med))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
