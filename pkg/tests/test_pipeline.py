import math

import numpy as np
import pytest

from planrisk.core import SaliencyTensor
from planrisk.fit import FeatureMatrix
from planrisk.pipeline import (FEATURE_COLUMNS, STAT_COLUMNS, EvalConfig, build_features, config_hash, evaluate,
                               fit_eval_report, read_features_csv, write_features_csv, write_report)
from planrisk.planner import ModularPlannerSpec


@pytest.fixture(scope="module")
def features(small_dataset):
    m = small_dataset.manifest
    sal, preds = {}, {}
    for k, s in enumerate(m.samples()):
        data = np.zeros((m.cameras, m.height, m.width), np.float32)
        if k != 0:
            data[k % m.cameras, : k % 7 + 1, :3] = 1.0
        sal[s.sample_id] = SaliencyTensor(data)
        preds[s.sample_id] = ModularPlannerSpec.from_json(small_dataset.planners[s.sample_id]).base
    return build_features(m, sal, preds)


def test_columns_and_missing_flag(features):
    assert features.columns == FEATURE_COLUMNS
    first = dict(zip(features.columns, features.values[0]))
    assert first["stats_missing"] == 1.0 and all(math.isnan(first[c]) for c in STAT_COLUMNS)
    assert np.all(features.column("stats_missing")[1:] == 0.0)
    # a single-camera saliency has Gini (C-1)/C
    assert np.allclose(features.column("gini_cam")[1:], 5 / 6)


def test_ade_of_full_output_matches_noise(small_dataset, features):
    for k, s in enumerate(small_dataset.manifest.samples()):
        base = np.array(small_dataset.planners[s.sample_id]["base"])
        assert features.column("ade")[k] == pytest.approx(np.linalg.norm(base - s.gt_trajectory, axis=1).mean())


def test_csv_round_trip_keeps_nan(features, tmp_path):
    write_features_csv(features, tmp_path / "f.csv")
    back = read_features_csv(tmp_path / "f.csv")
    assert back.sample_ids == features.sample_ids
    assert np.array_equal(back.values, features.values, equal_nan=True)


def test_evaluate_fields_and_signs(features):
    rep = evaluate(features, EvalConfig(n_boot=10, n_splits=4))
    assert rep["n_samples"] == 20 and rep["n_scenes"] == 5
    assert rep["missing_stats"] == 1
    for name, sign in (("H", -1.0), ("sigma_sp2", -1.0), ("gini_cam", 1.0)):
        assert rep["signs"][f"{name}:rho_ade"] == sign
    row = next(r for r in rep["in_domain"] if r["feature"] == "H")
    assert row["n"] == 19
    assert [t["k"] for t in rep["triage"]] == [5, 10, 20]


def test_control_sign_follows_training_rows():
    rng = np.random.default_rng(0)
    n = 40
    x = rng.normal(size=n)
    ade = -x + 0.1 * rng.normal(size=n)
    vals = np.zeros((n, len(FEATURE_COLUMNS)))
    cols = list(FEATURE_COLUMNS)
    vals[:, cols.index("n_obj")] = x
    vals[:, cols.index("ade")] = ade
    vals[:, cols.index("collision")] = (ade > np.quantile(ade, 0.8)).astype(float)
    vals[:, cols.index("H")] = rng.normal(size=n)
    fm = FeatureMatrix(tuple(f"s{i:02d}" for i in range(n)), tuple(f"c{i % 8}" for i in range(n)),
                       FEATURE_COLUMNS, vals)
    rep = evaluate(fm, EvalConfig(n_boot=10, n_splits=4))
    assert rep["signs"]["n_obj:rho_ade"] == -1.0
    row = next(r for r in rep["in_domain"] if r["feature"] == "n_obj")
    assert row["rho_ade"] > 0.9


def test_report_is_deterministic(features, tmp_path):
    cfg = EvalConfig(n_boot=10, n_splits=4)
    a = write_report(fit_eval_report({"p": features}, cfg, {"seed": 0}), tmp_path / "a")
    b = write_report(fit_eval_report({"p": features}, cfg, {"seed": 0}), tmp_path / "b")
    for x, y in zip(a, b):
        assert x.read_bytes() == y.read_bytes()
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
