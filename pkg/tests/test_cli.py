import csv
import json
import subprocess
import sys

import pytest

from planrisk.cli import main
from planrisk.pipeline import STAT_COLUMNS, TABLE_LAYOUT, read_features_csv, write_features_csv


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, attr = root / "data", root / "attr"
    assert main(["synth", "--out", str(data), "--scenes", "5", "--samples-per-scene", "4", "--height", "16",
                 "--width", "16", "--seed", "3"]) == 0
    common = ["--manifest", str(data / "manifest.json"), "--partition", str(data / "partition"),
              "--planners", str(data / "planners.json")]
    for method in ("hier", "rise"):
        assert main(["attribute", *common, "--out", str(attr), "--method", method, "--n-masks", "100"]) == 0
    assert main(["features", "--manifest", str(data / "manifest.json"), "--attributions", str(attr / "hier"),
                 "--out", str(root / "features.csv")]) == 0
    assert main(["fit-eval", "--features", f"toy={root / 'features.csv'}", "--out", str(root / "report"),
                 "--n-boot", "20", "--n-splits", "5"]) == 0
    assert main(["faithfulness", *common, "--attributions", str(attr), "--out", str(root / "faith"),
                 "--n-boot", "20"]) == 0
    return root


def test_report_schema(chain):
    report = json.loads((chain / "report" / "report.json").read_text())
    prov = report["provenance"]
    assert prov["version"] and prov["config_hash"] and "note" in prov
    rep = report["planners"]["toy"]
    assert rep["n_samples"] == 20
    features = [r["feature"] for r in rep["in_domain"]]
    for col in STAT_COLUMNS + ("joint:controls", "joint:stats", "joint:controls+stats"):
        assert col in features
    for table, metrics in TABLE_LAYOUT.items():
        with open(chain / "report" / f"{table}.csv") as fh:
            header = next(csv.reader(fh))
        assert header[-len(metrics):] == [f"toy:{m}" for m in metrics]


def test_attribution_outputs(chain):
    for method in ("hier", "rise"):
        files = sorted(p.name for p in (chain / "attr" / method).iterdir())
        assert "timing.json" in files
        assert sum(f.endswith(".saliency.mvtn") for f in files) == 20
        doc = json.loads((chain / "attr" / method / "scene0000_000.json").read_text())
        assert "seconds" not in doc


def test_faithfulness_report(chain):
    doc = json.loads((chain / "faith" / "faithfulness.json").read_text())
    methods = [row["method"] for row in doc["methods"]]
    assert methods == ["hier", "rise"]
    assert (chain / "faith" / "faithfulness_timing.json").exists()


def test_fit_eval_rerun_is_identical(chain, tmp_path):
    out = tmp_path / "again"
    assert main(["fit-eval", "--features", f"toy={chain / 'features.csv'}", "--out", str(out),
                 "--n-boot", "20", "--n-splits", "5"]) == 0
    for p in (chain / "report").iterdir():
        assert (out / p.name).read_bytes() == p.read_bytes()


def test_config_file_and_override(chain, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"fit-eval": {"n-boot": 5, "n_splits": 3}}))
    assert main(["fit-eval", "--config", str(cfg), "--features", str(chain / "features.csv"),
                 "--out", str(tmp_path / "r"), "--n-splits", "2"]) == 0
    prov = json.loads((tmp_path / "r" / "report.json").read_text())["provenance"]
    assert prov["eval"]["n_boot"] == 5 and prov["eval"]["n_splits"] == 2


def test_features_csv_round_trip(chain, tmp_path):
    fm = read_features_csv(chain / "features.csv")
    write_features_csv(fm, tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_bytes() == (chain / "features.csv").read_bytes()


def test_unknown_flag_exits_2():
    proc = subprocess.run([sys.executable, "-m", "planrisk", "synth", "--bogus"], capture_output=True, text=True)
    assert proc.returncode == 2
    assert "usage" in proc.stderr


def test_missing_input_exits_2(tmp_path, capsys):
    missing = tmp_path / "nope.json"
    assert main(["features", "--manifest", str(missing), "--attributions", str(tmp_path),
                 "--out", str(tmp_path / "f.csv")]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unreachable_endpoint_exits_3(chain, tmp_path):
    data = chain / "data"
    code = main(["attribute", "--manifest", str(data / "manifest.json"), "--partition", str(data / "partition"),
                 "--endpoint", "127.0.0.1:1", "--out", str(tmp_path / "a")])
    assert code == 3


def test_prop_check_command(tmp_path):
    out = tmp_path / "prop.json"
    assert main(["prop-check", "--instances", "10", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["passed"]
