"""Command-line entry point: ``planrisk <subcommand> [options]``.

Every option may also come from a JSON ``--config`` file keyed by the option
name (dashes or underscores); flags given on the command line win. Exit
codes: 0 success, 2 invalid input, 3 planner or transport failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import (ObjectiveConfig, SearchConfig, exact_attribute, hierarchical_attribute, load_result,
                          rise_attribute, save_result)
from .core import load_manifest
from .errors import (ArgumentError, DataError, PlannerError, SearchAborted, TransportError, ValidationError,
                     ZeroMassError)
from .partition import grid_partition, group_regions, load_partition, save_partition, slic_partition
from .pipeline import (EvalConfig, build_features, faithfulness_report, faithfulness_rows, fit_eval_report,
                       read_features_csv, write_faithfulness, write_features_csv, write_report)
from .planner import SyntheticPlanner, load_planner_specs
from .protocol import PlannerServer, RemotePlanner, parse_endpoint
from .submodular import GREEDY_BOUND, CoverageFunction, check_grouped, check_properties, greedy_ratio, random_coverage
from .synth import PROFILES, SynthSpec, generate

log = logging.getLogger("planrisk")

METHODS = ("exact", "hier", "rise")

DEFAULTS = {
    "synth": dict(out=None, scenes=10, samples_per_scene=2, cameras=6, channels=3, height=32, width=32, grid=4,
                  profile="mixed", offset_scale=1.0, obstacles=3.0, collision_rate=0.1, noise_scale=0.5,
                  horizon=6, seed=0),
    "partition": dict(manifest=None, out=None, kind="grid", rows=4, cols=4, regions=16, compactness=0.1,
                      iterations=10),
    "attribute": dict(manifest=None, partition=None, planners=None, endpoint=None, out=None, method="hier",
                      group_rows=2, group_cols=2, lambda_suf=1.0, lambda_nec=1.0, baseline=0.0, budget=None,
                      coarse_budget=None, refine_budget=None, n_masks=500, keep_prob=0.5, seed=0, jobs=None),
    "features": dict(manifest=None, attributions=None, out=None, jobs=None),
    "fit-eval": dict(features=None, out=None, ridge_lambda=1.0, logistic_lambda=1.0, n_boot=100, n_splits=20,
                     train_frac=0.8, seed=0),
    "faithfulness": dict(manifest=None, partition=None, planners=None, endpoint=None, attributions=None,
                         methods="hier,rise", out=None, lambda_suf=1.0, lambda_nec=1.0, baseline=0.0, n_boot=100,
                         seed=0, jobs=None),
    "prop-check": dict(out=None, instances=200, max_regions=12, max_elements=20, seed=0),
    "serve-planner": dict(planners=None, sample=None, partition=None, baseline=0.0, host="127.0.0.1", port=0,
                          workers=4),
}
PATH_KEYS = {"out", "manifest", "partition", "planners", "attributions", "features", "config"}


class UsageError(Exception):
    pass


def _jobs(opts):
    j = opts.get("jobs")
    if j is None:
        j = os.environ.get("PLANRISK_JOBS", "1")
    try:
        j = int(j)
    except ValueError:
        raise UsageError(f"jobs must be an integer, got {j!r}") from None
    if j < 1:
        raise UsageError("jobs must be >= 1")
    return j


def _need(opts, *keys):
    for k in keys:
        if opts.get(k) in (None, ""):
            raise UsageError(f"missing required option --{k.replace('_', '-')}")


def _existing(path, what):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} not found: {p}")
    return p


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _provenance_config(cmd, opts, inputs=()):
    """Options minus locations, plus content hashes of the input files."""
    cfg = {k: v for k, v in sorted(opts.items()) if k not in PATH_KEYS and k != "jobs"}
    cfg["command"] = cmd
    cfg["inputs"] = {Path(p).name: _file_digest(p) for p in inputs}
    return cfg


def _parallel(fn, items, jobs):
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(fn, items))
    return [fn(i) for i in items]


def _planner_factory(opts, partition):
    """Return (planner_for(sample_id), closer)."""
    if opts.get("endpoint"):
        host, port = parse_endpoint(opts["endpoint"])
        remote = RemotePlanner(host, port)
        return (lambda sid: remote), remote.close
    _need(opts, "planners")
    specs = load_planner_specs(_existing(opts["planners"], "planner spec file"))

    def make(sid):
        if sid not in specs:
            raise UsageError(f"no planner spec for sample {sid}")
        return SyntheticPlanner(specs[sid], partition, baseline=float(opts.get("baseline", 0.0)))

    return make, (lambda: None)


def _load_partition(opts):
    _need(opts, "partition")
    stem = Path(opts["partition"])
    _existing(stem.with_suffix(".json"), "partition")
    return load_partition(stem)


# --- subcommands ---------------------------------------------------------------


def cmd_synth(opts):
    _need(opts, "out")
    fields = {k: v for k, v in opts.items() if k in SynthSpec.__dataclass_fields__}
    ds = generate(SynthSpec(**fields), opts["out"])
    for f in ds.flags:
        log.warning("%s", f)
    print(f"wrote {ds.manifest.n_samples} samples to {ds.root}")
    return 0


def cmd_partition(opts):
    _need(opts, "manifest", "out")
    m = load_manifest(_existing(opts["manifest"], "manifest"))
    out = Path(opts["out"])
    if opts["kind"] == "grid":
        p = grid_partition((m.cameras, m.height, m.width), int(opts["rows"]), int(opts["cols"]))
        out.parent.mkdir(parents=True, exist_ok=True)
        save_partition(p, out)
        print(f"grid partition with {p.n_regions} regions -> {out.with_suffix('.json')}")
    elif opts["kind"] == "slic":
        out.mkdir(parents=True, exist_ok=True)
        for s in m.samples():
            p = slic_partition(m.load_tensor(s), int(opts["regions"]), float(opts["compactness"]),
                               int(opts["iterations"]))
            save_partition(p, out / s.sample_id)
        print(f"slic partitions for {m.n_samples} samples -> {out}")
    else:
        raise UsageError(f"unknown partition kind {opts['kind']!r}")
    return 0


def _method_dir(root, method):
    return Path(root) / method


def cmd_attribute(opts):
    _need(opts, "manifest", "out")
    method = opts["method"]
    if method not in METHODS:
        raise UsageError(f"method must be one of {METHODS}")
    m = load_manifest(_existing(opts["manifest"], "manifest"))
    p = _load_partition(opts)
    jobs = _jobs(opts)
    cfg = ObjectiveConfig(float(opts["lambda_suf"]), float(opts["lambda_nec"]), float(opts["baseline"]))
    opt_int = lambda k: None if opts.get(k) is None else int(opts[k])  # noqa: E731
    search = SearchConfig(budget=opt_int("budget"), coarse_budget=opt_int("coarse_budget"),
                          refine_budget=opt_int("refine_budget"), seed=int(opts["seed"]))
    groups = group_regions(p, int(opts["group_rows"]), int(opts["group_cols"]))
    planner_for, close = _planner_factory(opts, p)
    out = _method_dir(opts["out"], method)
    out.mkdir(parents=True, exist_ok=True)
    samples = list(m.samples())

    def run(s):
        x = m.load_tensor(s)
        h = planner_for(s.sample_id)
        if method == "exact":
            res = exact_attribute(h, x, p, cfg, search)
        elif method == "hier":
            res = hierarchical_attribute(h, x, p, groups, cfg, search)
        else:
            res = rise_attribute(h, x, p, int(opts["n_masks"]), float(opts["keep_prob"]), int(opts["seed"]), cfg)
        save_result(res, out / s.sample_id, timing=False)
        return s.sample_id, res.seconds, res.planner_calls

    try:
        done = _parallel(run, samples, jobs)
    finally:
        close()
    timing = {sid: {"seconds": sec, "planner_calls": calls} for sid, sec, calls in done}
    (out / "timing.json").write_text(json.dumps(timing, indent=1) + "\n")
    print(f"{method}: {len(done)} attributions -> {out}")
    return 0


def _find_results(root, sample_ids):
    root = _existing(root, "attribution directory")
    found = {}
    for sid in sample_ids:
        if (root / f"{sid}.json").exists():
            found[sid] = load_result(root / sid)
        else:
            raise UsageError(f"attribution missing for sample {sid}: {root / (sid + '.json')}")
    return found


def cmd_features(opts):
    _need(opts, "manifest", "attributions", "out")
    m = load_manifest(_existing(opts["manifest"], "manifest"))
    ids = [s.sample_id for s in m.samples()]
    results = _find_results(opts["attributions"], ids)
    preds = {}
    for sid, r in results.items():
        if "prediction" not in r.metadata:
            raise UsageError(f"attribution for {sid} does not record the planner prediction")
        preds[sid] = np.array(r.metadata["prediction"])
    fm = build_features(m, {sid: r.saliency for sid, r in results.items()}, preds)
    out = Path(opts["out"])
    out.parent.mkdir(parents=True, exist_ok=True)
    write_features_csv(fm, out)
    # synthetic datasets carry synth.json beside the manifest
    source = "synthetic" if (Path(opts["manifest"]).parent / "synth.json").exists() else "manifest"
    _source_file(out).write_text(json.dumps({"source": source}) + "\n")
    print(f"{len(ids)} feature rows -> {out}")
    return 0


def _source_file(features_path):
    p = Path(features_path)
    return p.with_name(p.name + ".source.json")


def _named_paths(value):
    """'a.csv' or 'name=a.csv', comma separated or a list."""
    items = value if isinstance(value, list) else str(value).split(",")
    out = {}
    for item in items:
        name, _, path = item.rpartition("=")
        out[name or Path(path).stem] = path
    return out


def cmd_fit_eval(opts):
    _need(opts, "features", "out")
    named = _named_paths(opts["features"])
    tables = {name: read_features_csv(_existing(path, "feature table")) for name, path in named.items()}
    cfg = EvalConfig(ridge_lambda=float(opts["ridge_lambda"]), logistic_lambda=float(opts["logistic_lambda"]),
                     n_boot=int(opts["n_boot"]), n_splits=int(opts["n_splits"]),
                     train_frac=float(opts["train_frac"]), seed=int(opts["seed"]))
    sources = {}
    for name, path in named.items():
        side = _source_file(path)
        sources[name] = json.loads(side.read_text())["source"] if side.exists() else "unknown"
    report = fit_eval_report(tables, cfg, _provenance_config("fit-eval", opts, named.values()), sources)
    files = write_report(report, opts["out"])
    print(f"report -> {files[0]}")
    return 0


def cmd_faithfulness(opts):
    _need(opts, "manifest", "attributions", "out")
    m = load_manifest(_existing(opts["manifest"], "manifest"))
    p = _load_partition(opts)
    cfg = ObjectiveConfig(float(opts["lambda_suf"]), float(opts["lambda_nec"]), float(opts["baseline"]))
    methods = [s for s in str(opts["methods"]).split(",") if s]
    ids = [s.sample_id for s in m.samples()]
    results, timing = {}, {}
    for method in methods:
        d = _method_dir(opts["attributions"], method)
        results[method] = _find_results(d, ids)
        if (d / "timing.json").exists():
            t = json.loads((d / "timing.json").read_text())
            timing[method] = {"mean_seconds": float(np.mean([v["seconds"] for v in t.values()]))}
    planner_for, close = _planner_factory(opts, p)
    try:
        rows = faithfulness_rows(m, planner_for, p, results, cfg, int(opts["n_boot"]), int(opts["seed"]))
    finally:
        close()
    report = faithfulness_report(rows, _provenance_config("faithfulness", opts, [opts["manifest"]]),
                                 EvalConfig(n_boot=int(opts["n_boot"]), seed=int(opts["seed"])))
    files = write_faithfulness(report, opts["out"], timing)
    print(f"faithfulness -> {files[0]}")
    return 0


def prop_check(instances=200, max_regions=12, max_elements=20, seed=0):
    """Random coverage instances: grouped property checks and greedy ratios."""
    rng = np.random.default_rng(seed)
    worst, failures, grouped_fail = 1.0, [], []
    for i in range(instances):
        n = int(rng.integers(4, max_regions + 1))
        f = random_coverage(rng, n, int(rng.integers(3, max_elements + 1)), float(rng.uniform(0.15, 0.5)))
        budget = int(rng.integers(2, 5))
        gr = greedy_ratio(f, n, budget)
        worst = min(worst, gr.ratio)
        if gr.ratio < GREEDY_BOUND - 1e-12:
            failures.append({"instance": i, "ratio": gr.ratio, "budget": budget})
        n_groups = int(rng.integers(1, min(10, n) + 1))
        labels = np.concatenate([np.arange(n_groups), rng.integers(0, n_groups, n - n_groups)])
        rng.shuffle(labels)
        groups = [np.flatnonzero(labels == g).tolist() for g in range(n_groups)]
        rep = check_grouped(f, groups)
        if not rep.ok:
            grouped_fail.append({"instance": i, "report": rep.to_json()})
    square = check_properties(lambda S: float(len(S) ** 2), range(4))
    plain = check_properties(CoverageFunction.from_sets([{0, 1}, {1, 2}, {2}], [1, 1, 1]), range(3))
    return {
        "instances": instances,
        "bound": GREEDY_BOUND,
        "worst_ratio": worst,
        "ratio_failures": failures,
        "grouped_failures": grouped_fail,
        "passed": not failures and not grouped_fail,
        "examples": {"coverage": plain.to_json(), "square_cardinality": square.to_json()},
    }


def cmd_prop_check(opts):
    report = prop_check(int(opts["instances"]), int(opts["max_regions"]), int(opts["max_elements"]),
                        int(opts["seed"]))
    report["version"] = __version__
    text = json.dumps(report, indent=1) + "\n"
    if opts.get("out"):
        Path(opts["out"]).parent.mkdir(parents=True, exist_ok=True)
        Path(opts["out"]).write_text(text)
    else:
        sys.stdout.write(text)
    return 0 if report["passed"] else 1


def cmd_serve_planner(opts):
    _need(opts, "planners", "sample", "partition")
    p = _load_partition(opts)
    specs = load_planner_specs(_existing(opts["planners"], "planner spec file"))
    if opts["sample"] not in specs:
        raise UsageError(f"no planner spec for sample {opts['sample']}")
    planner = SyntheticPlanner(specs[opts["sample"]], p, baseline=float(opts["baseline"]))
    server = PlannerServer(planner, opts["host"], int(opts["port"]), int(opts["workers"]))
    server.start()
    host, port = server.address
    print(f"serving {opts['sample']} on {host}:{port}", flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        server.stop()
    return 0


COMMANDS = {
    "synth": cmd_synth, "partition": cmd_partition, "attribute": cmd_attribute, "features": cmd_features,
    "fit-eval": cmd_fit_eval, "faithfulness": cmd_faithfulness, "prop-check": cmd_prop_check,
    "serve-planner": cmd_serve_planner,
}

HELP = {
    "synth": "generate a seeded synthetic dataset",
    "partition": "build a grid or SLIC region partition",
    "attribute": "run exact, hierarchical or RISE attribution per sample",
    "features": "tabulate saliency statistics, scene controls and risk labels",
    "fit-eval": "association, held-out transfer and triage report",
    "faithfulness": "insertion / deletion faithfulness report",
    "prop-check": "brute-force submodularity and greedy-bound checks",
    "serve-planner": "serve a synthetic planner over the binary protocol",
}

# flag -> (type, help)
OPTIONS = {
    "out": (str, "output path"), "manifest": (str, "manifest.json path"),
    "partition": (str, "partition file stem (without .json)"), "planners": (str, "planner spec JSON"),
    "endpoint": (str, "external planner host:port"), "attributions": (str, "attribution output directory"),
    "features": (str, "feature CSV(s): path or name=path, comma separated"),
    "method": (str, "exact | hier | rise"), "methods": (str, "comma-separated attribution methods"),
    "kind": (str, "grid | slic"), "profile": (str, "|".join(PROFILES)), "sample": (str, "sample id"),
    "host": (str, "bind address"), "jobs": (int, "parallel workers (default $PLANRISK_JOBS or 1)"),
}
FLOAT_KEYS = {"offset_scale", "obstacles", "collision_rate", "noise_scale", "compactness", "lambda_suf",
              "lambda_nec", "baseline", "keep_prob", "ridge_lambda", "logistic_lambda", "train_frac"}


def build_parser():
    parser = argparse.ArgumentParser(prog="planrisk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"planrisk {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True
    for cmd, defaults in DEFAULTS.items():
        sp = sub.add_parser(cmd, help=HELP[cmd], argument_default=argparse.SUPPRESS)
        sp.add_argument("--config", help="JSON file of option values")
        for key, default in defaults.items():
            typ, text = OPTIONS.get(key, (float if key in FLOAT_KEYS else int, key.replace("_", " ")))
            sp.add_argument(f"--{key.replace('_', '-')}", dest=key, type=typ, help=f"{text} (default: {default})")
    return parser


def resolve_options(cmd, args):
    opts = dict(DEFAULTS[cmd])
    given = {k: v for k, v in vars(args).items() if k not in ("command", "verbose")}
    config_path = given.pop("config", None)
    if config_path:
        try:
            doc = json.loads(_existing(config_path, "config file").read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"{config_path}: not valid JSON ({exc})") from None
        section = doc.get(cmd, doc)
        for k, v in section.items():
            k = k.replace("-", "_")
            if k in opts:
                opts[k] = v
    opts.update(given)
    return opts


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        opts = resolve_options(args.command, args)
        return COMMANDS[args.command](opts)
    except (UsageError, ArgumentError, ValidationError, DataError, ZeroMassError, FileNotFoundError) as exc:
        print(f"planrisk {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (TransportError, PlannerError, SearchAborted) as exc:
        print(f"planrisk {args.command}: planner failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
