"""Feature tables, association reports and faithfulness summaries.

Statistics are sign-aligned so that larger values mean more risk: negative
entropy, negative spatial variance, positive camera Gini. Control columns
carry no fixed direction; their sign is chosen on the rows a metric is fit
on (the full pool in-domain, the training scenes held-out) and recorded in
the report.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .attribution import ObjectiveConfig, score_ordering
from .controls import EXTENDED_NAMES, MATCHED_NAMES, extended_controls, matched_controls
from .core import SampleRecord
from .errors import ArgumentError, DataError, ValidationError, ZeroMassError
from .evaluation import (auroc, half_width, random_triage_baseline, scene_bootstrap, scene_splits, spearman,
                         top_fraction_labels, triage)
from .faithfulness import S_HIGH_RULE, insertion_deletion
from .fit import FeatureMatrix, logistic_fit, ridge_fit
from .risk import ade, collision_any
from .stats import attribution_stats

STAT_COLUMNS = ("H", "sigma_sp2", "gini_cam")
STAT_SIGNS = {"H": -1.0, "sigma_sp2": -1.0, "gini_cam": 1.0}
MATCHED_COLUMNS = MATCHED_NAMES
EXTENDED_COLUMNS = EXTENDED_NAMES
LABEL_COLUMNS = ("ade", "collision")
FLAG_COLUMNS = ("stats_missing",)
FEATURE_COLUMNS = STAT_COLUMNS + MATCHED_COLUMNS + EXTENDED_COLUMNS + LABEL_COLUMNS + FLAG_COLUMNS

JOINT_MODELS = {
    "controls": MATCHED_COLUMNS,
    "stats": STAT_COLUMNS,
    "controls+stats": MATCHED_COLUMNS + STAT_COLUMNS,
}
EXTENDED_MODELS = {
    "extended": EXTENDED_COLUMNS,
    "stats": STAT_COLUMNS,
    "extended+stats": EXTENDED_COLUMNS + STAT_COLUMNS,
}


def _num(v):
    return float("nan") if v is None else float(v)


def sample_features(sample: SampleRecord, saliency, prediction, image_dims) -> dict:
    """One feature row; statistics are NaN when the saliency has no mass."""
    row = {}
    try:
        st = attribution_stats(saliency)
        row.update(H=st.entropy, sigma_sp2=st.spatial_variance, gini_cam=st.gini_cam, stats_missing=0.0)
    except ZeroMassError:
        row.update(H=math.nan, sigma_sp2=math.nan, gini_cam=math.nan, stats_missing=1.0)
    mc = matched_controls(sample, image_dims)
    row.update(n_obj=float(mc.n_obj), d_obj=_num(mc.d_obj), gini_obj=_num(mc.gini_obj))
    row.update({k: _num(v) for k, v in extended_controls(sample).as_dict().items()})
    row["ade"] = ade(prediction, sample.gt_trajectory)
    row["collision"] = float(collision_any(prediction, sample.ego, sample.obstacle_boxes))
    return row


def build_features(manifest, saliencies: dict, predictions: dict) -> FeatureMatrix:
    ids, scenes, values = [], [], []
    dims = (manifest.height, manifest.width)
    for s in manifest.samples():
        if s.sample_id not in saliencies:
            raise ValidationError(f"no attribution for sample {s.sample_id}")
        row = sample_features(s, saliencies[s.sample_id], predictions[s.sample_id], dims)
        ids.append(s.sample_id)
        scenes.append(s.scene_id)
        values.append([row[c] for c in FEATURE_COLUMNS])
    return FeatureMatrix(tuple(ids), tuple(scenes), FEATURE_COLUMNS, np.array(values).reshape(len(ids), -1))


def _fmt(v):
    return "" if math.isnan(v) else repr(float(v))


def write_features_csv(fm: FeatureMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("sample_id", "scene_id") + fm.columns)
        for sid, scene, row in zip(fm.sample_ids, fm.scene_ids, fm.values):
            w.writerow([sid, scene] + [_fmt(v) for v in row])


def read_features_csv(path) -> FeatureMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][:2] != ["sample_id", "scene_id"]:
        raise ValidationError(f"{path}: not a feature table")
    header = tuple(rows[0][2:])
    vals = [[float(v) if v != "" else math.nan for v in r[2:]] for r in rows[1:]]
    return FeatureMatrix(
        tuple(r[0] for r in rows[1:]), tuple(r[1] for r in rows[1:]), header,
        np.array(vals, dtype=np.float64).reshape(len(rows) - 1, len(header)),
    )


# --- evaluation ------------------------------------------------------------


@dataclass(frozen=True)
class EvalConfig:
    ridge_lambda: float = 1.0
    logistic_lambda: float = 1.0
    n_boot: int = 100
    n_splits: int = 20
    train_frac: float = 0.8
    confidence: float = 0.95
    budgets: tuple = (5, 10, 20)
    thresholds: tuple = (10, 20, 30)
    seed: int = 0


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


class _Data:
    """Column access with sign alignment and fit helpers for one feature table."""

    def __init__(self, fm: FeatureMatrix, cfg: EvalConfig):
        self.fm, self.cfg = fm, cfg
        self.ade = fm.column("ade")
        self.coll = fm.column("collision")
        self.ids = list(fm.sample_ids)

    def feature(self, name, idx):
        return self.fm.column(name)[idx]

    def control_sign(self, name, idx, target):
        """+1 or -1 so that the aligned column associates positively with ``target``."""
        x = self.feature(name, idx)
        ok = ~np.isnan(x)
        if target == "ade":
            r = spearman(x[ok], self.ade[idx][ok]) if ok.sum() >= 2 else None
            return -1.0 if r is not None and r < 0 else 1.0
        a = auroc(x[ok], self.coll[idx][ok])
        return -1.0 if a is not None and a < 0.5 else 1.0

    def sign(self, name, idx, target):
        return STAT_SIGNS[name] if name in STAT_SIGNS else self.control_sign(name, idx, target)

    def univariate(self, name, sign, idx, target, labels=None):
        x = sign * self.feature(name, idx)
        y = (self.ade[idx] if target == "ade" else self.coll[idx]) if labels is None else labels
        ok = ~np.isnan(x)
        if ok.sum() < 2:
            return None
        if target == "ade":
            return spearman(x[ok], y[ok])
        return auroc(x[ok], y[ok])

    def joint_scores(self, cols, train, test, target, labels_train=None):
        """Linear predictor of the joint model fitted on ``train``, evaluated on ``test``.

        Returns (scores, kept test positions) or None when the fit is impossible.
        """
        Xtr = self.fm.select(cols, train)
        ok_tr = ~np.any(np.isnan(Xtr), axis=1)
        Xte = self.fm.select(cols, test)
        ok_te = ~np.any(np.isnan(Xte), axis=1)
        if ok_tr.sum() < 2 or ok_te.sum() < 2:
            return None
        try:
            if target == "ade":
                fit = ridge_fit(Xtr[ok_tr], self.ade[train][ok_tr], self.cfg.ridge_lambda, cols)
            else:
                y = self.coll[train] if labels_train is None else labels_train
                fit = logistic_fit(Xtr[ok_tr], y[ok_tr], self.cfg.logistic_lambda, cols)
        except DataError:
            return None
        return fit.linear_predictor(Xte[ok_te]), ok_te

    def joint(self, cols, train, test, target, labels_train=None, labels_test=None):
        out = self.joint_scores(cols, train, test, target, labels_train)
        if out is None:
            return None
        s, ok = out
        if target == "ade":
            return spearman(s, self.ade[test][ok])
        y = self.coll[test] if labels_test is None else labels_test
        return auroc(s, y[ok])


def _r(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else float(v)


def _boot(d: _Data, metric):
    cfg = d.cfg
    b = scene_bootstrap(metric, d.fm.scene_ids, cfg.n_boot, cfg.confidence, cfg.seed)
    return _r(b.point), _r(b.half_width), b.flagged


def _in_domain_rows(d: _Data, features, models):
    all_idx = np.arange(len(d.ids))
    rows, signs = [], {}
    for name in features:
        entry = {"feature": name, "kind": "stat" if name in STAT_SIGNS else "control"}
        for target, key in (("ade", "rho_ade"), ("collision", "auroc")):
            sg = d.sign(name, all_idx, target)
            signs[f"{name}:{key}"] = sg
            pt, hw, fl = _boot(d, lambda idx, n=name, s=sg, t=target: d.univariate(n, s, idx, t))
            entry.update({key: pt, f"{key}_hw": hw, f"{key}_flagged": fl})
        entry["n"] = int((~np.isnan(d.fm.column(name))).sum())
        rows.append(entry)
    for label, cols in models.items():
        entry = {"feature": f"joint:{label}", "kind": "joint"}
        for target, key in (("ade", "rho_ade"), ("collision", "auroc")):
            pt, hw, fl = _boot(d, lambda idx, c=cols, t=target: d.joint(c, idx, idx, t))
            entry.update({key: pt, f"{key}_hw": hw, f"{key}_flagged": fl})
        entry["n"] = int(d.fm.complete_rows(cols).sum())
        rows.append(entry)
    return rows, signs


def _split_indices(d: _Data):
    cfg = d.cfg
    scene = np.asarray(d.fm.scene_ids)
    out = []
    for train, test in scene_splits(d.fm.scene_ids, cfg.train_frac, cfg.n_splits, cfg.seed):
        out.append((np.flatnonzero(np.isin(scene, train)), np.flatnonzero(np.isin(scene, test))))
    return out


def _summary(values, cfg):
    vals = [v for v in values if v is not None and math.isfinite(v)]
    mean = float(np.mean(vals)) if vals else None
    return mean, _r(half_width(vals, cfg.confidence)), len(values) - len(vals)


def _held_out_rows(d: _Data, splits, features, models):
    rows = []
    for name in features:
        entry = {"feature": name, "kind": "stat" if name in STAT_SIGNS else "control"}
        for target, key in (("ade", "rho_ade"), ("collision", "auroc")):
            vals = [d.univariate(name, d.sign(name, tr, target), te, target) for tr, te in splits]
            m, hw, bad = _summary(vals, d.cfg)
            entry.update({key: m, f"{key}_hw": hw, f"{key}_undefined": bad})
        rows.append(entry)
    for label, cols in models.items():
        entry = {"feature": f"joint:{label}", "kind": "joint"}
        for target, key in (("ade", "rho_ade"), ("collision", "auroc")):
            vals = [d.joint(cols, tr, te, target) for tr, te in splits]
            m, hw, bad = _summary(vals, d.cfg)
            entry.update({key: m, f"{key}_hw": hw, f"{key}_undefined": bad})
        rows.append(entry)
    return rows


def _triage_rows(d: _Data, splits):
    rows = []
    for k in d.cfg.budgets:
        rec, prec, flagged = [], [], 0
        for tr, te in splits:
            out = d.joint_scores(STAT_COLUMNS, tr, te, "ade")
            if out is None:
                continue
            s, ok = out
            res = triage(s, d.ade[te][ok], k, [d.ids[i] for i in te[ok]])
            rec.append(res.recall)
            prec.append(res.precision)
            flagged += res.flagged
        r_m, r_hw, _ = _summary(rec, d.cfg)
        p_m, p_hw, _ = _summary(prec, d.cfg)
        base_r, base_p = random_triage_baseline(k)
        rows.append({
            "k": k, "recall": r_m, "recall_hw": r_hw, "precision": p_m, "precision_hw": p_hw,
            "random_recall": base_r, "random_precision": base_p,
            "splits": len(rec), "flagged_splits": int(flagged),
        })
    return rows


def _quantile_rows(d: _Data, splits, features):
    cfg = d.cfg
    in_rows, out_rows = [], []
    all_idx = np.arange(len(d.ids))

    def labels(idx, q):
        return top_fraction_labels(d.ade[idx], q / 100, [d.ids[i] for i in idx]).astype(float)

    for q in cfg.thresholds:
        for name in features:
            sg = d.sign(name, all_idx, "ade")
            pt, hw, fl = _boot(d, lambda idx, n=name, s=sg: d.univariate(n, s, idx, "collision", labels(idx, q)))
            vals = [
                d.univariate(name, d.sign(name, tr, "ade"), te, "collision", labels(te, q)) for tr, te in splits
            ]
            m, mhw, bad = _summary(vals, cfg)
            in_rows.append({"threshold": q, "feature": name, "auroc": pt, "auroc_hw": hw, "flagged": fl})
            out_rows.append({"threshold": q, "feature": name, "auroc": m, "auroc_hw": mhw, "undefined": bad})
        cols = STAT_COLUMNS
        pt, hw, fl = _boot(
            d, lambda idx: d.joint(cols, idx, idx, "collision", labels(idx, q), labels(idx, q))
        )
        vals = [d.joint(cols, tr, te, "collision", labels(tr, q), labels(te, q)) for tr, te in splits]
        m, mhw, bad = _summary(vals, cfg)
        in_rows.append({"threshold": q, "feature": "joint:stats", "auroc": pt, "auroc_hw": hw, "flagged": fl})
        out_rows.append({"threshold": q, "feature": "joint:stats", "auroc": m, "auroc_hw": mhw, "undefined": bad})
    return in_rows, out_rows


def evaluate(fm: FeatureMatrix, cfg: EvalConfig | None = None) -> dict:
    """All association, transfer, triage and threshold tables for one feature table."""
    cfg = cfg or EvalConfig()
    if len(set(fm.scene_ids)) < 2:
        raise DataError("evaluation needs at least 2 scenes")
    missing = [c for c in FEATURE_COLUMNS if c not in fm.columns]
    if missing:
        raise ValidationError(f"feature table lacks columns {missing}")
    d = _Data(fm, cfg)
    splits = _split_indices(d)
    in_rows, signs = _in_domain_rows(d, STAT_COLUMNS + MATCHED_COLUMNS, JOINT_MODELS)
    ext_rows, ext_signs = _in_domain_rows(d, EXTENDED_COLUMNS, EXTENDED_MODELS)
    q_in, q_out = _quantile_rows(d, splits, STAT_COLUMNS)
    signs.update(ext_signs)
    return {
        "n_samples": len(fm.sample_ids),
        "n_scenes": len(set(fm.scene_ids)),
        "collision_rate": float(np.mean(d.coll)),
        "missing_stats": int((~fm.complete_rows(STAT_COLUMNS)).sum()),
        "missing_controls": int((~fm.complete_rows(MATCHED_COLUMNS)).sum()),
        "signs": signs,
        "in_domain": in_rows,
        "held_out": _held_out_rows(d, splits, STAT_COLUMNS + MATCHED_COLUMNS, JOINT_MODELS),
        "triage": _triage_rows(d, splits),
        "threshold_auroc_in_domain": q_in,
        "threshold_auroc_held_out": q_out,
        "extended_in_domain": ext_rows,
    }


def _provenance(config, cfg: EvalConfig, extra=None):
    from . import __version__

    prov = {
        "toolkit": "planrisk",
        "version": __version__,
        "config_hash": config_hash(config),
        "config": config,
        "eval": asdict(cfg),
        "seeds": {"bootstrap": cfg.seed, "splits": cfg.seed},
    }
    prov.update(extra or {})
    return prov


SYNTHETIC_NOTE = (
    "synthetic data: risk labels are planted mechanically, so these associations check the pipeline "
    "and say nothing about real planners"
)


def fit_eval_report(tables: dict, cfg: EvalConfig | None = None, config=None, sources=None) -> dict:
    """Reports for several planners keyed by name, plus provenance.

    ``sources`` maps table name -> "synthetic" or "manifest"; reports on
    synthetic tables carry a note that they are pipeline checks.
    """
    cfg = cfg or EvalConfig()
    config = config if config is not None else {}
    prov = _provenance(config, cfg)
    if sources:
        prov["sources"] = dict(sorted(sources.items()))
        if "synthetic" in sources.values():
            prov["note"] = SYNTHETIC_NOTE
    return {
        "provenance": prov,
        "planners": {name: evaluate(fm, cfg) for name, fm in tables.items()},
    }


TABLE_LAYOUT = {
    "in_domain": ("rho_ade", "rho_ade_hw", "auroc", "auroc_hw"),
    "held_out": ("rho_ade", "rho_ade_hw", "auroc", "auroc_hw"),
    "extended_in_domain": ("rho_ade", "rho_ade_hw", "auroc", "auroc_hw"),
    "triage": ("recall", "recall_hw", "precision", "precision_hw"),
    "threshold_auroc_in_domain": ("auroc", "auroc_hw"),
    "threshold_auroc_held_out": ("auroc", "auroc_hw"),
}


def _cell(v):
    if v is None:
        return ""
    return f"{v:.6f}" if isinstance(v, float) else str(v)


def write_report(report: dict, out_dir, stem="report") -> list:
    """JSON report plus one CSV per table: row keys down, planner x metric across."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [out / f"{stem}.json"]
    written[0].write_text(json.dumps(report, indent=1) + "\n")
    planners = report["planners"]
    for table, metrics in TABLE_LAYOUT.items():
        key_fields = ("k",) if table == "triage" else ("feature",)
        if table.startswith("threshold"):
            key_fields = ("threshold", "feature")
        header = list(key_fields) + [f"{p}:{m}" for p in planners for m in metrics]
        keyed = {}
        for p, rep in planners.items():
            for row in rep[table]:
                key = tuple(row[k] for k in key_fields)
                keyed.setdefault(key, {})[p] = row
        path = out / f"{table}.csv"
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for key, per in keyed.items():
                cells = [str(k) for k in key]
                for p in planners:
                    cells += [_cell(per.get(p, {}).get(m)) for m in metrics]
                w.writerow(cells)
        written.append(path)
    return written


# --- faithfulness ------------------------------------------------------------


def faithfulness_rows(manifest, planner_for, partition, results: dict, cfg: ObjectiveConfig | None = None,
                      n_boot=100, seed=0, confidence=0.95):
    """Mean insertion / deletion AUC and s_high per method with scene-bootstrap half-widths.

    ``results`` maps method -> {sample_id: AttributionResult}; ``planner_for``
    maps a sample id to a planner handle.
    """
    samples = list(manifest.samples())
    scene_ids = [s.scene_id for s in samples]
    per_method = {}
    for method, by_sample in results.items():
        ins, dele, high = [], [], []
        for s in samples:
            if s.sample_id not in by_sample:
                raise ValidationError(f"method {method}: no attribution for sample {s.sample_id}")
            x = manifest.load_tensor(s)
            f = insertion_deletion(planner_for(s.sample_id), x, partition,
                                   score_ordering(by_sample[s.sample_id]), cfg)
            ins.append(f.insertion_auc)
            dele.append(f.deletion_auc)
            high.append(f.s_high)
        per_method[method] = (np.array(ins), np.array(dele), np.array(high))
    rows = []
    for method, cols in per_method.items():
        row = {"method": method}
        for key, v in zip(("insertion", "deletion", "s_high"), cols):
            b = scene_bootstrap(lambda idx, v=v: float(v[idx].mean()), scene_ids, n_boot, confidence, seed)
            row.update({key: _r(b.point), f"{key}_hw": _r(b.half_width)})
        row["per_sample"] = {
            "insertion": [float(a) for a in cols[0]],
            "deletion": [float(a) for a in cols[1]],
            "s_high": [float(a) for a in cols[2]],
        }
        rows.append(row)
    return rows


def faithfulness_report(rows, config=None, cfg: EvalConfig | None = None) -> dict:
    cfg = cfg or EvalConfig()
    return {
        "provenance": _provenance(config or {}, cfg, {"s_high_rule": S_HIGH_RULE}),
        "methods": rows,
    }


def write_faithfulness(report: dict, out_dir, timing: dict | None = None) -> list:
    """JSON and CSV summary; wall-clock times go to a separate file so reruns match."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "faithfulness.json").write_text(json.dumps(report, indent=1) + "\n")
    with open(out / "faithfulness.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = ("insertion", "insertion_hw", "deletion", "deletion_hw", "s_high", "s_high_hw")
        w.writerow(("method",) + cols)
        for row in report["methods"]:
            w.writerow([row["method"]] + [_cell(row[c]) for c in cols])
    written = [out / "faithfulness.json", out / "faithfulness.csv"]
    if timing:
        (out / "faithfulness_timing.json").write_text(json.dumps(timing, indent=1) + "\n")
        written.append(out / "faithfulness_timing.json")
    return written


def check_columns(fm: FeatureMatrix, names):
    missing = [n for n in names if n not in fm.columns]
    if missing:
        raise ArgumentError(f"unknown feature columns {missing}")
