"""Batch evaluation of placement policies over held-out test sets."""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..controller import ControllerConfig, SimWorld, run_trial
from ..estimators import (
    FlatPlaneBaseline,
    LogisticQualityEstimator,
    OracleQualityEstimator,
    OracleRotationEstimator,
    QualityModel,
)
from ..geometry.objects import ObjectModel, generate_object_set
from ..render import CameraRig
from ..so3 import random_rotation
from .config import ExperimentConfig, substream

TRACES_FILE = "traces.jsonl"
METRICS_FILE = "metrics.json"
SUMMARY_FILE = "summary.csv"
PER_OBJECT_FILE = "per_object.csv"


def build_objects(cfg: ExperimentConfig) -> list[ObjectModel]:
    return generate_object_set(cfg.families, cfg.objects_per_family, cfg.object_seed, cfg.scale_range)


def make_test_sets(cfg: ExperimentConfig, n_objects: int) -> list[list[int]]:
    """Non-overlapping test sets of object indices, drawn from the split stream."""
    perm = substream(cfg, "split").permutation(n_objects)
    k = cfg.test_set_size
    return [sorted(int(i) for i in perm[s * k:(s + 1) * k]) for s in range(cfg.n_test_sets)]


def train_split(test_sets: list[list[int]], n_objects: int, s: int) -> list[int]:
    held = set(test_sets[s])
    train = [i for i in range(n_objects) if i not in held]
    assert held.isdisjoint(train)
    return train


def split_record(cfg: ExperimentConfig, objects) -> list[dict]:
    sets = make_test_sets(cfg, len(objects))
    return [{"test": [objects[i].name for i in ts], "train": [objects[i].name for i in train_split(sets, len(objects), s)]}
            for s, ts in enumerate(sets)]


def make_rig(cfg: ExperimentConfig) -> CameraRig:
    return CameraRig.standard(cfg.rig.n_cameras, cfg.rig.radius, fov=cfg.rig.fov)


def make_estimators(cfg: ExperimentConfig, policy: str):
    """(rotation estimator, quality estimator, controller config) for an evaluation policy."""
    if policy == "baseline":
        rot = FlatPlaneBaseline(cfg.baseline)
        ctrl = replace(cfg.controller, policy="sp")
    else:
        rot = OracleRotationEstimator(replace(cfg.rotation, sigma=cfg.effective_sigma))
        ctrl = replace(cfg.controller, policy=policy)
    if cfg.quality_kind == "logistic":
        model = QualityModel.from_bytes(Path(cfg.quality_model_path).read_bytes())
        qual = LogisticQualityEstimator(model)
    else:
        qual = OracleQualityEstimator(cfg.quality, cfg.resting, cfg.upright_tol)
    return rot, qual, ctrl


def _run_object(args) -> list[dict]:
    cfg, policy, obj, obj_idx, set_idx, first_id = args
    rot, qual, ctrl = make_estimators(cfg, policy)
    rig = make_rig(cfg)
    out = []
    for k in range(cfg.trials_per_object):
        start = random_rotation(substream(cfg, "poses", obj_idx, k))
        world = SimWorld(obj, start, rig, substream(cfg, "trials", obj_idx, k))
        trace = run_trial(world, rot, qual, ctrl, cfg.resting, trial_id=first_id + k, upright_tol=cfg.upright_tol)
        trace.policy = policy
        trace.test_set = set_idx
        out.append(trace.to_dict())
    return out


def run_policy(cfg: ExperimentConfig, objects, test_sets, policy: str) -> list[dict]:
    """Trace dicts for every (test set, object, trial), in trial-id order."""
    jobs = []
    next_id = 0
    for s, members in enumerate(test_sets):
        for i in members:
            jobs.append((cfg, policy, objects[i], i, s, next_id))
            next_id += cfg.trials_per_object
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            chunks = list(pool.map(_run_object, jobs))
    else:
        chunks = [_run_object(j) for j in jobs]
    traces = [t for chunk in chunks for t in chunk]
    traces.sort(key=lambda t: t["trial_id"])
    return traces


def _rates(traces) -> dict:
    n = len(traces)
    if n == 0:
        return {"n_trials": 0, "success_rate": float("nan"), "stability_rate": float("nan"), "angular_error_mean": float("nan")}
    succ = sum(1 for t in traces if t["success"])
    stab = sum(1 for t in traces if t["stable"])
    return {
        "n_trials": n,
        "success_rate": 100.0 * succ / n,
        "stability_rate": 100.0 * stab / n,
        "angular_error_mean": sum(t["angular_error_deg"] for t in traces) / n,
    }


def _std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def policy_metrics(traces: list[dict], n_sets: int) -> dict:
    m = _rates(traces)
    per_set = [_rates([t for t in traces if t["test_set"] == s]) for s in range(n_sets)]
    keys = ("success_rate", "stability_rate", "angular_error_mean")
    m["per_set"] = {k: [p[k] for p in per_set] for k in keys}
    # Spread across test-set replicates, and separately across individual trials.
    m["std_across_sets"] = {k: _std([p[k] for p in per_set if p["n_trials"]]) for k in keys}
    succ = np.array([100.0 * t["success"] for t in traces])
    stab = np.array([100.0 * t["stable"] for t in traces])
    err = np.array([t["angular_error_deg"] for t in traces])
    m["std_across_trials"] = {"success_rate": _std(succ), "stability_rate": _std(stab), "angular_error_mean": _std(err)}
    m["errors"] = sum(1 for t in traces if t["error"])
    m["unsettled"] = sum(1 for t in traces if not t["settled"])
    m["mean_iterations"] = sum(t["iterations"] for t in traces) / max(len(traces), 1)
    m["mean_restarts"] = sum(t["restarts"] for t in traces) / max(len(traces), 1)
    per_obj = {}
    for name in sorted({t["object"] for t in traces}):
        sub = [t for t in traces if t["object"] == name]
        per_obj[name] = _rates(sub) | {"test_set": sub[0]["test_set"]}
    m["per_object"] = per_obj
    per_family = {}
    for fam in sorted({name.rsplit("_", 1)[0] for name in per_obj}):
        per_family[fam] = _rates([t for t in traces if t["object"].rsplit("_", 1)[0] == fam])
    m["per_family"] = per_family
    return m


def evaluate(cfg: ExperimentConfig, objects=None, policies=None) -> tuple[dict, dict[str, list[dict]]]:
    """Run every configured policy. Returns (metrics, traces by policy)."""
    objects = build_objects(cfg) if objects is None else objects
    test_sets = make_test_sets(cfg, len(objects))
    policies = tuple(cfg.policies if policies is None else policies)
    splits = split_record(cfg, objects)
    fingerprint = cfg.fingerprint({"splits": splits, "policies": list(policies)})
    traces = {p: run_policy(cfg, objects, test_sets, p) for p in policies}
    metrics = {
        "fingerprint": fingerprint,
        "config": cfg.to_dict(),
        "effective_sigma_deg": math.degrees(cfg.effective_sigma),
        "splits": splits,
        "policies": {p: policy_metrics(traces[p], len(test_sets)) for p in policies},
    }
    return metrics, traces


def write_results(out_dir, metrics: dict, traces: dict[str, list[dict]]) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fp = metrics["fingerprint"]
    with open(out / TRACES_FILE, "w", encoding="utf-8", newline="\n") as fh:
        for policy, ts in traces.items():
            for t in ts:
                fh.write(json.dumps(t | {"fingerprint": fp}, sort_keys=True) + "\n")
    with open(out / METRICS_FILE, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(metrics, fh, sort_keys=True, indent=1)
        fh.write("\n")
    with open(out / SUMMARY_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "n_trials", "success_rate", "success_std", "stability_rate", "stability_std",
                    "angular_error_mean", "angular_error_std", "fingerprint"])
        for policy, m in metrics["policies"].items():
            sd = m["std_across_sets"]
            w.writerow([policy, m["n_trials"], repr(m["success_rate"]), repr(sd["success_rate"]),
                        repr(m["stability_rate"]), repr(sd["stability_rate"]),
                        repr(m["angular_error_mean"]), repr(sd["angular_error_mean"]), fp])
    with open(out / PER_OBJECT_FILE, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["policy", "object", "test_set", "n_trials", "success_rate", "stability_rate", "angular_error_mean", "fingerprint"])
        for policy, m in metrics["policies"].items():
            for name, r in m["per_object"].items():
                w.writerow([policy, name, r["test_set"], r["n_trials"], repr(r["success_rate"]),
                            repr(r["stability_rate"]), repr(r["angular_error_mean"]), fp])
    return out


def run_eval(cfg: ExperimentConfig, out_dir, policies=None) -> dict:
    metrics, traces = evaluate(cfg, policies=policies)
    write_results(out_dir, metrics, traces)
    return metrics
