"""Drop-labelled depth-image datasets.

Records are line-delimited JSON, one object per line with sorted keys.
``images`` holds one base64-encoded depth image file per rig camera (see
:mod:`upright.render` for the byte layout).
"""
from __future__ import annotations

import base64
import json
import math
import warnings
from pathlib import Path

import numpy as np

from ..estimators import QualityModel, image_features, train_logistic_features
from ..render import DepthImage, render_depth
from ..resting import placement_quality_label
from ..so3 import axis_angle_to_matrix, ground_truth_rotation, matrix_to_sixd, random_rotation, rot_z
from .config import ExperimentConfig, substream
from .evaluate import build_objects, make_rig

DATASET_FILE = "dataset.jsonl"
BALANCED_FILE = "quality_balanced.jsonl"
DATASET_REPORT = "dataset_report.json"
MODEL_FILE = "quality_model.bin"
MODEL_REPORT = "quality_model.json"


def near_upright_pose(rng: np.random.Generator, max_tilt: float) -> np.ndarray:
    """Random twist, then a tilt about a random horizontal axis by an angle uniform in [0, max_tilt]."""
    twist = rng.uniform(-math.pi, math.pi)
    phi = rng.uniform(0.0, 2.0 * math.pi)
    tilt = rng.uniform(0.0, max_tilt)
    axis = np.array([math.cos(phi), math.sin(phi), 0.0])
    return axis_angle_to_matrix(axis, tilt) @ rot_z(twist)


def jitter_in_ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    d = rng.normal(size=3)
    d /= np.linalg.norm(d)
    return d * radius * rng.random() ** (1.0 / 3.0)


def sample_record(cfg: ExperimentConfig, obj, rig, rng: np.random.Generator, record_id: int) -> tuple[dict, list[DepthImage]]:
    ds = cfg.dataset
    near = bool(rng.random() < ds.near_upright_fraction)
    R = near_upright_pose(rng, ds.near_upright_max_tilt) if near else random_rotation(rng)
    t = rig.center + jitter_in_ball(rng, ds.position_jitter)
    images = render_depth(obj, R, t, rig)
    up = R @ obj.upright
    gt = ground_truth_rotation(up / np.linalg.norm(up))
    label = placement_quality_label(obj, R, cfg.resting, cfg.upright_tol)
    rec = {
        "id": record_id,
        "object": obj.name,
        "rotation": [float(x) for x in R.reshape(-1)],
        "translation": [float(x) for x in t],
        "images": [base64.b64encode(img.to_bytes()).decode("ascii") for img in images],
        "gt_rotation": [float(x) for x in gt.reshape(-1)],
        "gt_sixd": [float(x) for x in matrix_to_sixd(gt)],
        "label": bool(label),
        "near_upright": near,
    }
    return rec, images


def decode_images(record: dict) -> list[DepthImage]:
    return [DepthImage.from_bytes(base64.b64decode(s)) for s in record["images"]]


def balanced_subset(records: list[dict]) -> list[dict]:
    """Equal numbers of positive and negative records, earliest first, in id order."""
    pos = [r for r in records if r["label"]]
    neg = [r for r in records if not r["label"]]
    m = min(len(pos), len(neg))
    return sorted(pos[:m] + neg[:m], key=lambda r: r["id"])


def _write_jsonl(path: Path, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in rows:
            fh.write(json.dumps(r, sort_keys=True) + "\n")


def read_jsonl(path) -> list[dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def generate_dataset(cfg: ExperimentConfig, out_dir, objects=None) -> dict:
    """Write the dataset, its balanced subset and a per-object label report."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    objects = build_objects(cfg) if objects is None else objects
    rig = make_rig(cfg)
    rng = substream(cfg, "dataset")
    records = []
    for i in range(cfg.dataset.n_records):
        rec, _ = sample_record(cfg, objects[i % len(objects)], rig, rng, i)
        records.append(rec)
    balanced = balanced_subset(records)
    per_object = {}
    warn = []
    for obj in objects:
        labels = [r["label"] for r in records if r["object"] == obj.name]
        pos = sum(labels)
        per_object[obj.name] = {"records": len(labels), "positive": pos, "negative": len(labels) - pos}
        if labels and (pos == 0 or pos == len(labels)):
            warn.append(obj.name)
            warnings.warn(f"{obj.name}: all {len(labels)} records share one label; cannot be balanced", RuntimeWarning, stacklevel=2)
    report = {
        "fingerprint": cfg.fingerprint({"dataset": True}),
        "n_records": len(records),
        "n_balanced": len(balanced),
        "positives": sum(r["label"] for r in records),
        "per_object": per_object,
        "unbalanceable_objects": warn,
    }
    _write_jsonl(out / DATASET_FILE, records)
    _write_jsonl(out / BALANCED_FILE, balanced)
    if cfg.quality_model.enabled:
        model, acc = train_quality_model(cfg, objects)
        (out / MODEL_FILE).write_bytes(model.to_bytes())
        report["quality_model"] = acc
        with open(out / MODEL_REPORT, "w", encoding="utf-8", newline="\n") as fh:
            json.dump(acc, fh, sort_keys=True, indent=1)
            fh.write("\n")
    with open(out / DATASET_REPORT, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(report, fh, sort_keys=True, indent=1)
        fh.write("\n")
    return report


def balanced_quality_samples(cfg: ExperimentConfig, objects, n_samples: int, max_records: int | None = None):
    """(features, labels) with exactly ``n_samples // 2`` of each label, in draw order."""
    rig = make_rig(cfg)
    rng = substream(cfg, "quality_model")
    half = n_samples // 2
    pos, neg = [], []
    limit = max_records if max_records is not None else 50 * n_samples
    i = 0
    while (len(pos) < half or len(neg) < half) and i < limit:
        rec, images = sample_record(cfg, objects[i % len(objects)], rig, rng, i)
        bucket = pos if rec["label"] else neg
        if len(bucket) < half:
            bucket.append((i, image_features(images), rec["label"]))
        i += 1
    if len(pos) < half or len(neg) < half:
        raise RuntimeError(f"only {len(pos)} positive / {len(neg)} negative samples after {i} draws")
    rows = sorted(pos + neg, key=lambda r: r[0])
    X = np.stack([r[1] for r in rows])
    y = np.array([r[2] for r in rows], dtype=bool)
    return X, y


def split_balanced(y: np.ndarray, holdout_fraction: float, rng: np.random.Generator):
    """Stratified train/holdout index split that keeps both parts balanced."""
    pos = rng.permutation(np.flatnonzero(y))
    neg = rng.permutation(np.flatnonzero(~y))
    k = int(round(holdout_fraction * len(pos)))
    test = np.sort(np.concatenate([pos[:k], neg[:k]]))
    train = np.sort(np.concatenate([pos[k:], neg[k:]]))
    return train, test


def train_quality_model(cfg: ExperimentConfig, objects) -> tuple[QualityModel, dict]:
    qm = cfg.quality_model
    X, y = balanced_quality_samples(cfg, objects, qm.n_samples)
    train, test = split_balanced(y, qm.holdout_fraction, np.random.default_rng(qm.seed))
    w, b = train_logistic_features(X[train], y[train], qm.epochs, qm.learning_rate, qm.l2, qm.seed)
    model = QualityModel(w, b, cfg.rig.n_cameras)

    def acc(idx):
        return float(np.mean((model.predict_features(X[idx]) >= 0.5) == y[idx]))

    return model, {"n_samples": int(len(y)), "n_train": int(len(train)), "n_holdout": int(len(test)),
                   "train_accuracy": acc(train), "holdout_accuracy": acc(test)}
