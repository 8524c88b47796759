"""Rotation and quality estimators.

Estimators are immutable. Per-trial state (randomness, the sticky flip) lives
in a session object returned by ``new_trial(rng)``. Observations separate
sensor data from oracle-only ground truth; estimators that do not declare
``uses_oracle`` only ever receive the stripped observation.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry.pointcloud import (
    DEFAULT_K,
    RANSAC_ANGLE_TOL,
    RANSAC_DIST_TOL,
    RANSAC_ITERATIONS,
    PointCloud,
    estimate_normals,
    largest_flat_plane,
)
from .render import CameraRig, DepthImage, depth_to_point_cloud, render_depth
from .resting import DEFAULT_PARAMS, UPRIGHT_TOL, placement_quality_label
from .so3 import (
    axis_angle_to_matrix,
    from_euler,
    from_quaternion,
    ground_truth_rotation,
    matrix_to_sixd,
    random_unit_vector,
    rot_x,
    sixd_to_matrix,
    to_euler,
    to_quaternion,
)

OUTPUT_REPS = ("sixd", "quaternion", "euler")


class OracleAccessError(AttributeError):
    """A non-oracle estimator touched ground-truth fields."""


class Observation:
    """What an estimator may see at one moment of a trial.

    ``capture(rig)`` renders the current scene from any rig; ``depth_images``
    is the capture from the controller's rig. Both are computed lazily, so
    oracle estimators never pay for rendering.
    """

    def __init__(self, capture: Callable[[CameraRig], list[DepthImage]], rig: CameraRig,
                 true_orientation=None, object_ref=None):
        self._capture = capture
        self.rig = rig
        self._images: list[DepthImage] | None = None
        self._oracle = true_orientation is not None
        self._true_orientation = None if true_orientation is None else np.asarray(true_orientation, dtype=float)
        self._object_ref = object_ref

    @classmethod
    def of(cls, obj, R, rig: CameraRig, t=None) -> "Observation":
        pos = rig.center if t is None else np.asarray(t, dtype=float)
        R = np.asarray(R, dtype=float)
        return cls(lambda r: render_depth(obj, R, pos, r), rig, R, obj)

    @property
    def has_oracle(self) -> bool:
        return self._oracle

    @property
    def depth_images(self) -> list[DepthImage]:
        if self._images is None:
            self._images = self._capture(self.rig)
        return self._images

    def capture(self, rig: CameraRig) -> list[DepthImage]:
        return self._capture(rig)

    @property
    def true_orientation(self) -> np.ndarray:
        if not self._oracle:
            raise OracleAccessError("true_orientation is oracle-only")
        return self._true_orientation

    @property
    def object_ref(self):
        if not self._oracle:
            raise OracleAccessError("object_ref is oracle-only")
        return self._object_ref

    def without_oracle(self) -> "Observation":
        obs = Observation(self._capture, self.rig)
        obs._images = self._images
        return obs


# --- configs ---------------------------------------------------------------------

@dataclass(frozen=True)
class RotationEstimatorConfig:
    sigma: float = math.radians(15.0)
    p_flip: float = 0.25
    output_rep: str = "sixd"
    # Redraw the flip whenever the controller restarts from a random orientation.
    flip_redraw_on_restart: bool = True

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not 0.0 <= self.p_flip <= 1.0:
            raise ValueError(f"p_flip must be in [0, 1], got {self.p_flip}")
        if self.output_rep not in OUTPUT_REPS:
            raise ValueError(f"output_rep must be one of {OUTPUT_REPS}, got {self.output_rep!r}")


@dataclass(frozen=True)
class QualityEstimatorConfig:
    eta: float = 0.0
    score_high: float = 0.95
    score_low: float = 0.05

    def __post_init__(self):
        if not 0.0 <= self.eta < 0.5:
            raise ValueError(f"eta must be in [0, 0.5), got {self.eta}")
        if not 0.0 <= self.score_low < self.score_high <= 1.0:
            raise ValueError("need 0 <= score_low < score_high <= 1")


def round_trip(R, rep: str) -> tuple[np.ndarray, bool]:
    """Pass R through an output representation; second value flags Euler gimbal lock."""
    if rep == "sixd":
        return sixd_to_matrix(matrix_to_sixd(R)), False
    if rep == "quaternion":
        return from_quaternion(to_quaternion(R)), False
    if rep == "euler":
        e = to_euler(R)
        return from_euler(e.roll, e.pitch, e.yaw), e.gimbal_lock
    raise ValueError(f"unknown representation {rep!r}")


# --- oracle rotation -------------------------------------------------------------

class OracleRotationEstimator:
    """Ground-truth rotation corrupted by random-axis noise and a sticky flip."""

    uses_oracle = True

    def __init__(self, cfg: RotationEstimatorConfig = RotationEstimatorConfig()):
        self.cfg = cfg

    def new_trial(self, rng: np.random.Generator) -> "OracleRotationSession":
        return OracleRotationSession(self.cfg, rng)


class OracleRotationSession:
    def __init__(self, cfg: RotationEstimatorConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.flipped = bool(rng.random() < cfg.p_flip)
        self.gimbal_flags = 0

    def restart(self) -> None:
        if self.cfg.flip_redraw_on_restart:
            self.flipped = bool(self.rng.random() < self.cfg.p_flip)

    def estimate(self, obs: Observation) -> np.ndarray:
        est, locked = oracle_rotation_estimate(obs, self.cfg, self.rng, self.flipped)
        self.gimbal_flags += locked
        return est


def oracle_target(obs: Observation, flipped: bool) -> np.ndarray:
    """Shortest upright rotation, or its upside-down counterpart for a flipped trial."""
    up_now = obs.true_orientation @ obs.object_ref.upright
    target = ground_truth_rotation(up_now / np.linalg.norm(up_now))
    return rot_x(math.pi) @ target if flipped else target


def oracle_rotation_estimate(obs: Observation, cfg: RotationEstimatorConfig, rng: np.random.Generator,
                             flipped: bool = False) -> tuple[np.ndarray, bool]:
    """Noisy target passed through ``cfg.output_rep``; also returns the gimbal-lock flag."""
    target = oracle_target(obs, flipped)
    angle = abs(rng.normal(0.0, cfg.sigma)) if cfg.sigma > 0 else 0.0
    axis = random_unit_vector(rng)
    est = axis_angle_to_matrix(axis, angle) @ target if angle > 0 else target
    return round_trip(est, cfg.output_rep)


# --- oracle quality --------------------------------------------------------------

class OracleQualityEstimator:
    """Simulated drop label with optional label noise, mapped to two scores."""

    uses_oracle = True

    def __init__(self, cfg: QualityEstimatorConfig = QualityEstimatorConfig(), settle_params=None,
                 upright_tol: float = UPRIGHT_TOL):
        self.cfg = cfg
        self.settle_params = settle_params
        self.upright_tol = upright_tol

    def new_trial(self, rng: np.random.Generator) -> "OracleQualitySession":
        return OracleQualitySession(self, rng)


class OracleQualitySession:
    def __init__(self, est: OracleQualityEstimator, rng: np.random.Generator):
        self.est = est
        self.rng = rng
        self.inversions = 0

    def restart(self) -> None:
        pass

    def estimate(self, obs: Observation) -> float:
        cfg = self.est.cfg
        params = DEFAULT_PARAMS if self.est.settle_params is None else self.est.settle_params
        label = placement_quality_label(obs.object_ref, obs.true_orientation, params, self.est.upright_tol)
        if cfg.eta > 0 and self.rng.random() < cfg.eta:
            label = not label
            self.inversions += 1
        return cfg.score_high if label else cfg.score_low


# --- flat-plane baseline ---------------------------------------------------------

@dataclass(frozen=True)
class BaselineConfig:
    k: int = DEFAULT_K
    angle_tol: float = RANSAC_ANGLE_TOL
    dist_tol: float = RANSAC_DIST_TOL
    iterations: int = RANSAC_ITERATIONS
    seed: int = 0


class FlatPlaneBaseline:
    """Put the largest flat patch of the six-view point cloud face-down."""

    uses_oracle = False

    def __init__(self, cfg: BaselineConfig = BaselineConfig()):
        self.cfg = cfg

    def new_trial(self, rng: np.random.Generator) -> "FlatPlaneBaseline":
        return self

    def restart(self) -> None:
        pass

    def plane(self, obs: Observation):
        rig = CameraRig.six_axis(center=obs.rig.center)
        images = obs.capture(rig)
        cloud = PointCloud.concatenate(depth_to_point_cloud(img, cam) for img, cam in zip(images, rig.cameras))
        cloud = estimate_normals(cloud, self.cfg.k)
        rng = np.random.default_rng(self.cfg.seed)
        return largest_flat_plane(cloud, self.cfg.angle_tol, self.cfg.dist_tol, self.cfg.iterations, rng)

    def estimate(self, obs: Observation) -> np.ndarray:
        normal, _ = self.plane(obs)
        return ground_truth_rotation(-normal)


def flat_plane_baseline(obj, R_now, rig: CameraRig | None = None, cfg: BaselineConfig = BaselineConfig()) -> np.ndarray:
    rig = CameraRig.standard(3) if rig is None else rig
    obs = Observation.of(obj, R_now, rig).without_oracle()
    return FlatPlaneBaseline(cfg).estimate(obs)


# --- logistic quality model ------------------------------------------------------

QM_MAGIC = b"UPRQLTY\x00"
QM_VERSION = 1
_QM_HEADER = struct.Struct("<8sIII")


class UnbalancedDatasetError(ValueError):
    pass


def image_features(images) -> np.ndarray:
    return np.concatenate([np.asarray(img.pixels, dtype=np.float64).reshape(-1) for img in images])


@dataclass(frozen=True, eq=False)
class QualityModel:
    weights: np.ndarray
    bias: float
    n_cameras: int

    def predict_features(self, X) -> np.ndarray:
        z = np.asarray(X, dtype=np.float64) @ self.weights + self.bias
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    def predict(self, images) -> float:
        if len(images) != self.n_cameras:
            raise ValueError(f"model expects {self.n_cameras} images, got {len(images)}")
        return float(self.predict_features(image_features(images)))

    def to_bytes(self) -> bytes:
        w = np.asarray(self.weights, dtype="<f8")
        return _QM_HEADER.pack(QM_MAGIC, QM_VERSION, len(w), self.n_cameras) + w.tobytes() + struct.pack("<d", self.bias)

    @classmethod
    def from_bytes(cls, data: bytes) -> "QualityModel":
        magic, version, n, cams = _QM_HEADER.unpack_from(data)
        if magic != QM_MAGIC or version != QM_VERSION:
            raise ValueError("not a quality model file")
        expected = _QM_HEADER.size + 8 * n + 8
        if len(data) != expected:
            raise ValueError(f"expected {expected} bytes, got {len(data)}")
        w = np.frombuffer(data, dtype="<f8", count=n, offset=_QM_HEADER.size).astype(np.float64)
        (b,) = struct.unpack_from("<d", data, _QM_HEADER.size + 8 * n)
        return cls(w, b, cams)


def check_balance(labels) -> None:
    y = np.asarray(labels, dtype=bool)
    pos = int(y.sum())
    neg = len(y) - pos
    if pos != neg:
        raise UnbalancedDatasetError(f"quality dataset must be balanced, got {pos} positive / {neg} negative")


def train_logistic_features(X, y, epochs: int = 300, lr: float = 0.5, l2: float = 1e-4, seed: int = 0) -> tuple[np.ndarray, float]:
    """Full-batch gradient descent on mean binary cross-entropy."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    check_balance(y.astype(bool))
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 1e-3, X.shape[1])
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        p = 0.5 * (1.0 + np.tanh(0.5 * (X @ w + b)))
        g = p - y
        w -= lr * (X.T @ g / n + l2 * w)
        b -= lr * float(g.mean())
    return w, b


def train_logistic_quality(dataset, epochs: int = 300, lr: float = 0.5, l2: float = 1e-4, seed: int = 0) -> QualityModel:
    """``dataset`` is a sequence of (images, label) pairs with equal label counts."""
    dataset = list(dataset)
    if not dataset:
        raise UnbalancedDatasetError("empty quality dataset")
    n_cams = len(dataset[0][0])
    X = np.stack([image_features(imgs) for imgs, _ in dataset])
    y = np.array([bool(lbl) for _, lbl in dataset])
    w, b = train_logistic_features(X, y, epochs, lr, l2, seed)
    return QualityModel(w, b, n_cams)


def quality_predict(model: QualityModel, images) -> float:
    return model.predict(images)


class LogisticQualityEstimator:
    uses_oracle = False

    def __init__(self, model: QualityModel):
        self.model = model

    def new_trial(self, rng: np.random.Generator) -> "LogisticQualityEstimator":
        return self

    def restart(self) -> None:
        pass

    def estimate(self, obs: Observation) -> float:
        return self.model.predict(obs.depth_images)
