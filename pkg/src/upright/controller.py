"""Placement policies (single pass, iterative, iterative with quality) and the
moving-window rotation filter."""
from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .estimators import Observation
from .geometry.objects import ObjectModel
from .render import CameraRig
from .resting import DEFAULT_PARAMS, UPRIGHT_TOL, SettleParams, is_upright, settle, stability_check
from .so3 import (
    from_quaternion,
    geodesic_distance,
    is_rotation,
    min_twist_angle,
    orthonormalize,
    quaternion_mean,
    random_rotation,
    rot_z,
    rotation_angle,
    to_quaternion,
    upright_angle,
)

POLICIES = ("sp", "itr", "itrq")


@dataclass(frozen=True)
class ControllerConfig:
    max_iter: int = 15
    max_restart: int = 3
    eps_quality: float = 0.2
    eps_rotation: float = math.radians(10.0)
    policy: str = "itrq"
    canonicalize: bool = False

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.max_iter < 1 or self.max_restart < 1:
            raise ValueError("max_iter and max_restart must be >= 1")
        if not 0.0 < self.eps_quality < 1.0:
            raise ValueError("eps_quality must be in (0, 1)")
        if not self.eps_rotation > 0:
            raise ValueError("eps_rotation must be positive")


@dataclass
class SimWorld:
    object: ObjectModel
    orientation: np.ndarray
    rig: CameraRig
    rng: np.random.Generator
    position: np.ndarray | None = None

    def __post_init__(self):
        self.orientation = orthonormalize(np.asarray(self.orientation, dtype=float))
        self.position = self.rig.center.copy() if self.position is None else np.asarray(self.position, dtype=float)

    def rotate_by(self, R) -> None:
        self.orientation = orthonormalize(np.asarray(R, dtype=float) @ self.orientation)

    def rotate_to(self, R) -> None:
        R = np.array(R, dtype=float)
        self.orientation = R if is_rotation(R) else orthonormalize(R)

    def observe(self) -> Observation:
        return Observation.of(self.object, self.orientation, self.rig, self.position)


def _flat(R) -> list[float]:
    return [float(x) for x in np.asarray(R).reshape(-1)]


@dataclass
class IterationRecord:
    restart: int
    iteration: int
    proposed: np.ndarray
    executed: np.ndarray
    quality: float | None
    rotation_angle: float
    upright_error: float
    twist: float = 0.0

    def to_dict(self) -> dict:
        return {
            "restart": self.restart,
            "iteration": self.iteration,
            "proposed": _flat(self.proposed),
            "executed": _flat(self.executed),
            "quality": self.quality,
            "rotation_angle": self.rotation_angle,
            "upright_error_deg": math.degrees(self.upright_error),
            "twist": self.twist,
        }


@dataclass
class TrialTrace:
    policy: str
    object_name: str
    initial: np.ndarray
    records: list[IterationRecord] = field(default_factory=list)
    trial_id: int = 0
    final_orientation: np.ndarray | None = None
    rest_orientation: np.ndarray | None = None
    settled: bool = False
    tips: int = 0
    success: bool = False
    stable: bool = False
    angular_error: float = float("nan")
    terminated: bool = False
    restarts: int = 0
    flipped: bool | None = None
    error: str | None = None
    twist_invariant: bool | None = None
    upright: np.ndarray | None = None
    test_set: int | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    def to_dict(self) -> dict:
        return {
            "trial_id": self.trial_id,
            "policy": self.policy,
            "object": self.object_name,
            "initial": _flat(self.initial),
            "records": [r.to_dict() for r in self.records],
            "iterations": self.iterations,
            "final_orientation": None if self.final_orientation is None else _flat(self.final_orientation),
            "rest_orientation": None if self.rest_orientation is None else _flat(self.rest_orientation),
            "settled": self.settled,
            "tips": self.tips,
            "success": self.success,
            "stable": self.stable,
            "angular_error_deg": self.angular_error,
            "terminated": self.terminated,
            "restarts": self.restarts,
            "flipped": self.flipped,
            "error": self.error,
            "twist_invariant": self.twist_invariant,
            "upright": None if self.upright is None else _flat(self.upright),
            "test_set": self.test_set,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def canonicalize_execution(R_proposed) -> np.ndarray:
    """Pre-twist about z so the executed rotation is as small as possible.

    Placement outcomes are unchanged because a rotation about the stable axis
    does not move the upright vector's z-component.
    """
    R = np.asarray(R_proposed, dtype=float)
    return orthonormalize(rot_z(min_twist_angle(R)) @ R)


def _view(estimator, obs: Observation) -> Observation:
    return obs if getattr(estimator, "uses_oracle", False) else obs.without_oracle()


def _execute(world: SimWorld, trace: TrialTrace, rot_est, rot_s, cfg: ControllerConfig, restart: int) -> IterationRecord:
    proposed = rot_s.estimate(_view(rot_est, world.observe()))
    executed_rot = proposed
    twist = 0.0
    if cfg.canonicalize:
        twist = min_twist_angle(proposed)
        executed_rot = canonicalize_execution(proposed)
    world.rotate_by(executed_rot)
    rec = IterationRecord(
        restart=restart,
        iteration=len(trace.records) + 1,
        proposed=np.asarray(proposed, dtype=float),
        executed=world.orientation.copy(),
        quality=None,
        rotation_angle=rotation_angle(proposed),
        upright_error=upright_angle(world.orientation, world.object.upright),
        twist=twist,
    )
    trace.records.append(rec)
    return rec


def run_trial(world: SimWorld, rot_est, qual_est, cfg: ControllerConfig,
              settle_params: SettleParams = DEFAULT_PARAMS, trial_id: int = 0,
              upright_tol: float = UPRIGHT_TOL) -> TrialTrace:
    """Run one placement trial and finalize it by settling the object.

    The world's generator drives restarts; estimator sessions get their own
    children of it, so the three random streams never interleave.
    """
    rot_rng, qual_rng = world.rng.spawn(2)
    trace = TrialTrace(cfg.policy, world.object.name, world.orientation.copy(), trial_id=trial_id,
                       upright=world.object.upright.copy())
    try:
        rot_s = rot_est.new_trial(rot_rng)
        trace.flipped = getattr(rot_s, "flipped", None)
        if cfg.policy == "sp":
            _execute(world, trace, rot_est, rot_s, cfg, 0)
            trace.terminated = True
        elif cfg.policy == "itr":
            for _ in range(cfg.max_iter):
                rec = _execute(world, trace, rot_est, rot_s, cfg, 0)
                if rec.rotation_angle < cfg.eps_rotation:
                    trace.terminated = True
                    break
        else:
            qual_s = qual_est.new_trial(qual_rng)
            _run_itrq(world, trace, rot_est, rot_s, qual_est, qual_s, cfg)
    except Exception as exc:  # recorded on the trace; a batch never aborts
        trace.error = f"{type(exc).__name__}: {exc}"
    _finalize(world, trace, cfg, settle_params, upright_tol)
    return trace


def _run_itrq(world, trace, rot_est, rot_s, qual_est, qual_s, cfg: ControllerConfig) -> None:
    for restart in range(cfg.max_restart):
        if restart > 0:
            world.rotate_by(random_rotation(world.rng))
            rot_s.restart()
            qual_s.restart()
            trace.restarts = restart
        for _ in range(cfg.max_iter):
            rec = _execute(world, trace, rot_est, rot_s, cfg, restart)
            # Quality is scored on the observation taken after the rotation.
            rec.quality = float(qual_s.estimate(_view(qual_est, world.observe())))
            if 1.0 - rec.quality < cfg.eps_quality and rec.rotation_angle < cfg.eps_rotation:
                trace.terminated = True
                return
    qualities = [r.quality for r in trace.records]
    best = int(np.argmax(qualities))
    world.rotate_to(trace.records[best].executed)


def _finalize(world: SimWorld, trace: TrialTrace, cfg: ControllerConfig, params: SettleParams,
              tol: float = UPRIGHT_TOL) -> None:
    obj = world.object
    trace.final_orientation = world.orientation.copy()
    rest = settle(obj, world.orientation, params)
    trace.rest_orientation = rest.orientation
    trace.settled = rest.settled
    trace.tips = rest.tips
    trace.angular_error = math.degrees(upright_angle(rest.orientation, obj.upright))
    trace.success = trace.error is None and rest.settled and is_upright(obj, rest.orientation, tol)
    trace.stable = trace.error is None and rest.settled and stability_check(obj, rest.orientation, params)
    if cfg.canonicalize and trace.records:
        # Undo the twist of the execution that produced the final orientation and
        # check the outcome would have been the same without canonicalization.
        match = [r for r in trace.records if np.array_equal(r.executed, trace.final_orientation)]
        twist = match[-1].twist if match else 0.0
        alt = settle(obj, rot_z(-twist) @ trace.final_orientation, params)
        alt_err = math.degrees(upright_angle(alt.orientation, obj.upright))
        alt_success = trace.error is None and alt.settled and is_upright(obj, alt.orientation, tol)
        trace.twist_invariant = bool(alt_success == trace.success and abs(alt_err - trace.angular_error) <= 1e-6)


# --- moving-window filter ----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FilterResult:
    rotation: np.ndarray
    frame: int
    agreed: bool
    window_start: int


def average_rotation(rotations) -> np.ndarray:
    return from_quaternion(quaternion_mean([to_quaternion(R) for R in rotations]))


def _window_spread(window) -> tuple[float, float]:
    """(max pairwise geodesic distance, sum of squared pairwise distances)."""
    d = [geodesic_distance(a, b) for a, b in itertools.combinations(window, 2)]
    return max(d), sum(x * x for x in d)


def filter_rotation_stream(stream, window: int = 5, agree_tol: float = math.radians(10.0), max_frames: int = 100) -> FilterResult:
    """Average the first window of frames that agree within ``agree_tol``.

    Without agreement after ``max_frames`` frames (or when the stream ends)
    the window with the smallest sum of squared pairwise geodesic distances
    is averaged instead. ``frame`` is the 1-based frame count consumed.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    buf: list[np.ndarray] = []
    best = None
    for R in stream:
        buf.append(np.asarray(R, dtype=float))
        n = len(buf)
        if n >= window:
            win = buf[n - window:]
            spread, ssq = _window_spread(win) if window > 1 else (0.0, 0.0)
            if spread <= agree_tol:
                return FilterResult(average_rotation(win), n, True, n - window)
            if best is None or ssq < best[0]:
                best = (ssq, n - window)
        if n >= max_frames:
            break
    if len(buf) < window:
        raise ValueError(f"stream yielded {len(buf)} rotations, fewer than the window of {window}")
    start = best[1]
    return FilterResult(average_rotation(buf[start:start + window]), len(buf), False, start)
