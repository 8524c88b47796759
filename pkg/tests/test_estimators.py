import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from upright.controller import ControllerConfig, SimWorld, run_trial
from upright.estimators import (
    BaselineConfig,
    FlatPlaneBaseline,
    LogisticQualityEstimator,
    Observation,
    OracleAccessError,
    OracleQualityEstimator,
    OracleRotationEstimator,
    QualityEstimatorConfig,
    QualityModel,
    RotationEstimatorConfig,
    UnbalancedDatasetError,
    check_balance,
    flat_plane_baseline,
    image_features,
    oracle_rotation_estimate,
    quality_predict,
    round_trip,
    train_logistic_features,
    train_logistic_quality,
)
from upright.geometry.objects import generate_object, make_test_solid
from upright.render import CameraRig, DepthImage
from upright.resting import is_upright, settle
from upright.so3 import (
    from_euler,
    geodesic_distance,
    ground_truth_rotation,
    random_rotation,
    rot_x,
    upright_angle,
)

RIG = CameraRig.standard(3)
TEN = math.radians(10)
PERFECT = RotationEstimatorConfig(sigma=0.0, p_flip=0.0)


def gt_for(obj, R):
    return ground_truth_rotation(R @ obj.upright)


# --- rotation oracle ---------------------------------------------------------------

@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.sampled_from(["bottle", "jar", "mug"]))
def test_perfect_oracle_exact_and_upright(seed, family):
    rng = np.random.default_rng(seed)
    obj = generate_object(family, seed % 3)
    R = random_rotation(rng)
    session = OracleRotationEstimator(PERFECT).new_trial(rng)
    est = session.estimate(Observation.of(obj, R, RIG))
    assert geodesic_distance(est, gt_for(obj, R)) <= 1e-9
    assert is_upright(obj, est @ R)


def test_flipped_trial_steers_upside_down():
    obj = generate_object("jar", 0)
    cfg = RotationEstimatorConfig(sigma=0.0, p_flip=1.0)
    session = OracleRotationEstimator(cfg).new_trial(np.random.default_rng(0))
    assert session.flipped
    R = np.eye(3)
    for _ in range(4):
        R = session.estimate(Observation.of(obj, R, RIG)) @ R
        assert np.allclose(R @ obj.upright, [0, 0, -1], atol=1e-12)


def test_half_normal_error_mean():
    cfg = RotationEstimatorConfig(sigma=TEN, p_flip=0.0)
    obj = make_test_solid("cube", size=0.1)
    rng = np.random.default_rng(123)
    errs = []
    for _ in range(10_000):
        R = random_rotation(rng)
        est, _ = oracle_rotation_estimate(Observation.of(obj, R, RIG), cfg, rng)
        errs.append(geodesic_distance(est, gt_for(obj, R)))
    expected = math.degrees(TEN) * math.sqrt(2 / math.pi)
    assert abs(math.degrees(np.mean(errs)) - expected) <= 0.5


def test_flip_frequency():
    est = OracleRotationEstimator(RotationEstimatorConfig(p_flip=0.25))
    rng = np.random.default_rng(7)
    flips = [est.new_trial(child).flipped for child in rng.spawn(10_000)]
    assert abs(np.mean(flips) - 0.25) <= 0.02


def test_flip_redraw_switch():
    keep = RotationEstimatorConfig(p_flip=0.5, flip_redraw_on_restart=False)
    s = OracleRotationEstimator(keep).new_trial(np.random.default_rng(1))
    before = s.flipped
    for _ in range(20):
        s.restart()
        assert s.flipped == before
    redraw = OracleRotationEstimator(RotationEstimatorConfig(p_flip=0.5)).new_trial(np.random.default_rng(1))
    seen = set()
    for _ in range(20):
        redraw.restart()
        seen.add(redraw.flipped)
    assert seen == {True, False}


@pytest.mark.parametrize("rep", ["quaternion", "euler"])
def test_representation_round_trip(rep):
    obj = generate_object("bottle", 1)
    base = RotationEstimatorConfig(sigma=TEN, p_flip=0.0)
    other = RotationEstimatorConfig(sigma=TEN, p_flip=0.0, output_rep=rep)
    rng = np.random.default_rng(3)
    for _ in range(500):
        R = random_rotation(rng)
        obs = Observation.of(obj, R, RIG)
        seed = int(rng.integers(2**32))
        a, _ = oracle_rotation_estimate(obs, base, np.random.default_rng(seed))
        b, locked = oracle_rotation_estimate(obs, other, np.random.default_rng(seed))
        if not locked:
            assert geodesic_distance(a, b) <= 1e-9


def test_euler_gimbal_flagged():
    R = from_euler(0.3, math.pi / 2, -0.2)
    assert round_trip(R, "euler")[1]
    assert not round_trip(R, "sixd")[1]
    with pytest.raises(ValueError):
        round_trip(R, "matrix")


def test_config_validation():
    with pytest.raises(ValueError):
        RotationEstimatorConfig(sigma=-1)
    with pytest.raises(ValueError):
        RotationEstimatorConfig(p_flip=1.5)
    with pytest.raises(ValueError):
        RotationEstimatorConfig(output_rep="matrix")
    with pytest.raises(ValueError):
        QualityEstimatorConfig(eta=0.5)
    with pytest.raises(ValueError):
        QualityEstimatorConfig(score_low=0.9, score_high=0.5)


# --- quality oracle ----------------------------------------------------------------

def test_quality_oracle_scores():
    bottle = generate_object("bottle", 0)
    s = OracleQualityEstimator().new_trial(np.random.default_rng(0))
    assert s.estimate(Observation.of(bottle, np.eye(3), RIG)) == 0.95
    assert s.estimate(Observation.of(bottle, rot_x(math.pi / 2), RIG)) == 0.05


def test_quality_inversion_frequency():
    cube = make_test_solid("cube", size=0.1)
    s = OracleQualityEstimator(QualityEstimatorConfig(eta=0.1)).new_trial(np.random.default_rng(5))
    obs = Observation.of(cube, np.eye(3), RIG)
    scores = np.array([s.estimate(obs) for _ in range(10_000)])
    assert abs(np.mean(scores == 0.05) - 0.10) <= 0.01
    assert s.inversions == int(np.sum(scores == 0.05))


# --- oracle separation ---------------------------------------------------------------

def test_stripped_observation_hides_truth():
    obs = Observation.of(make_test_solid("box"), np.eye(3), RIG)
    assert obs.has_oracle and obs.true_orientation is not None
    bare = obs.without_oracle()
    assert not bare.has_oracle
    with pytest.raises(OracleAccessError):
        bare.true_orientation
    with pytest.raises(OracleAccessError):
        bare.object_ref
    assert len(bare.depth_images) == 3


def test_observation_is_lazy():
    calls = []
    obs = Observation(lambda rig: calls.append(rig) or [], RIG, np.eye(3), None)
    obs.true_orientation
    assert calls == []
    obs.depth_images
    obs.depth_images
    assert len(calls) == 1


class SpyRotation:
    uses_oracle = False

    def __init__(self):
        self.seen = []

    def new_trial(self, rng):
        return self

    def restart(self):
        pass

    def estimate(self, obs):
        self.seen.append(obs.has_oracle)
        return np.eye(3)


class SpyQuality(SpyRotation):
    def estimate(self, obs):
        self.seen.append(obs.has_oracle)
        return 0.5


def test_controller_strips_oracle_for_non_oracle_estimators():
    rot, qual = SpyRotation(), SpyQuality()
    world = SimWorld(make_test_solid("box"), np.eye(3), RIG, np.random.default_rng(0))
    trace = run_trial(world, rot, qual, ControllerConfig(max_iter=2, max_restart=2, policy="itrq"))
    assert trace.error is None
    assert rot.seen and qual.seen
    assert not any(rot.seen) and not any(qual.seen)


# --- flat-plane baseline --------------------------------------------------------------

def test_baseline_is_non_oracle():
    assert FlatPlaneBaseline.uses_oracle is False
    assert LogisticQualityEstimator.uses_oracle is False


def test_baseline_box_long_face_down():
    box = make_test_solid("box", size=(0.08, 0.04, 0.04))
    rng = np.random.default_rng(8)
    for _ in range(6):
        R = random_rotation(rng)
        est = flat_plane_baseline(box, R, RIG)
        placed = est @ R
        down = placed.T @ np.array([0.0, 0.0, -1.0])  # object-frame direction that faces the table
        # The 8x4 faces have normals along the object's y or z axis.
        assert abs(down[0]) <= math.sin(math.radians(5))
        assert max(abs(down[1]), abs(down[2])) >= math.cos(math.radians(5))


def test_baseline_cone_placed_upright():
    cone = make_test_solid("cone")
    rng = np.random.default_rng(9)
    for _ in range(5):
        R = random_rotation(rng)
        placed = flat_plane_baseline(cone, R, RIG) @ R
        assert upright_angle(placed, cone.upright) <= math.radians(5)
        rest = settle(cone, placed)
        assert rest.settled and is_upright(cone, rest.orientation)


def test_baseline_deterministic():
    mug = generate_object("mug", 0)
    R = random_rotation(np.random.default_rng(2))
    a = flat_plane_baseline(mug, R, RIG, BaselineConfig(seed=3))
    b = flat_plane_baseline(mug, R, RIG, BaselineConfig(seed=3))
    assert np.array_equal(a, b)


# --- logistic quality ---------------------------------------------------------------

def separable_dataset(n, rng):
    """Label decided by the sign of the mean of a fixed pixel block in camera 0."""
    data = []
    for i in range(n):
        label = i % 2 == 0
        imgs = []
        for cam in range(3):
            px = rng.uniform(-0.5, 0.5, (64, 64)).astype(np.float32)
            if cam == 0:
                px[:16, :16] = (0.3 if label else -0.3) + rng.uniform(-0.1, 0.1, (16, 16))
            imgs.append(DepthImage(px, np.zeros((64, 64), bool), cam, (0.1, 0.3)))
        data.append((imgs, label))
    return data


def test_logistic_separable():
    data = separable_dataset(200, np.random.default_rng(0))
    model = train_logistic_quality(data, epochs=200)
    acc = np.mean([(quality_predict(model, imgs) >= 0.5) == lbl for imgs, lbl in data])
    assert acc >= 0.99
    assert model.weights.shape == (3 * 64 * 64,)


def test_logistic_deterministic():
    X = np.random.default_rng(1).normal(size=(40, 5))
    y = np.arange(40) % 2 == 0
    a = train_logistic_features(X, y, epochs=50, seed=4)
    b = train_logistic_features(X, y, epochs=50, seed=4)
    assert np.array_equal(a[0], b[0]) and a[1] == b[1]


def test_balance_rule():
    with pytest.raises(UnbalancedDatasetError, match="3 positive / 0 negative"):
        check_balance([True, True, True])
    with pytest.raises(UnbalancedDatasetError):
        train_logistic_features(np.zeros((3, 2)), [True, False, False])
    with pytest.raises(UnbalancedDatasetError):
        train_logistic_quality([])
    check_balance([True, False])


def test_model_serialization():
    rng = np.random.default_rng(0)
    model = QualityModel(rng.normal(size=3 * 4096), 0.25, 3)
    data = model.to_bytes()
    assert len(data) == 20 + 8 * 3 * 4096 + 8
    back = QualityModel.from_bytes(data)
    assert np.array_equal(back.weights, model.weights) and back.bias == 0.25 and back.n_cameras == 3
    assert back.to_bytes() == data
    with pytest.raises(ValueError):
        QualityModel.from_bytes(b"X" + data[1:])
    with pytest.raises(ValueError):
        QualityModel.from_bytes(data[:-1])


def test_model_camera_count_checked():
    model = QualityModel(np.zeros(4096), 0.0, 1)
    imgs = separable_dataset(2, np.random.default_rng(0))[0][0]
    with pytest.raises(ValueError):
        model.predict(imgs)
    assert model.predict(imgs[:1]) == 0.5
    assert image_features(imgs).shape == (3 * 4096,)
