import math

import numpy as np
import pytest
from pydantic import ValidationError

from src.handjoint.core import Pose6, exp_map, log_map, rotation_about_line, translation_transform
from src.handjoint.joint_estimator import JointModel, JointType
from src.handjoint.landmark_filter import LandmarkObservation
from src.handjoint.metrics import (
    DegenerateTrackError,
    GroundTruthJoint,
    InsufficientMotionError,
    UndefinedTangentError,
    baseline_rigid_hand,
    baseline_single_point,
    joint_model_from_axis,
    rigid_hand_poses,
    single_point_track,
    tangent_at,
    tangent_error,
)


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)


def gauge_point(direction, point):
    return point - float(direction @ point) * direction


@pytest.fixture
def hinge():
    return GroundTruthJoint(
        type=JointType.REVOLUTE,
        axis_direction=(0.0, 0.0, 1.0),
        axis_point=(0.0, 0.0, 0.0),
        q_max=math.pi / 2,
        grasp_point=(1.0, 0.0, 0.0),
    )


@pytest.fixture
def slider():
    return GroundTruthJoint(
        type=JointType.PRISMATIC,
        axis_direction=(1.0, 0.0, 0.0),
        q_max=0.3,
        grasp_point=(0.0, 0.1, 0.5),
    )


def test_ground_truth_normalizes_direction():
    gt = GroundTruthJoint(type=JointType.PRISMATIC, axis_direction=(0.0, 3.0, 4.0), q_max=0.2)
    np.testing.assert_allclose(gt.direction, [0.0, 0.6, 0.8])


@pytest.mark.parametrize(
    "fields",
    [
        {"type": "prismatic", "axis_direction": (0.0, 0.0, 0.0), "q_max": 0.2},
        {"type": "revolute", "axis_direction": (0.0, 0.0, 1.0), "q_max": 1.0},
        {"type": "rigid", "axis_direction": (0.0, 0.0, 1.0), "q_max": 1.0},
        {"type": "prismatic", "axis_direction": (1.0, 0.0, 0.0), "q_max": 0.0},
    ],
)
def test_ground_truth_rejects_invalid(fields):
    with pytest.raises(ValidationError):
        GroundTruthJoint(**fields)


def test_ground_truth_json_round_trip(hinge):
    assert GroundTruthJoint.model_validate_json(hinge.model_dump_json()) == hinge


def test_prismatic_tangent_is_constant(slider):
    for q in (0.0, 0.1, 0.3):
        np.testing.assert_allclose(tangent_at(slider, q), [1.0, 0.0, 0.0])


def test_revolute_tangent_is_circle_tangent(hinge):
    np.testing.assert_allclose(tangent_at(hinge, 0.0), [0.0, 1.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(tangent_at(hinge, math.pi / 2), [-1.0, 0.0, 0.0], atol=1e-12)


def test_revolute_tangent_matches_finite_difference():
    gt = GroundTruthJoint(
        type=JointType.REVOLUTE,
        axis_direction=(0.2, 1.0, 0.3),
        axis_point=(0.5, 0.0, 0.5),
        q_max=1.5,
        grasp_point=(0.0, 0.05, 0.5),
    )
    step = 1e-6
    for q in np.linspace(0.0, 1.5, 7):
        difference = gt.articulate(q + step, gt.grasp_point) - gt.articulate(q, gt.grasp_point)
        np.testing.assert_allclose(tangent_at(gt, q), unit(difference), atol=1e-5)


def test_tangent_on_axis_is_undefined(hinge):
    with pytest.raises(UndefinedTangentError):
        tangent_at(hinge, 0.3, grasp_point=(0.0, 0.0, 2.0))


def test_exact_estimate_has_zero_error(hinge, slider):
    assert tangent_error(hinge.to_joint_model(), hinge) == pytest.approx(0.0, abs=1e-5)
    assert tangent_error(slider.to_joint_model(), slider) == pytest.approx(0.0, abs=1e-5)


def test_perpendicular_prismatic_is_ninety_degrees(slider):
    estimate = joint_model_from_axis(JointType.PRISMATIC, (0.0, 1.0, 0.0))
    assert tangent_error(estimate, slider) == pytest.approx(90.0)


def test_prismatic_error_is_symmetric():
    a = GroundTruthJoint(
        type=JointType.PRISMATIC, axis_direction=(1.0, 0.2, 0.0), q_max=0.3, grasp_point=(0.0, 0.0, 0.0)
    )
    b = GroundTruthJoint(
        type=JointType.PRISMATIC, axis_direction=(0.3, 1.0, 0.1), q_max=0.3, grasp_point=(0.0, 0.0, 0.0)
    )
    assert tangent_error(a.to_joint_model(), b) == pytest.approx(tangent_error(b.to_joint_model(), a))


def test_error_ignores_estimated_axis_sign(hinge):
    tilted = (0.0, -math.sin(0.2), math.cos(0.2))
    flipped = tuple(-c for c in tilted)
    a = tangent_error(joint_model_from_axis(JointType.REVOLUTE, tilted, (0.0, 0.0, 0.0)), hinge)
    b = tangent_error(joint_model_from_axis(JointType.REVOLUTE, flipped, (0.0, 0.0, 0.0)), hinge)
    assert a == pytest.approx(b)
    assert a > 1.0


def test_tilted_axis_error_approaches_tilt_for_small_range():
    tilt = math.radians(5.0)
    gt = GroundTruthJoint(
        type=JointType.REVOLUTE,
        axis_direction=(0.0, 0.0, 1.0),
        axis_point=(0.0, 0.0, 0.0),
        q_max=1e-4,
        grasp_point=(1.0, 0.0, 0.0),
    )
    estimate = joint_model_from_axis(
        JointType.REVOLUTE, (0.0, -math.sin(tilt), math.cos(tilt)), (0.0, 0.0, 0.0)
    )
    assert tangent_error(estimate, gt) == pytest.approx(5.0, abs=1e-3)


def test_quadrature_converges(hinge):
    estimate = joint_model_from_axis(JointType.REVOLUTE, (0.1, -0.1, 1.0), (0.1, 0.05, 0.0))
    coarse = tangent_error(estimate, hinge, samples=100)
    fine = tangent_error(estimate, hinge, samples=200)
    assert abs(coarse - fine) < 0.01


def test_tangent_error_preconditions(hinge):
    with pytest.raises(ValueError, match="at least 2 samples"):
        tangent_error(hinge.to_joint_model(), hinge, samples=1)
    with pytest.raises(ValueError, match="rigid"):
        tangent_error(JointModel(JointType.RIGID), hinge)


def arc(gt, q_max, count=20, start=(0.0, 0.05, 0.5)):
    return [(0.1 * k, gt.articulate(q, start)) for k, q in enumerate(np.linspace(0.0, q_max, count))]


def test_single_point_fits_line():
    d = unit([0.3, 0.9, 0.1])
    track = [(0.1 * k, np.array([0.0, 0.05, 0.5]) + s * d) for k, s in enumerate(np.linspace(0, 0.3, 20))]
    model = baseline_single_point(track)
    assert model.type is JointType.PRISMATIC
    assert abs(float(model.axis_direction @ d)) == pytest.approx(1.0, abs=1e-12)


def test_single_point_fits_circle():
    d = unit([0.2, 1.0, 0.1])
    a = np.array([0.5, 0.0, 0.5])
    gt = GroundTruthJoint(
        type=JointType.REVOLUTE, axis_direction=tuple(d), axis_point=tuple(a), q_max=math.pi / 2
    )
    model = baseline_single_point(arc(gt, math.pi / 2))
    assert model.type is JointType.REVOLUTE
    assert abs(float(model.axis_direction @ d)) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(model.axis_point, gauge_point(d, a), atol=1e-6)


def test_single_point_rejects_degenerate_tracks():
    with pytest.raises(DegenerateTrackError, match="at least 3"):
        baseline_single_point([(0.0, (0.0, 0.0, 0.0)), (0.1, (0.1, 0.0, 0.0))])
    with pytest.raises(DegenerateTrackError, match="coincide"):
        baseline_single_point([(0.1 * k, (0.2, 0.1, 0.5)) for k in range(10)])


def test_single_point_track_prefers_steadiest_landmark():
    frames = []
    for k in range(30):
        observations = [LandmarkObservation(k / 30, 5, (0.1, 0.0, 0.5))]
        if k % 2 == 0:
            observations.append(LandmarkObservation(k / 30, 6, (0.2, 0.0, 0.5)))
        observations.append(LandmarkObservation(k / 30, 0, (0.0, 0.0, 0.5)))
        frames.append((k / 30, observations))
    track = single_point_track(frames)
    assert len(track) == 30
    np.testing.assert_allclose(track[0][1], [0.1, 0.0, 0.5])


def test_single_point_track_without_landmarks():
    frames = [(k / 30, [LandmarkObservation(k / 30, 0, (0.0, 0.0, 0.5))]) for k in range(5)]
    with pytest.raises(DegenerateTrackError):
        single_point_track(frames)


def test_single_point_track_restarts_after_loss():
    frames = []
    for k in range(30):
        observations = []
        if k != 10:
            observations.append(LandmarkObservation(k / 30, 7, (0.1, 0.0, 0.5)))
        if k < 15:
            observations.append(LandmarkObservation(k / 30, 5, (0.2, 0.0, 0.5)))
        frames.append((k / 30, observations))
    track = single_point_track(frames)
    assert len(track) == 19
    assert track[0][0] == pytest.approx(11 / 30)
    np.testing.assert_allclose(track[0][1], [0.1, 0.0, 0.5])


def test_rigid_hand_poses_recover_transform():
    rng = np.random.default_rng(3)
    points = rng.uniform(-0.1, 0.1, size=(8, 3)) + [0.0, 0.0, 0.5]
    moved = rotation_about_line(unit([0.0, 1.0, 0.2]), np.array([0.4, 0.0, 0.5]), 0.3)
    frames = [
        (0.0, [LandmarkObservation(0.0, i + 1, p) for i, p in enumerate(points)]),
        (0.1, [LandmarkObservation(0.1, i + 1, moved[:3, :3] @ p + moved[:3, 3]) for i, p in enumerate(points)]),
    ]
    poses = rigid_hand_poses(frames)
    assert [t for t, _ in poses] == [0.0, 0.1]
    np.testing.assert_allclose(exp_map(poses[1][1]), moved, atol=1e-9)


def test_rigid_hand_recovers_exact_revolute():
    d = unit([0.2, 1.0, 0.1])
    a = np.array([0.5, 0.0, 0.5])
    poses = [
        (k / 30, log_map(rotation_about_line(d, a, q)))
        for k, q in enumerate(np.linspace(0.0, math.pi / 2, 40))
    ]
    model = baseline_rigid_hand(poses)
    assert model.type is JointType.REVOLUTE
    assert abs(float(model.axis_direction @ d)) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(model.axis_point, gauge_point(d, a), atol=1e-6)


def test_rigid_hand_recovers_exact_prismatic():
    d = unit([1.0, 0.2, 0.0])
    poses = [(k / 30, log_map(translation_transform(s * d))) for k, s in enumerate(np.linspace(0, 0.3, 40))]
    model = baseline_rigid_hand(poses)
    assert model.type is JointType.PRISMATIC
    assert abs(float(model.axis_direction @ d)) == pytest.approx(1.0, abs=1e-9)


def test_rigid_hand_rejects_zero_motion():
    with pytest.raises(InsufficientMotionError):
        baseline_rigid_hand([(k / 30, Pose6.identity()) for k in range(20)])
    with pytest.raises(InsufficientMotionError, match="at least 2"):
        baseline_rigid_hand([(0.0, Pose6.identity())])
