"""Tests for the SE(3) helpers in core."""

import math

import numpy as np
import pytest
import scipy.linalg
from scipy.spatial.transform import Rotation

from src.handjoint.core import (
    AxisSpherical,
    Gaussian,
    Pose6,
    SingularCovarianceError,
    axis_direction,
    compose,
    exp_map,
    exp_map_batch,
    gaussian_log_likelihood,
    log_map,
    log_map_batch,
    log_map_checked,
    normalize_spherical,
    numerical_jacobian,
    rigid_alignment,
    rotation_about_line,
    spherical_directions,
    spherical_to_direction,
    transform_point,
    transform_points,
)


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def random_pose(rng, max_angle=3.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return Pose6(rng.normal(size=3), axis * rng.uniform(0.0, max_angle))


def test_exp_of_identity_is_identity():
    np.testing.assert_array_equal(exp_map(Pose6.identity()), np.eye(4))


def test_exp_of_quarter_turn_about_z():
    transform = exp_map(Pose6(np.zeros(3), np.array([0.0, 0.0, math.pi / 2])))
    expected = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    np.testing.assert_allclose(transform[:3, :3], expected, atol=1e-12)
    np.testing.assert_allclose(transform[:3, 3], np.zeros(3), atol=1e-12)


def test_pure_translation_twist():
    transform = exp_map(Pose6(np.array([1.0, 2.0, 3.0]), np.zeros(3)))
    np.testing.assert_allclose(transform[:3, 3], [1.0, 2.0, 3.0])
    np.testing.assert_allclose(transform[:3, :3], np.eye(3))


def test_log_exp_round_trip(rng):
    for _ in range(200):
        pose = random_pose(rng)
        recovered = log_map(exp_map(pose))
        np.testing.assert_allclose(recovered.vector, pose.vector, atol=1e-9)


def test_round_trip_small_angles(rng):
    for scale in (0.0, 1e-10, 1e-7, 1e-5, 1e-3):
        pose = Pose6(rng.normal(size=3), np.array([scale, -scale, 0.5 * scale]))
        np.testing.assert_allclose(log_map(exp_map(pose)).vector, pose.vector, atol=1e-9)


def test_log_reports_branch_cut():
    pose, near_cut = log_map_checked(exp_map(Pose6(np.zeros(3), np.array([0.0, 0.0, math.pi]))))
    assert near_cut
    assert pose.rotation_angle == pytest.approx(math.pi)
    assert pose.angular[2] > 0.0


def test_oversized_rotation_is_renormalized():
    pose = Pose6(np.zeros(3), np.array([0.0, 0.0, 1.5 * math.pi]))
    assert pose.rotation_angle == pytest.approx(0.5 * math.pi)
    np.testing.assert_allclose(
        exp_map(pose),
        exp_map(Pose6(np.zeros(3), np.array([0.0, 0.0, -0.5 * math.pi]))),
        atol=1e-12,
    )


def test_transform_point_cases():
    np.testing.assert_allclose(transform_point(Pose6.identity(), [1.0, 2.0, 3.0]), [1.0, 2.0, 3.0])
    half_turn = Pose6(np.zeros(3), np.array([0.0, 0.0, math.pi]))
    np.testing.assert_allclose(transform_point(half_turn, [1.0, 0.0, 0.0]), [-1.0, 0.0, 0.0], atol=1e-12)


def test_transform_preserves_distances(rng):
    pose = random_pose(rng)
    points = rng.normal(size=(10, 3))
    moved = transform_points(pose, points)
    before = np.linalg.norm(points[:, None] - points[None], axis=-1)
    after = np.linalg.norm(moved[:, None] - moved[None], axis=-1)
    np.testing.assert_allclose(after, before, atol=1e-12)


def test_transform_points_matches_single_point(rng):
    pose = random_pose(rng)
    points = rng.normal(size=(4, 3))
    moved = transform_points(pose, points)
    for point, expected in zip(points, moved):
        np.testing.assert_allclose(transform_point(pose, point), expected, atol=1e-12)


def test_compose_matches_matrix_product(rng):
    first, second = random_pose(rng, 1.0), random_pose(rng, 1.0)
    composed = compose(first, second)
    np.testing.assert_allclose(exp_map(composed), exp_map(first) @ exp_map(second), atol=1e-9)


def test_axis_direction_poles_and_equator():
    np.testing.assert_allclose(axis_direction(AxisSpherical(0.0, 0.0)), [0.0, 0.0, 1.0])
    np.testing.assert_allclose(axis_direction(AxisSpherical(0.0, math.pi)), [0.0, 0.0, -1.0], atol=1e-12)
    np.testing.assert_allclose(
        axis_direction(AxisSpherical(math.pi / 2, math.pi / 2)), [0.0, 1.0, 0.0], atol=1e-12
    )


def test_axis_from_direction_round_trip(rng):
    for _ in range(50):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        np.testing.assert_allclose(AxisSpherical.from_direction(d).direction, d, atol=1e-12)


def test_normalize_spherical_reflects_theta():
    phi, theta, flipped = normalize_spherical(0.5, -0.3)
    assert flipped
    assert theta == pytest.approx(0.3)
    assert phi == pytest.approx(0.5 + math.pi)
    phi, theta, flipped = normalize_spherical(-0.1, 1.0)
    assert not flipped
    assert phi == pytest.approx(2.0 * math.pi - 0.1)


def test_rotation_about_line_keeps_point_on_axis_fixed():
    point = np.array([1.0, 2.0, 0.0])
    transform = rotation_about_line(np.array([0.0, 0.0, 1.0]), point, 1.2)
    np.testing.assert_allclose(transform[:3, :3] @ point + transform[:3, 3], point, atol=1e-12)


def test_rigid_alignment_recovers_transform(rng):
    truth = exp_map(random_pose(rng))
    source = rng.normal(size=(10, 3))
    target = source @ truth[:3, :3].T + truth[:3, 3]
    np.testing.assert_allclose(rigid_alignment(source, target), truth, atol=1e-8)
    weights = rng.uniform(0.1, 2.0, size=10)
    np.testing.assert_allclose(rigid_alignment(source, target, weights), truth, atol=1e-8)


def test_rigid_alignment_never_returns_reflection(rng):
    source = rng.normal(size=(6, 3))
    target = source * np.array([1.0, 1.0, -1.0])
    rotation = rigid_alignment(source, target)[:3, :3]
    assert np.linalg.det(rotation) == pytest.approx(1.0)


def test_gaussian_log_likelihood_standard_normal():
    value = gaussian_log_likelihood(np.zeros(3), np.eye(3))
    assert value == pytest.approx(-1.5 * math.log(2.0 * math.pi))
    assert Gaussian(np.zeros(2), np.eye(2)).log_likelihood([1.0, 0.0]) == pytest.approx(
        -0.5 - math.log(2.0 * math.pi)
    )


def test_gaussian_log_likelihood_singular_covariance():
    with pytest.raises(SingularCovarianceError):
        gaussian_log_likelihood(np.zeros(2), np.zeros((2, 2)))


def test_gaussian_rejects_indefinite_covariance():
    with pytest.raises(ValueError, match="positive semidefinite"):
        Gaussian(np.zeros(2), np.diag([1.0, -1.0]))


def test_numerical_jacobian_of_linear_map(rng):
    a = rng.normal(size=(4, 3))
    x = rng.normal(size=3)
    value, jac = numerical_jacobian(lambda xs: xs @ a.T, x)
    np.testing.assert_allclose(value, a @ x, atol=1e-12)
    np.testing.assert_allclose(jac, a, atol=1e-8)


def test_numerical_jacobian_of_rotation(rng):
    w = rng.normal(size=3)
    point = np.array([0.3, -0.2, 0.5])
    _, jac = numerical_jacobian(lambda ws: Rotation.from_rotvec(ws).apply(point), np.zeros(3))
    np.testing.assert_allclose(jac @ w, np.cross(w, point), atol=1e-8)


def hat(twist):
    w = twist[3:]
    matrix = np.zeros((4, 4))
    matrix[:3, :3] = [[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]]
    matrix[:3, 3] = twist[:3]
    return matrix


def test_batch_maps_match_matrix_exponential(rng):
    twists = np.vstack([random_pose(rng).vector for _ in range(20)] + [np.array([0.1, 0.2, 0.3, 1e-6, 0.0, 0.0])])
    rotations, translations = exp_map_batch(twists)
    for twist, rotation, translation in zip(twists, rotations, translations):
        expected = scipy.linalg.expm(hat(twist))
        np.testing.assert_allclose(rotation, expected[:3, :3], atol=1e-10)
        np.testing.assert_allclose(translation, expected[:3, 3], atol=1e-10)
    recovered, near_cut = log_map_batch(rotations, translations)
    np.testing.assert_allclose(recovered, twists, atol=1e-9)
    assert not near_cut.any()


def test_spherical_directions_match_scalar_form(rng):
    phi, theta = rng.uniform(-4.0, 4.0, size=5), rng.uniform(-4.0, 4.0, size=5)
    expected = np.array([spherical_to_direction(p, t) for p, t in zip(phi, theta)])
    np.testing.assert_allclose(spherical_directions(phi, theta), expected, atol=1e-15)
