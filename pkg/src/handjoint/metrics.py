"""Tangent error of an estimated joint and the two baseline estimators.

The tangent error compares, over the articulation range, the direction in
which the estimated and the true joint let the grasp point move. Axis
direction signs are a gauge, so each sample uses the smaller of the angle
and its supplement.
"""

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import scipy.integrate
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from scipy.spatial.transform import Rotation

from .config import PipelineConfig
from .core import (
    AxisSpherical,
    HandJointError,
    Matrix,
    Pose6,
    Vector,
    exp_map,
    invert_transform,
    log_map,
    rigid_alignment,
    rotation_about_line,
    translation_transform,
)
from .joint_estimator import JointModel, JointType, PrismaticState, RevoluteState, canonicalize
from .landmark_filter import LandmarkBank, LandmarkObservation

logger = logging.getLogger(__name__)

DEFAULT_SAMPLES = 100
MIN_RADIUS = 1e-9
# rigid-hand baseline: motion below both bounds cannot be classified
MIN_MOTION_ANGLE = math.radians(1.0)
MIN_MOTION_TRANSLATION = 0.001
REVOLUTE_ANGLE = math.radians(5.0)
# circle fit must beat the line fit by this factor to call a track revolute
CIRCLE_PREFERENCE = 0.9

Point = Tuple[float, float, float]
Frame = Tuple[float, Sequence[LandmarkObservation]]


class GroundTruthJoint(BaseModel):
    """Known joint of a simulated or measured object."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    type: JointType = Field(description="prismatic or revolute")
    axis_direction: Point = Field(description="Unit axis direction")
    axis_point: Optional[Point] = Field(default=None, description="A point on a revolute axis")
    q_max: float = Field(gt=0, description="Articulation range in radians or meters")
    grasp_point: Optional[Point] = Field(
        default=None, description="Point whose tangent is evaluated, at q = 0"
    )

    @field_validator("type")
    @classmethod
    def _articulated(cls, value: JointType) -> JointType:
        if value not in (JointType.PRISMATIC, JointType.REVOLUTE):
            raise ValueError(f"ground truth must be prismatic or revolute, got {value.value}")
        return value

    @field_validator("axis_direction")
    @classmethod
    def _unit(cls, value: Point) -> Point:
        norm = math.sqrt(sum(c * c for c in value))
        if norm < 1e-12:
            raise ValueError("axis_direction must be non-zero")
        return (value[0] / norm, value[1] / norm, value[2] / norm)

    @model_validator(mode="after")
    def _revolute_point(self) -> "GroundTruthJoint":
        if self.type is JointType.REVOLUTE and self.axis_point is None:
            raise ValueError("revolute ground truth needs axis_point")
        return self

    @property
    def direction(self) -> Vector:
        return np.array(self.axis_direction, dtype=np.float64)

    @property
    def point(self) -> Vector:
        return np.array(self.axis_point if self.axis_point is not None else (0.0, 0.0, 0.0))

    def articulation(self, q: float) -> Matrix:
        """World transform that moves the object from 0 to ``q``."""
        if self.type is JointType.PRISMATIC:
            return translation_transform(q * self.direction)
        return rotation_about_line(self.direction, self.point, q)

    def articulate(self, q: float, point: Sequence[float]) -> Vector:
        transform = self.articulation(q)
        return transform[:3, :3] @ np.asarray(point, dtype=np.float64) + transform[:3, 3]

    def to_joint_model(self) -> JointModel:
        return joint_model_from_axis(self.type, self.direction, self.point)


def joint_model_from_axis(
    joint_type: JointType, direction: Sequence[float], point: Optional[Sequence[float]] = None
) -> JointModel:
    """Articulated model with the given axis and no uncertainty."""
    axis = AxisSpherical.from_direction(direction)
    if joint_type is JointType.PRISMATIC:
        return JointModel(joint_type, PrismaticState(axis, 0.0, 0.0, np.zeros((4, 4))))
    if joint_type is JointType.REVOLUTE:
        if point is None:
            raise ValueError("revolute model needs an axis point")
        d = axis.direction
        p = np.asarray(point, dtype=np.float64)
        return JointModel(
            joint_type, RevoluteState(axis, p - float(d @ p) * d, 0.0, 0.0, np.zeros((7, 7)))
        )
    raise ValueError(f"{joint_type.value} model has no axis")


def _tangent(joint_type: JointType, direction: Vector, point: Vector, at: Vector) -> Vector:
    if joint_type is JointType.PRISMATIC:
        return direction / np.linalg.norm(direction)
    tangent = np.cross(direction, at - point)
    norm = float(np.linalg.norm(tangent))
    if norm < MIN_RADIUS:
        raise UndefinedTangentError(f"Point {at.tolist()} lies on the revolute axis")
    return tangent / norm


def tangent_at(joint: GroundTruthJoint, q: float, grasp_point: Optional[Sequence[float]] = None) -> Vector:
    """Unit direction of motion of the grasp point at joint coordinate ``q``."""
    grasp = grasp_point if grasp_point is not None else joint.grasp_point
    if grasp is None:
        raise ValueError("No grasp point given")
    return _tangent(joint.type, joint.direction, joint.point, joint.articulate(q, grasp))


def _angle_deg(a: Vector, b: Vector) -> float:
    cosine = abs(float(a @ b))
    return math.degrees(math.acos(min(1.0, cosine)))


def tangent_error(est: JointModel, gt: GroundTruthJoint, samples: int = DEFAULT_SAMPLES) -> float:
    """Mean angle in degrees between estimated and true tangents over [0, q_max].

    Both tangents are evaluated at the true grasp point location. When both
    joints are prismatic the tangents are constant and the single angle is
    returned.
    """
    if samples < 2:
        raise ValueError(f"Tangent error needs at least 2 samples, got {samples}")
    if not est.is_articulated:
        raise ValueError(f"Cannot evaluate the tangent of a {est.type.value} model")
    if gt.grasp_point is None:
        raise ValueError("Ground truth has no grasp point")
    est_type = est.type
    est_direction = est.axis_direction
    est_point = est.axis_point if est.axis_point is not None else np.zeros(3)
    assert est_direction is not None

    if est_type is JointType.PRISMATIC and gt.type is JointType.PRISMATIC:
        return _angle_deg(est_direction / np.linalg.norm(est_direction), gt.direction)

    qs = np.linspace(0.0, gt.q_max, samples)
    errors = np.empty(samples)
    for i, q in enumerate(qs):
        at = gt.articulate(float(q), gt.grasp_point)
        errors[i] = _angle_deg(
            _tangent(est_type, est_direction, est_point, at),
            _tangent(gt.type, gt.direction, gt.point, at),
        )
    return float(scipy.integrate.trapezoid(errors, qs) / gt.q_max)


def _rms(values: Vector) -> float:
    return float(np.sqrt(np.mean(values**2))) if values.size else 0.0


def _fit_line(points: Matrix) -> Tuple[Vector, Vector, float]:
    centroid = points.mean(axis=0)
    _, _, vt = np.linalg.svd(points - centroid)
    direction = vt[0]
    offsets = points - centroid
    perpendicular = offsets - np.outer(offsets @ direction, direction)
    return direction, centroid, _rms(np.linalg.norm(perpendicular, axis=1))


def _fit_circle(points: Matrix) -> Optional[Tuple[Vector, Vector, float, float]]:
    """Plane by SVD, then an algebraic circle fit in that plane.

    Returns (normal, center, radius, rms distance to the circle), or None
    when the points are collinear.
    """
    centroid = points.mean(axis=0)
    _, singular, vt = np.linalg.svd(points - centroid)
    if singular[1] < 1e-12:
        return None
    u, v, normal = vt[0], vt[1], vt[2]
    offsets = points - centroid
    x, y = offsets @ u, offsets @ v
    A = np.column_stack([2.0 * x, 2.0 * y, np.ones_like(x)])
    (cx, cy, c), _, rank, _ = np.linalg.lstsq(A, x**2 + y**2, rcond=None)
    if rank < 3:
        return None
    radius = math.sqrt(max(0.0, c + cx**2 + cy**2))
    center = centroid + cx * u + cy * v
    in_plane = np.hypot(x - cx, y - cy) - radius
    height = offsets @ normal
    return normal, center, radius, _rms(np.hypot(in_plane, height))


def baseline_single_point(
    track: Sequence[Tuple[float, Sequence[float]]], config: Optional[PipelineConfig] = None
) -> JointModel:
    """Screw fit to the trajectory of a single landmark.

    A line and a circle are fitted to the track; the circle wins when its
    residual is clearly lower and its radius is within the model selection
    radius cap.
    """
    config = config or PipelineConfig()
    if len(track) < 3:
        raise DegenerateTrackError(f"Single-point fit needs at least 3 points, got {len(track)}")
    points = np.array([pos for _, pos in track], dtype=np.float64)
    if np.ptp(points, axis=0).max() < 1e-9:
        raise DegenerateTrackError("All track points coincide")

    direction, _, line_rms = _fit_line(points)
    circle = _fit_circle(points)
    if circle is not None:
        normal, center, radius, circle_rms = circle
        logger.debug(
            f"Single-point fit: line rms {line_rms:.5f}, circle rms {circle_rms:.5f}, r={radius:.3f}"
        )
        if circle_rms < CIRCLE_PREFERENCE * line_rms and radius <= config.model_select.radius_cap:
            start, end = points[0] - center, points[-1] - center
            swept = math.atan2(float(normal @ np.cross(start, end)), float(start @ end))
            model = joint_model_from_axis(JointType.REVOLUTE, normal, center)
            assert model.params is not None
            return JointModel(JointType.REVOLUTE, canonicalize(model.params.at(swept)))

    travel = float((points[-1] - points[0]) @ direction)
    model = joint_model_from_axis(JointType.PRISMATIC, direction)
    assert model.params is not None
    return JointModel(JointType.PRISMATIC, canonicalize(model.params.at(travel)))


def single_point_track(
    frames: Sequence[Frame], config: Optional[PipelineConfig] = None
) -> List[Tuple[float, Vector]]:
    """Filtered trajectory of the longest-lived landmark filter.

    Every landmark runs through the landmark-level filters. A trajectory is
    one filter's lifetime, from spawn until it is lost, so a landmark that is
    dropped or gated long enough to be respawned starts a new trajectory.
    The longest trajectory is returned, the earliest one on ties.
    """
    config = config or PipelineConfig()
    bank = LandmarkBank(config)
    tracks: List[List[Tuple[float, Vector]]] = []
    current: Dict[int, List[Tuple[float, Vector]]] = {}
    for t, observations in frames:
        frame = bank.process_frame(t, observations)
        for m in frame.measurements:
            if frame.outcomes.get(m.id) == "spawned" or m.id not in current:
                current[m.id] = []
                tracks.append(current[m.id])
            current[m.id].append((t, m.pos.copy()))
        for landmark_id in bank.finish_frame():
            current.pop(landmark_id, None)
    if not tracks:
        raise DegenerateTrackError("No landmark observation was accepted")
    best = max(tracks, key=len)
    logger.debug(f"Single-point baseline uses a {len(best)} point trajectory of {len(tracks)}")
    return best


def rigid_hand_poses(frames: Sequence[Frame]) -> List[Tuple[float, Pose6]]:
    """Per-frame rigid fit of all raw landmarks onto their first observation.

    No visibility filter, gating or uncertainty weighting is applied.
    Frames sharing fewer than three landmarks with the reference are skipped.
    """
    reference: Optional[Dict[int, Vector]] = None
    poses: List[Tuple[float, Pose6]] = []
    for t, observations in frames:
        positions = {obs.id: obs.pos for obs in observations}
        if reference is None:
            if len(positions) >= 3:
                reference = positions
                poses.append((t, Pose6.identity()))
            continue
        common = sorted(reference.keys() & positions.keys())
        if len(common) < 3:
            continue
        source = np.array([reference[i] for i in common])
        target = np.array([positions[i] for i in common])
        poses.append((t, log_map(rigid_alignment(source, target))))
    return poses


def baseline_rigid_hand(poses: Sequence[Tuple[float, Pose6]]) -> JointModel:
    """Screw fit to the hand motion relative to its first pose.

    The joint is revolute when the median rotation over the last quarter of
    the sequence reaches 5 degrees; the axis is then the angle-weighted mean
    screw axis of those poses. Otherwise the translation directions give a
    prismatic axis.
    """
    if len(poses) < 2:
        raise InsufficientMotionError(f"Rigid-hand fit needs at least 2 poses, got {len(poses)}")
    first_inverse = invert_transform(exp_map(poses[0][1]))
    relative = [exp_map(pose) @ first_inverse for _, pose in poses[1:]]
    rotvecs = np.array([Rotation.from_matrix(T[:3, :3]).as_rotvec() for T in relative])
    translations = np.array([T[:3, 3] for T in relative])
    angles = np.linalg.norm(rotvecs, axis=1)
    distances = np.linalg.norm(translations, axis=1)
    if angles.max() < MIN_MOTION_ANGLE and distances.max() < MIN_MOTION_TRANSLATION:
        raise InsufficientMotionError(
            f"Hand moved {math.degrees(angles.max()):.2f} deg and {1000 * distances.max():.2f} mm"
        )

    tail = slice(len(relative) - max(1, len(relative) // 4), None)
    if float(np.median(angles[tail])) >= REVOLUTE_ANGLE:
        reference_axis = rotvecs[tail][-1] / angles[tail][-1]
        direction_sum = np.zeros(3)
        point_sum = np.zeros(3)
        weight_sum = 0.0
        for T, rotvec, angle in zip(
            np.array(relative)[tail], rotvecs[tail], angles[tail]
        ):
            if angle < MIN_MOTION_ANGLE:
                continue
            d = rotvec / angle
            sign = 1.0 if d @ reference_axis >= 0 else -1.0
            t_perp = T[:3, 3] - float(d @ T[:3, 3]) * d
            point = np.linalg.pinv(np.eye(3) - T[:3, :3]) @ t_perp
            direction_sum += angle * sign * d
            point_sum += angle * point
            weight_sum += angle
        direction = direction_sum / np.linalg.norm(direction_sum)
        model = joint_model_from_axis(JointType.REVOLUTE, direction, point_sum / weight_sum)
        assert model.params is not None
        return JointModel(JointType.REVOLUTE, canonicalize(model.params.at(float(angles[-1]))))

    _, _, vt = np.linalg.svd(translations)
    direction = vt[0]
    travel = float(translations[-1] @ direction)
    model = joint_model_from_axis(JointType.PRISMATIC, direction)
    assert model.params is not None
    return JointModel(JointType.PRISMATIC, canonicalize(model.params.at(travel)))


class UndefinedTangentError(HandJointError):
    """Raised when the tangent is evaluated at a point on a revolute axis."""


class DegenerateTrackError(HandJointError):
    """Raised when a landmark track cannot support a line or circle fit."""


class InsufficientMotionError(HandJointError):
    """Raised when the hand moved too little to classify the joint."""
