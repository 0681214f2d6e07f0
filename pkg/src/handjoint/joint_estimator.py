"""Kinematic model estimation from the body pose trajectory.

A prismatic and a revolute EKF run side by side, each explaining the
measured body pose as an articulation of the reference pose. A rigid
candidate scores the hypothesis that nothing moved. The selector compares
windowed log-likelihoods and reports the winning model.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Deque, Dict, List, Optional, Tuple, Union

import numpy as np
from scipy.spatial.transform import Rotation

from .config import PipelineConfig
from .core import (
    AxisSpherical,
    InvalidTimeStepError,
    Matrix,
    Pose6,
    Vector,
    Velocity6,
    as_vector,
    canonical_sign,
    exp_map,
    gaussian_log_likelihood,
    invert_transform,
    log_map,
    log_map_batch,
    normalize_spherical,
    numerical_jacobian,
    rotation_about_line,
    spherical_directions,
    spherical_to_direction,
    symmetrize,
    translation_transform,
)

logger = logging.getLogger(__name__)

# innovations whose rotation is closer than this to pi are not used
INNOVATION_CUT_MARGIN = 1e-3


class JointType(Enum):
    RIGID = "rigid"
    PRISMATIC = "prismatic"
    REVOLUTE = "revolute"
    DISCONNECTED = "disconnected"

    @property
    def rank(self) -> int:
        """Model complexity used by the parsimony penalty."""
        return {JointType.RIGID: 0, JointType.PRISMATIC: 1, JointType.REVOLUTE: 2}.get(self, 3)


@dataclass(frozen=True, eq=False)
class PrismaticState:
    axis: AxisSpherical
    q: float
    q_dot: float
    P: Matrix

    @property
    def direction(self) -> Vector:
        return self.axis.direction

    @property
    def vector(self) -> Vector:
        return np.array([self.axis.phi, self.axis.theta, self.q, self.q_dot])

    @classmethod
    def from_vector(cls, x: Vector, P: Matrix) -> "PrismaticState":
        phi, theta, flipped = normalize_spherical(float(x[0]), float(x[1]))
        P = symmetrize(P)
        if flipped:
            P = _negate_rows(P, [1])
        return cls(AxisSpherical(phi, theta), float(x[2]), float(x[3]), P)

    def at(self, q: float) -> "PrismaticState":
        return replace(self, q=q)


@dataclass(frozen=True, eq=False)
class RevoluteState:
    axis: AxisSpherical
    point: Vector
    q: float
    q_dot: float
    P: Matrix

    @property
    def direction(self) -> Vector:
        return self.axis.direction

    @property
    def vector(self) -> Vector:
        return np.concatenate(
            [[self.axis.phi, self.axis.theta], self.point, [self.q, self.q_dot]]
        )

    @classmethod
    def from_vector(cls, x: Vector, P: Matrix) -> "RevoluteState":
        """Normalize the axis angles and apply the gauge fix to the point."""
        jacobian = _revolute_gauge_jacobian(x)
        x = _revolute_gauge(x)
        P = symmetrize(jacobian @ P @ jacobian.T)
        phi, theta, flipped = normalize_spherical(float(x[0]), float(x[1]))
        if flipped:
            P = _negate_rows(P, [1])
        return cls(AxisSpherical(phi, theta), x[2:5].copy(), float(x[5]), float(x[6]), P)

    def at(self, q: float) -> "RevoluteState":
        return replace(self, q=q)


JointState = Union[PrismaticState, RevoluteState]


def _negate_rows(P: Matrix, indices: List[int]) -> Matrix:
    signs = np.ones(P.shape[0])
    signs[indices] = -1.0
    return P * np.outer(signs, signs)


def _revolute_gauge(x: Vector) -> Vector:
    """Move the axis point to the point of the axis closest to the origin."""
    d = spherical_to_direction(float(x[0]), float(x[1]))
    out = np.array(x, dtype=np.float64)
    out[2:5] = x[2:5] - float(d @ x[2:5]) * d
    return out


def _revolute_gauge_jacobian(x: Vector) -> Matrix:
    """Jacobian of :func:`_revolute_gauge`."""
    phi, theta = float(x[0]), float(x[1])
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(phi), math.cos(phi)
    d = np.array([st * cp, st * sp, ct])
    d_phi = np.array([-st * sp, st * cp, 0.0])
    d_theta = np.array([ct * cp, ct * sp, -st])
    point = x[2:5]
    along = float(d @ point)
    jacobian = np.eye(x.shape[0])
    jacobian[2:5, 2:5] -= np.outer(d, d)
    jacobian[2:5, 0] = -(float(d_phi @ point) * d + along * d_phi)
    jacobian[2:5, 1] = -(float(d_theta @ point) * d + along * d_theta)
    return jacobian


@dataclass(frozen=True, eq=False)
class JointModel:
    type: JointType
    params: Optional[JointState] = None
    log_likelihood_window: Optional[float] = None
    reference_pose: Pose6 = field(default_factory=Pose6.identity)

    def __post_init__(self) -> None:
        articulated = self.type in (JointType.PRISMATIC, JointType.REVOLUTE)
        if articulated != (self.params is not None):
            raise ValueError(f"{self.type.value} model params mismatch: {self.params!r}")

    @property
    def is_articulated(self) -> bool:
        return self.params is not None

    @property
    def axis_direction(self) -> Optional[Vector]:
        return None if self.params is None else self.params.direction

    @property
    def axis_point(self) -> Optional[Vector]:
        return self.params.point if isinstance(self.params, RevoluteState) else None


def predict_joint(state: JointState, dt: float, config: PipelineConfig) -> JointState:
    if not dt > 0.0:
        raise InvalidTimeStepError(f"Joint prediction needs dt > 0, got {dt}")
    n = state.P.shape[0]
    F = np.eye(n)
    F[n - 2, n - 1] = dt
    Q = config.q_pris if isinstance(state, PrismaticState) else config.q_rev
    P = symmetrize(F @ state.P @ F.T + Q * config.step_scale(dt))
    return replace(state, q=state.q + dt * state.q_dot, P=P)


def _articulation(state: JointState) -> Matrix:
    if isinstance(state, PrismaticState):
        return translation_transform(state.q * state.direction)
    return rotation_about_line(state.direction, state.point, state.q)


def joint_measurement_model(state: JointState, reference_pose: Pose6) -> Pose6:
    """Body pose predicted by articulating ``reference_pose`` to ``state.q``."""
    return log_map(_articulation(state) @ exp_map(reference_pose))


def _state_from_vector(template: JointState, x: Vector, P: Matrix) -> JointState:
    if isinstance(template, PrismaticState):
        return PrismaticState.from_vector(x, P)
    return RevoluteState.from_vector(x, P)


def _innovations(
    template: JointState, xs: Matrix, reference: Matrix, measured: Matrix
) -> Matrix:
    """Twists of (A(x) * reference)^-1 * measured for each raw parameter row of ``xs``.

    A(x) is the articulation of the unnormalized vector x, smooth in every
    component.
    """
    reference_inverse = invert_transform(reference)
    rotation_ref, translation_ref = reference_inverse[:3, :3], reference_inverse[:3, 3]
    rotation_meas, translation_meas = measured[:3, :3], measured[:3, 3]
    d = spherical_directions(xs[:, 0], xs[:, 1])
    if isinstance(template, PrismaticState):
        # A^-1 * measured keeps the rotation and slides back by q along d
        rotations = np.repeat((rotation_ref @ rotation_meas)[None], xs.shape[0], axis=0)
        moved = translation_meas - xs[:, 2:3] * d
    else:
        # A^-1 turns by -q about the same line
        undo = Rotation.from_rotvec(-xs[:, 5:6] * d).as_matrix()
        point = xs[:, 2:5]
        rotations = rotation_ref @ undo @ rotation_meas
        moved = np.einsum("kij,kj->ki", undo, translation_meas - point) + point
    twists, _ = log_map_batch(rotations, moved @ rotation_ref.T + translation_ref)
    return twists


def correct_joint(
    state: JointState,
    measured_pose: Pose6,
    measured_cov: Matrix,
    config: PipelineConfig,
    reference_pose: Optional[Pose6] = None,
) -> Tuple[JointState, Optional[float]]:
    """EKF update with the body pose as the measurement.

    The innovation is the twist of prediction^-1 * measurement; its Jacobian
    comes from central differences evaluated in one batch. With
    ``joint.iterations`` above 1 the update is iterated. Returns the updated
    state and the log-likelihood of the post-update residual, or the
    unchanged state and None when the innovation is too close to the
    rotation branch cut.
    """
    reference = exp_map(reference_pose or Pose6.identity())
    return _correct_joint(state, reference, exp_map(measured_pose), measured_cov, config)


def _correct_joint(
    state: JointState,
    reference: Matrix,
    measured: Matrix,
    measured_cov: Matrix,
    config: PipelineConfig,
) -> Tuple[JointState, Optional[float]]:
    def innovations(xs: Matrix) -> Matrix:
        return _innovations(state, xs, reference, measured)

    x_pred = state.vector
    n = x_pred.shape[0]
    x_i = x_pred
    H = np.zeros((6, n))
    K = np.zeros((n, 6))
    residual = np.zeros(6)
    for iteration in range(config.joint.iterations):
        nu, jacobian = numerical_jacobian(innovations, x_i, config.joint.jacobian_step)
        if iteration == 0:
            angle = float(np.linalg.norm(nu[3:]))
            if angle > math.pi - INNOVATION_CUT_MARGIN:
                logger.warning(
                    f"Joint innovation rotation {angle:.4f} rad is at the branch cut, "
                    "correction skipped"
                )
                return state, None
        H = -jacobian
        PHt = state.P @ H.T
        K = np.linalg.solve(symmetrize(H @ PHt + measured_cov), PHt.T).T
        x_next = x_pred + K @ (nu - H @ (x_pred - x_i))
        # residual at x_next, to first order around x_i
        residual = nu - H @ (x_next - x_i)
        step = float(np.linalg.norm(x_next - x_i))
        x_i = x_next
        if step < config.joint.tolerance:
            break

    I_KH = np.eye(n) - K @ H
    P = I_KH @ state.P @ I_KH.T + K @ measured_cov @ K.T
    return _state_from_vector(state, x_i, P), gaussian_log_likelihood(residual, measured_cov)


def rigid_log_likelihood(
    measured_pose: Pose6, measured_cov: Matrix, reference_pose: Optional[Pose6] = None
) -> float:
    """Likelihood that the body has not moved relative to the reference pose."""
    reference = exp_map(reference_pose or Pose6.identity())
    return _rigid_log_likelihood(reference, exp_map(measured_pose), measured_cov)


def _rigid_log_likelihood(reference: Matrix, measured: Matrix, measured_cov: Matrix) -> float:
    relative = invert_transform(reference) @ measured
    residual, _ = log_map_batch(relative[None, :3, :3], relative[None, :3, 3])
    return gaussian_log_likelihood(residual[0], measured_cov)


def seed_prismatic(relative: Matrix, config: PipelineConfig) -> Optional[PrismaticState]:
    """Prismatic state explaining ``relative`` as a pure slide, if it moved far enough."""
    translation = relative[:3, 3]
    distance = float(np.linalg.norm(translation))
    if distance < config.joint.seed_translation:
        return None
    return PrismaticState(
        AxisSpherical.from_direction(translation / distance),
        distance,
        0.0,
        np.array(config.p0_pris, dtype=np.float64),
    )


def seed_revolute(relative: Matrix, config: PipelineConfig) -> Optional[RevoluteState]:
    """Revolute state from the screw decomposition of ``relative``, if it turned far enough."""
    rotvec = Rotation.from_matrix(relative[:3, :3]).as_rotvec()
    angle = float(np.linalg.norm(rotvec))
    if angle < config.joint.seed_rotation:
        return None
    direction = rotvec / angle
    translation = relative[:3, 3]
    orthogonal = translation - float(direction @ translation) * direction
    point = np.linalg.pinv(np.eye(3) - relative[:3, :3]) @ orthogonal
    return RevoluteState(
        AxisSpherical.from_direction(direction),
        point,
        angle,
        0.0,
        np.array(config.p0_rev, dtype=np.float64),
    )


def canonicalize(state: JointState) -> JointState:
    """Flip the axis so its first non-zero component is positive; q follows."""
    direction = state.direction
    if canonical_sign(direction) > 0:
        return state
    # antipodal axis: theta and both joint coordinates change sign
    n = state.P.shape[0]
    P = _negate_rows(state.P, [1, n - 2, n - 1])
    return replace(
        state,
        axis=AxisSpherical.from_direction(-direction),
        q=-state.q,
        q_dot=-state.q_dot,
        P=P,
    )


def revolute_radius(state: RevoluteState, centroid: Vector) -> float:
    """Distance from the axis line to ``centroid``."""
    offset = as_vector(centroid, 3, "centroid") - state.point
    d = state.direction
    return float(np.linalg.norm(offset - float(d @ offset) * d))


@dataclass
class CandidateWindow:
    """Rolling per-frame log-likelihoods of one candidate model."""

    type: JointType
    state: Optional[JointState] = None
    values: Deque[float] = field(default_factory=deque)

    def push(self, value: float, window: int) -> None:
        self.values.append(value)
        while len(self.values) > window:
            self.values.popleft()


def select_model(
    candidates: Dict[JointType, CandidateWindow],
    config: PipelineConfig,
    reference_centroid: Optional[Vector] = None,
    reference_pose: Optional[Pose6] = None,
) -> JointModel:
    """Pick the candidate with the best penalized mean windowed log-likelihood.

    Only candidates with at least ``model_select.min_frames`` entries take
    part, and all are compared over the same number of most recent frames.
    Revolute candidates whose axis passes further than the radius cap from
    the reference centroid are excluded.
    """
    settings = config.model_select
    reference_pose = reference_pose or Pose6.identity()
    eligible = []
    for joint_type in (JointType.RIGID, JointType.PRISMATIC, JointType.REVOLUTE):
        candidate = candidates.get(joint_type)
        if candidate is None or len(candidate.values) < settings.min_frames:
            continue
        if joint_type is not JointType.RIGID and candidate.state is None:
            continue
        if (
            joint_type is JointType.REVOLUTE
            and reference_centroid is not None
            and isinstance(candidate.state, RevoluteState)
            and revolute_radius(candidate.state, reference_centroid) > settings.radius_cap
        ):
            logger.debug("Revolute candidate beyond radius cap, treated as prismatic")
            continue
        eligible.append(candidate)

    if not eligible:
        return JointModel(JointType.RIGID, reference_pose=reference_pose)

    span = min(len(c.values) for c in eligible)
    means = {c.type: float(np.mean(list(c.values)[-span:])) for c in eligible}
    if all(mean < settings.disconnected_floor for mean in means.values()):
        return JointModel(
            JointType.DISCONNECTED,
            log_likelihood_window=max(means.values()),
            reference_pose=reference_pose,
        )

    best: Optional[CandidateWindow] = None
    best_score = -math.inf
    for candidate in eligible:
        score = means[candidate.type] - settings.parsimony * candidate.type.rank
        if score > best_score:
            best, best_score = candidate, score
    assert best is not None

    params = None if best.state is None else canonicalize(best.state)
    return JointModel(
        best.type,
        params=params,
        log_likelihood_window=means[best.type],
        reference_pose=reference_pose,
    )


def joint_prediction_for_body(model: JointModel, dt: float) -> Optional[Tuple[Pose6, Velocity6]]:
    """Body pose after advancing the joint by ``dt`` and the matching spatial twist.

    Rigid and disconnected models give no prediction.
    """
    state = model.params
    if state is None:
        return None
    advanced = state.at(state.q + dt * state.q_dot)
    pose = joint_measurement_model(advanced, model.reference_pose)
    d = state.direction
    if isinstance(state, PrismaticState):
        velocity = Velocity6(state.q_dot * d, np.zeros(3))
    else:
        velocity = Velocity6(state.q_dot * np.cross(state.point, d), state.q_dot * d)
    return pose, velocity


class JointEstimator:
    """Runs the candidate joint filters against the body pose of every frame."""

    def __init__(self, config: PipelineConfig):
        self.config = config
        self.reference_pose = Pose6.identity()
        self.reference_centroid: Optional[Vector] = None
        self.candidates: Dict[JointType, CandidateWindow] = {}
        self.current = JointModel(JointType.RIGID)
        self.last_t: Optional[float] = None
        self.anchored = False

    def anchor(
        self,
        t: float,
        reference_pose: Pose6,
        reference_centroid: Optional[Vector] = None,
    ) -> None:
        """Start estimating against a new reference pose.

        Filters that were already seeded keep their axis parameters with the
        joint coordinate reset to zero; windows restart.
        """
        previous = self.candidates
        self.candidates = {
            joint_type: CandidateWindow(joint_type)
            for joint_type in (JointType.RIGID, JointType.PRISMATIC, JointType.REVOLUTE)
        }
        for joint_type in (JointType.PRISMATIC, JointType.REVOLUTE):
            old = previous.get(joint_type)
            if old is not None and old.state is not None:
                self.candidates[joint_type].state = replace(old.state, q=0.0, q_dot=0.0)
        if self.anchored:
            logger.info(f"Joint filters re-anchored at t={t:.3f}")
        self.reference_pose = reference_pose
        self.reference_centroid = reference_centroid
        self.current = JointModel(JointType.RIGID, reference_pose=reference_pose)
        self.last_t = t
        self.anchored = True

    def update(self, t: float, measured_pose: Pose6, measured_cov: Matrix) -> JointModel:
        if not self.anchored:
            raise RuntimeError("JointEstimator.update called before anchor")
        dt = t - self.last_t if self.last_t is not None else 0.0
        self.last_t = t
        window = self.config.model_select.window

        reference = exp_map(self.reference_pose)
        measured = exp_map(measured_pose)
        relative = measured @ invert_transform(reference)

        rigid = self.candidates[JointType.RIGID]
        rigid.push(_rigid_log_likelihood(reference, measured, measured_cov), window)

        for joint_type in (JointType.PRISMATIC, JointType.REVOLUTE):
            candidate = self.candidates[joint_type]
            if candidate.state is None:
                seeded: Optional[JointState] = (
                    seed_prismatic(relative, self.config)
                    if joint_type is JointType.PRISMATIC
                    else seed_revolute(relative, self.config)
                )
                if seeded is None:
                    continue
                logger.info(f"{joint_type.value} filter seeded at t={t:.3f}")
                candidate.state = seeded
            elif dt > 0.0:
                candidate.state = predict_joint(candidate.state, dt, self.config)

            state, log_likelihood = _correct_joint(
                candidate.state, reference, measured, measured_cov, self.config
            )
            candidate.state = state
            if log_likelihood is not None:
                candidate.push(log_likelihood, window)

        selected = select_model(
            self.candidates, self.config, self.reference_centroid, self.reference_pose
        )
        if selected.type is not self.current.type:
            logger.info(
                f"Selected joint model changed from {self.current.type.value} "
                f"to {selected.type.value} at t={t:.3f}"
            )
        self.current = selected
        return selected

    def log_likelihoods(self) -> Dict[str, Optional[float]]:
        """Latest per-frame log-likelihood of each candidate."""
        return {
            joint_type.value: (candidate.values[-1] if candidate.values else None)
            for joint_type, candidate in self.candidates.items()
        }
