"""Rigid-body pose and velocity of the hand.

The body is initialized by uncertainty-weighted RANSAC over a short window
of landmark tracks. Afterwards an iterated EKF over (pose, velocity) is
corrected every frame with the filtered landmark locations, using the most
likely of three motion models for the prediction. Landmarks that disagree
with the rigid-body fit are gated and reported back to the landmark level.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np
import numpy.typing as npt

from .config import PipelineConfig
from .core import (
    HandJointError,
    InvalidTimeStepError,
    Matrix,
    Pose6,
    Vector,
    Velocity6,
    exp_map,
    exp_map_batch,
    log_map,
    numerical_jacobian,
    rigid_alignment,
    symmetrize,
    transform_points,
)
from .joint_estimator import JointModel, joint_prediction_for_body
from .landmark_filter import LandmarkMeasurement

logger = logging.getLogger(__name__)

MIN_MEASUREMENTS = 3
COLLINEAR_AREA = 1e-8


class MotionModel(Enum):
    STATIC = "static"
    CONSTANT_VELOCITY = "constant_velocity"
    KINEMATIC_PRIOR = "kinematic_prior"


@dataclass(frozen=True, eq=False)
class BodyState:
    pose: Pose6
    velocity: Velocity6
    P: Matrix
    ref_landmarks: Dict[int, Vector]
    t_ref: float
    t: float

    @property
    def vector(self) -> Vector:
        return np.concatenate([self.pose.vector, self.velocity.vector])

    def with_vector(self, x: Vector, P: Matrix) -> "BodyState":
        return replace(
            self,
            pose=Pose6.from_vector(x[:6]),
            velocity=Velocity6.from_vector(x[6:]),
            P=symmetrize(P),
        )

    @property
    def reference_centroid(self) -> Vector:
        return np.mean(np.array(list(self.ref_landmarks.values())), axis=0)

    def predicted_location(self, landmark_id: int) -> Vector:
        return transform_points(self.pose, self.ref_landmarks[landmark_id][None, :])[0]


@dataclass(frozen=True, eq=False)
class Track:
    """A landmark's filtered location at the start and end of the initialization window."""

    id: int
    start: Vector
    end: Vector
    cov: Matrix


@dataclass(frozen=True, eq=False)
class RansacResult:
    state: BodyState
    inliers: List[int]
    outliers: List[int]
    transform: Matrix


def sampling_weights(tracks: Sequence[Track]) -> Vector:
    """Selection probabilities proportional to the inverse covariance trace."""
    inverse_traces = np.array([1.0 / np.trace(track.cov) for track in tracks])
    return inverse_traces / inverse_traces.sum()


def sample_triplet(rng: np.random.Generator, weights: Vector) -> np.ndarray:
    return rng.choice(weights.shape[0], size=3, replace=False, p=weights)


def _is_degenerate(points: Matrix) -> bool:
    area = np.linalg.norm(np.cross(points[1] - points[0], points[2] - points[0]))
    return bool(area < COLLINEAR_AREA)


def init_ransac(
    tracks: Sequence[Track],
    config: PipelineConfig,
    rng_seed: int | np.random.Generator,
    t_ref: float = 0.0,
    t_end: Optional[float] = None,
) -> RansacResult:
    """Estimate the rigid motion of the tracks and initialize the body at ``t_ref``.

    Triplets are drawn with probability proportional to the inverse trace
    of each track's covariance. A hypothesis is scored by the sum of squared
    Mahalanobis residuals, each capped at one common bound, and the tracks
    under that bound are its inliers. The bound equals ``inlier_threshold``
    meters for the most certain track and widens with the spread of the
    others. The best hypothesis is refit on its inliers. The initial velocity
    is the twist of that motion over ``t_end - t_ref``.
    """
    settings = config.ransac
    if len(tracks) < MIN_MEASUREMENTS:
        raise InsufficientDataError(f"RANSAC needs at least 3 tracks, got {len(tracks)}")
    rng = np.random.default_rng(rng_seed)

    starts = np.array([track.start for track in tracks])
    ends = np.array([track.end for track in tracks])
    covs = np.array([track.cov for track in tracks])
    inverse_covs = np.linalg.inv(covs)
    weights = sampling_weights(tracks)
    cap = settings.inlier_threshold**2 / float(np.trace(covs, axis1=1, axis2=2).min() / 3.0)

    def squared_distances(transform: Matrix) -> Vector:
        r = ends - (starts @ transform[:3, :3].T + transform[:3, 3])
        return np.einsum("ni,nij,nj->n", r, inverse_covs, r)

    best_transform: Optional[Matrix] = None
    best_cost = math.inf
    hypotheses = 0
    draws = 0
    while hypotheses < settings.iterations and draws < 10 * settings.iterations:
        draws += 1
        sample = sample_triplet(rng, weights)
        if _is_degenerate(starts[sample]) or _is_degenerate(ends[sample]):
            continue
        hypotheses += 1
        transform = rigid_alignment(starts[sample], ends[sample], weights[sample])
        cost = float(np.minimum(squared_distances(transform), cap).sum())
        if cost < best_cost:
            best_cost, best_transform = cost, transform

    if best_transform is None:
        raise InsufficientDataError("RANSAC found no non-degenerate sample")

    inliers = squared_distances(best_transform) < cap
    if inliers.sum() >= MIN_MEASUREMENTS:
        best_transform = rigid_alignment(starts[inliers], ends[inliers], weights[inliers])
        inliers = squared_distances(best_transform) < cap
    if inliers.sum() < settings.min_inliers:
        raise InsufficientDataError(
            f"RANSAC found {int(inliers.sum())} inliers, need {settings.min_inliers}"
        )

    velocity = Velocity6.zero()
    if t_end is not None and t_end > t_ref:
        twist = log_map(best_transform).vector / (t_end - t_ref)
        velocity = Velocity6.from_vector(twist)

    inlier_ids = [track.id for track, keep in zip(tracks, inliers) if keep]
    outlier_ids = [track.id for track, keep in zip(tracks, inliers) if not keep]
    state = BodyState(
        pose=Pose6.identity(),
        velocity=velocity,
        P=np.array(config.p0_rb, dtype=np.float64),
        ref_landmarks={track.id: track.start.copy() for track, keep in zip(tracks, inliers) if keep},
        t_ref=t_ref,
        t=t_ref,
    )
    if outlier_ids:
        logger.debug(f"RANSAC outliers: {outlier_ids}")
    return RansacResult(state, inlier_ids, outlier_ids, best_transform)


def predict_body(
    state: BodyState,
    dt: float,
    model: MotionModel,
    joint_hint: Optional[JointModel],
    config: PipelineConfig,
) -> BodyState:
    if not dt > 0.0:
        raise InvalidTimeStepError(f"Body prediction needs dt > 0, got {dt}")
    Q = config.q_rb * config.step_scale(dt)

    if model is MotionModel.STATIC:
        return replace(state, P=symmetrize(state.P + Q), t=state.t + dt)

    if model is MotionModel.CONSTANT_VELOCITY:
        step = Pose6(dt * state.velocity.linear, dt * state.velocity.angular)
        pose = log_map(exp_map(step) @ exp_map(state.pose))
        F = np.eye(12)
        F[:6, 6:] = dt * np.eye(6)
        return replace(state, pose=pose, P=symmetrize(F @ state.P @ F.T + Q), t=state.t + dt)

    prediction = joint_prediction_for_body(joint_hint, dt) if joint_hint is not None else None
    if prediction is None:
        raise MissingJointHintError("The kinematic prior needs a prismatic or revolute joint model")
    pose, velocity = prediction
    return replace(
        state, pose=pose, velocity=velocity, P=symmetrize(state.P + Q), t=state.t + dt
    )


@dataclass(frozen=True, eq=False)
class MeasurementStack:
    """One frame's landmark measurements as arrays, next to their reference locations."""

    ids: List[int]
    refs: Matrix
    z: Matrix
    covs: npt.NDArray[np.float64]
    inverse_covs: npt.NDArray[np.float64]

    @classmethod
    def build(
        cls, measurements: Sequence[LandmarkMeasurement], ref_landmarks: Dict[int, Vector]
    ) -> "MeasurementStack":
        ids = [m.id for m in measurements]
        covs = np.array([m.cov for m in measurements])
        return cls(
            ids=ids,
            refs=np.array([ref_landmarks[i] for i in ids]),
            z=np.array([m.pos for m in measurements]),
            covs=covs,
            inverse_covs=np.linalg.inv(covs),
        )

    def subset(self, keep: npt.NDArray[np.bool_]) -> "MeasurementStack":
        return MeasurementStack(
            ids=[i for i, k in zip(self.ids, keep.tolist()) if k],
            refs=self.refs[keep],
            z=self.z[keep],
            covs=self.covs[keep],
            inverse_covs=self.inverse_covs[keep],
        )

    def __len__(self) -> int:
        return len(self.ids)


def _predicted_points(poses: Matrix, refs: Matrix) -> npt.NDArray[np.float64]:
    """Reference points moved by each of the (k, 6) poses, shape (k, n, 3)."""
    rotations, translations = exp_map_batch(poses)
    return refs @ rotations.transpose(0, 2, 1) + translations[:, None, :]


def _squared_distances(poses: Matrix, stack: MeasurementStack) -> Matrix:
    """Squared Mahalanobis residual of every landmark under each pose, shape (k, n)."""
    residuals = stack.z - _predicted_points(poses, stack.refs)
    return np.maximum(0.0, np.einsum("kni,nij,knj->kn", residuals, stack.inverse_covs, residuals))


def _trimmed_scores(terms: Matrix, config: PipelineConfig) -> Vector:
    keep = max(1, math.ceil(config.body.model_trim_fraction * terms.shape[1]))
    return -0.5 * np.sort(terms, axis=1)[:, :keep].sum(axis=1)


def motion_model_log_likelihood(
    state: BodyState, measurements: Sequence[LandmarkMeasurement], config: PipelineConfig
) -> float:
    """Score of a predicted body state against the frame's landmark locations.

    Only the best-fitting ``body.model_trim_fraction`` of the landmarks count,
    so a few outliers cannot decide the motion model.
    """
    # Residuals are weighted by the landmark covariances alone, not by each
    # model's innovation covariance, so the ranking does not depend on how the
    # models scale their process noise.
    stack = MeasurementStack.build(measurements, state.ref_landmarks)
    return float(_trimmed_scores(_squared_distances(state.pose.vector[None, :], stack), config)[0])


def iterated_update(prior: BodyState, stack: MeasurementStack, config: PipelineConfig) -> BodyState:
    """Iterated EKF correction of ``prior`` with stacked landmark locations.

    Only the pose half of the state is observed, so the update runs in
    information form and adds the landmark information to the pose block.
    Relinearizes up to ``body.iterations`` times and stops early once the
    state moves less than ``body.tolerance``.
    """
    refs = stack.refs
    n = len(stack)

    def h(poses: Matrix) -> Matrix:
        return _predicted_points(poses, refs).reshape(poses.shape[0], 3 * n)

    x_pred = prior.vector
    prior_information = np.linalg.inv(prior.P)
    z = stack.z.ravel()
    x_i = x_pred
    P = prior.P
    for _ in range(config.body.iterations):
        predicted, jacobian = numerical_jacobian(h, x_i[:6], config.body.jacobian_step)
        weighted = (stack.inverse_covs @ jacobian.reshape(n, 3, 6)).reshape(3 * n, 6)
        information = prior_information.copy()
        information[:6, :6] += jacobian.T @ weighted
        P = np.linalg.inv(information)
        residual = z - predicted - jacobian @ (x_pred[:6] - x_i[:6])
        x_next = x_pred + P[:, :6] @ (weighted.T @ residual)
        step = float(np.linalg.norm(x_next - x_i))
        x_i = x_next
        if step < config.body.tolerance:
            break
    return prior.with_vector(x_i, P)


@dataclass
class BodyCorrection:
    state: BodyState
    model: MotionModel
    outcomes: Dict[int, str] = field(default_factory=dict)
    log_likelihoods: Dict[str, float] = field(default_factory=dict)
    corrected: bool = True

    @property
    def rejected(self) -> List[int]:
        return sorted(i for i, outcome in self.outcomes.items() if outcome == "gated")


def correct_body(
    predictions: Dict[MotionModel, BodyState],
    measurements: Sequence[LandmarkMeasurement],
    config: PipelineConfig,
) -> BodyCorrection:
    """Choose the most likely motion model and correct its prediction.

    Landmarks whose residual after the rigid fit has a Mahalanobis distance
    of at least ``maha_rb_thresh`` are gated and the fit is repeated without
    them. With fewer than three usable landmarks the correction is skipped.
    """
    if not predictions:
        raise ValueError("correct_body needs at least one prediction")
    any_state = next(iter(predictions.values()))
    usable = [m for m in measurements if m.id in any_state.ref_landmarks]
    outcomes = {m.id: "unreferenced" for m in measurements if m.id not in any_state.ref_landmarks}

    log_likelihoods: Dict[str, float] = {}
    models = [model for model in MotionModel if model in predictions]
    chosen = models[0]
    active = MeasurementStack.build(usable, any_state.ref_landmarks) if usable else None
    if active is not None:
        poses = np.array([predictions[model].pose.vector for model in models])
        scores = _trimmed_scores(_squared_distances(poses, active), config)
        log_likelihoods = {model.value: score for model, score in zip(models, scores.tolist())}
        chosen = models[int(np.argmax(scores))]
    prior = predictions[chosen]

    gated: List[int] = []
    posterior: Optional[BodyState] = None
    for _ in range(config.body.gating_rounds):
        if active is None or len(active) < MIN_MEASUREMENTS:
            break
        posterior = iterated_update(prior, active, config)
        distances = np.sqrt(_squared_distances(posterior.pose.vector[None, :], active)[0])
        far = distances >= config.maha_rb_thresh
        if not far.any():
            break
        gated.extend(i for i, f in zip(active.ids, far.tolist()) if f)
        active = active.subset(~far)
        posterior = None
    if posterior is None and active is not None and len(active) >= MIN_MEASUREMENTS:
        posterior = iterated_update(prior, active, config)

    if posterior is None or active is None:
        logger.warning(
            f"Body correction skipped at t={prior.t:.3f}: "
            f"{0 if active is None else len(active)} usable landmarks"
        )
        outcomes.update({m.id: "skipped" for m in usable})
        return BodyCorrection(prior, chosen, outcomes, log_likelihoods, corrected=False)

    if gated:
        logger.debug(f"Body gated landmarks {sorted(gated)} at t={prior.t:.3f}")
    outcomes.update({landmark_id: "inlier" for landmark_id in active.ids})
    outcomes.update({landmark_id: "gated" for landmark_id in gated})
    return BodyCorrection(posterior, chosen, outcomes, log_likelihoods)


def body_pose_measurement(state: BodyState) -> Tuple[Pose6, Matrix]:
    """Current pose and its covariance, the measurement of the joint level."""
    return state.pose, symmetrize(state.P[:6, :6])


@dataclass
class BodyFrame:
    t: float
    initialized: bool
    just_initialized: bool = False
    correction: Optional[BodyCorrection] = None
    ransac_outliers: List[int] = field(default_factory=list)

    @property
    def rejected(self) -> List[int]:
        return [] if self.correction is None else self.correction.rejected


class BodyEstimator:
    """Initializes and tracks the rigid body of one hand."""

    def __init__(self, config: PipelineConfig, seed: int = 0):
        self.config = config
        self.rng = np.random.default_rng(seed)
        self.state: Optional[BodyState] = None
        self.initializations = 0
        self._window: Deque[Tuple[float, Dict[int, LandmarkMeasurement]]] = deque(
            maxlen=config.ransac.window + 1
        )

    @property
    def initialized(self) -> bool:
        return self.state is not None

    def reset(self) -> None:
        self.state = None
        self._window.clear()

    def needs_reinitialization(self, lost_ids: Sequence[int]) -> bool:
        if self.state is None:
            return False
        lost = set(lost_ids) & self.state.ref_landmarks.keys()
        return len(lost) / len(self.state.ref_landmarks) > self.config.body.reinit_lost_fraction

    def step(
        self,
        t: float,
        measurements: Sequence[LandmarkMeasurement],
        joint_model: Optional[JointModel] = None,
    ) -> BodyFrame:
        if self.state is None:
            return self._try_initialize(t, measurements)

        dt = t - self.state.t
        if dt > 0.0:
            predictions = {
                MotionModel.STATIC: predict_body(self.state, dt, MotionModel.STATIC, None, self.config),
                MotionModel.CONSTANT_VELOCITY: predict_body(
                    self.state, dt, MotionModel.CONSTANT_VELOCITY, None, self.config
                ),
            }
            if joint_model is not None and joint_model.is_articulated:
                predictions[MotionModel.KINEMATIC_PRIOR] = predict_body(
                    self.state, dt, MotionModel.KINEMATIC_PRIOR, joint_model, self.config
                )
        else:
            predictions = {MotionModel.STATIC: self.state}

        correction = correct_body(predictions, measurements, self.config)
        self.state = correction.state
        return BodyFrame(t, True, correction=correction)

    def _try_initialize(self, t: float, measurements: Sequence[LandmarkMeasurement]) -> BodyFrame:
        self._window.append((t, {m.id: m for m in measurements}))
        if len(self._window) < self._window.maxlen:  # type: ignore[operator]
            return BodyFrame(t, False)

        t_ref, start = self._window[0]
        _, end = self._window[-1]
        tracks = [
            Track(
                landmark_id,
                start[landmark_id].pos,
                end[landmark_id].pos,
                start[landmark_id].cov + end[landmark_id].cov,
            )
            for landmark_id in sorted(start.keys() & end.keys())
        ]
        try:
            result = init_ransac(tracks, self.config, self.rng, t_ref=t_ref, t_end=t)
        except InsufficientDataError as e:
            logger.debug(f"Body initialization at t={t:.3f} failed: {e}")
            return BodyFrame(t, False)

        self.initializations += 1
        logger.info(
            f"Body {'re-' if self.initializations > 1 else ''}initialized at t={t:.3f} "
            f"with {len(result.inliers)} landmarks"
        )
        self._window.clear()
        self.state = result.state
        frame = self.step(t, measurements)
        frame.just_initialized = True
        frame.ransac_outliers = result.outliers
        return frame


class InsufficientDataError(HandJointError):
    """Raised when RANSAC initialization has too few tracks or inliers."""


class MissingJointHintError(HandJointError):
    """Raised when the kinematic prior is requested without a usable joint model."""
