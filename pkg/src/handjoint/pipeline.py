"""Frame-by-frame orchestration of the three estimation levels.

For every frame the landmark filters run first, the body estimator consumes
their measurements and reports gated landmarks back, and the joint
estimator consumes the corrected body pose.
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

from .body_estimator import BodyEstimator, BodyFrame, body_pose_measurement
from .config import PipelineConfig
from .core import HandJointError, Pose6
from .joint_estimator import JointEstimator, JointModel, JointType
from .landmark_filter import LandmarkBank, LandmarkObservation
from .models.report import BeliefRecord, ResultReport

logger = logging.getLogger(__name__)

Frame = Tuple[float, Sequence[LandmarkObservation]]


@dataclass
class FrameBelief:
    t: float
    model: JointModel
    body_initialized: bool
    motion_model: Optional[str] = None
    log_likelihoods: Dict[str, Optional[float]] = field(default_factory=dict)
    rejected: List[int] = field(default_factory=list)
    ransac_outliers: List[int] = field(default_factory=list)

    def to_record(self) -> BeliefRecord:
        params = self.model.params
        direction = self.model.axis_direction
        point = self.model.axis_point
        return BeliefRecord(
            t=self.t,
            joint_type=self.model.type,
            body_initialized=self.body_initialized,
            motion_model=self.motion_model,
            log_likelihoods=self.log_likelihoods,
            axis_direction=None if direction is None else tuple(direction.tolist()),
            axis_point=None if point is None else tuple(point.tolist()),
            q=None if params is None else params.q,
            rejected=self.rejected,
            ransac_outliers=self.ransac_outliers,
        )


class Pipeline:
    """Online estimator for one hand; feed frames in time order with :meth:`process`."""

    def __init__(self, config: PipelineConfig, seed: int = 0):
        self.config = config
        self.landmarks = LandmarkBank(config)
        self.body = BodyEstimator(config, seed=seed)
        self.joint = JointEstimator(config)
        self.frames = 0
        self.q_extent: Dict[JointType, float] = {}

    @property
    def model(self) -> JointModel:
        return self.joint.current

    def process(self, t: float, observations: Sequence[LandmarkObservation]) -> FrameBelief:
        landmark_frame = self.landmarks.process_frame(t, observations)
        joint_hint = self.joint.current if self.joint.anchored else None
        body_frame = self.body.step(t, landmark_frame.measurements, joint_hint)
        self.landmarks.reject(body_frame.rejected)
        self.landmarks.finish_frame()
        self.frames += 1

        if body_frame.just_initialized:
            state = self.body.state
            assert state is not None
            self.joint.anchor(state.t_ref, Pose6.identity(), state.reference_centroid)
        if body_frame.correction is not None and body_frame.correction.corrected:
            pose, cov = body_pose_measurement(body_frame.correction.state)
            model = self.joint.update(t, pose, cov)
            if model.params is not None:
                self.q_extent[model.type] = max(
                    self.q_extent.get(model.type, 0.0), abs(model.params.q)
                )

        self._check_reinitialization(t)
        return self._belief(t, body_frame)

    def _check_reinitialization(self, t: float) -> None:
        state = self.body.state
        if state is None:
            return
        lost = [i for i in state.ref_landmarks if self.landmarks.is_lost(i)]
        if self.body.needs_reinitialization(lost):
            logger.info(
                f"{len(lost)} of {len(state.ref_landmarks)} reference landmarks lost at t={t:.3f}, "
                "re-initializing body"
            )
            self.body.reset()

    def _belief(self, t: float, body_frame: BodyFrame) -> FrameBelief:
        correction = body_frame.correction
        return FrameBelief(
            t=t,
            model=self.joint.current,
            body_initialized=self.body.initialized,
            motion_model=None if correction is None else correction.model.value,
            log_likelihoods=self.joint.log_likelihoods() if self.joint.anchored else {},
            rejected=body_frame.rejected,
            ransac_outliers=body_frame.ransac_outliers,
        )

    def report(self, beliefs: Optional[List[BeliefRecord]] = None) -> ResultReport:
        model = self.model
        direction = model.axis_direction
        point = model.axis_point
        return ResultReport(
            joint_type=model.type,
            axis_direction=None if direction is None else tuple(direction.tolist()),
            axis_point=None if point is None else tuple(point.tolist()),
            q_max=self.q_extent.get(model.type),
            frames=self.frames,
            body_initializations=self.body.initializations,
            log_likelihood_window=model.log_likelihood_window,
            beliefs=beliefs,
        )


def run_pipeline(
    frames: Iterable[Frame],
    config: PipelineConfig,
    seed: int = 0,
    on_belief: Optional[Callable[[FrameBelief], None]] = None,
) -> Pipeline:
    """Run every frame through a fresh pipeline and return it."""
    pipeline = Pipeline(config, seed=seed)
    for t, observations in frames:
        belief = pipeline.process(t, observations)
        if on_belief is not None:
            on_belief(belief)
    if pipeline.frames == 0:
        raise NoFramesError("no frames")
    return pipeline


class NoFramesError(HandJointError):
    """Raised when an estimation run receives no frames."""
