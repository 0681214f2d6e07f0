"""Synthetic hand landmark sequences with a known joint.

A constellation of landmarks is rigidly attached to a body that moves as
the articulation of a ground-truth joint. Observations carry per-class
Gaussian noise proportional to the saliency scores, uniform outliers,
dropouts, occlusions with low visibility and optionally landmarks that
move on their own.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .config import SaliencyConfig
from .core import HandJointError, Pose6, Vector, log_map
from .joint_estimator import JointType
from .landmark_filter import NUM_LANDMARKS, LandmarkClass, LandmarkObservation
from .metrics import GroundTruthJoint

logger = logging.getLogger(__name__)

HAND_ORIGIN = (0.0, 0.0, 0.5)
WRIST_OFFSET = (0.0, -0.09, 0.0)
# landmarks 1-20 relative to the hand origin, spanning roughly an adult hand
DEFAULT_CONSTELLATION: Tuple[Tuple[float, float, float], ...] = (
    (-0.030, -0.065, 0.005),
    (-0.048, -0.040, 0.010),
    (-0.062, -0.015, 0.015),
    (-0.075, 0.008, 0.020),
    (-0.022, 0.000, 0.000),
    (-0.025, 0.035, 0.004),
    (-0.027, 0.058, 0.007),
    (-0.028, 0.078, 0.010),
    (0.000, 0.005, -0.004),
    (0.000, 0.045, 0.000),
    (0.000, 0.072, 0.004),
    (0.000, 0.094, 0.008),
    (0.020, 0.000, -0.002),
    (0.022, 0.038, 0.002),
    (0.023, 0.062, 0.006),
    (0.024, 0.082, 0.010),
    (0.038, -0.008, 0.000),
    (0.043, 0.020, 0.004),
    (0.046, 0.038, 0.008),
    (0.048, 0.055, 0.012),
)
# thumb tip, index tip, middle tip
GRASP_LANDMARKS = (4, 8, 12)
OUTLIER_SCALE = (0.5, 1.0)
PRESENT_VISIBILITY = (0.5, 1.0)
OCCLUDED_VISIBILITY = (0.0, 0.005)
COLLINEAR_TOLERANCE = 1e-6


def _default_joint() -> GroundTruthJoint:
    return revolute_joint()


def revolute_joint(
    q_max: float = math.pi / 2,
    direction: Sequence[float] = (0.0, 1.0, 0.0),
    point: Optional[Sequence[float]] = None,
) -> GroundTruthJoint:
    if point is None:
        point = (HAND_ORIGIN[0] + 0.5, HAND_ORIGIN[1], HAND_ORIGIN[2])
    return GroundTruthJoint(
        type=JointType.REVOLUTE,
        axis_direction=tuple(direction),
        axis_point=tuple(point),
        q_max=q_max,
    )


def prismatic_joint(
    q_max: float = 0.3, direction: Sequence[float] = (1.0, 0.0, 0.0)
) -> GroundTruthJoint:
    return GroundTruthJoint(type=JointType.PRISMATIC, axis_direction=tuple(direction), q_max=q_max)


class Scenario(BaseModel):
    """Everything that determines a simulated sequence."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(default="scenario")
    joint: GroundTruthJoint = Field(default_factory=_default_joint)
    constellation: Optional[List[Tuple[float, float, float]]] = Field(
        default=None, description="Offsets of landmarks 1-20 from the hand origin"
    )
    hand_origin: Tuple[float, float, float] = HAND_ORIGIN
    include_wrist: bool = Field(default=False, description="Also emit the wrist landmark")
    duration: float = Field(default=4.0, gt=0, description="Seconds")
    rate: float = Field(default=30.0, gt=0, description="Frames per second")
    hold_fraction: float = Field(
        default=0.1, ge=0, lt=0.5, description="Share of the duration held still at each end"
    )
    noise: float = Field(default=0.002, ge=0, description="Noise scale multiplied by the saliency")
    noise_sigma: Optional[Dict[str, float]] = Field(
        default=None, description="Per-class noise standard deviation overrides (m)"
    )
    outlier_rate: float = Field(default=0.0, ge=0, le=1)
    outlier_magnitude: float = Field(default=0.15, ge=0)
    dropout_rate: float = Field(default=0.0, ge=0, le=1)
    occlusion_rate: float = Field(default=0.0, ge=0, le=1)
    independent_movers: List[int] = Field(default_factory=list)
    mover_amplitude: float = Field(default=0.05, ge=0)
    mover_frequency: float = Field(default=1.0, ge=0)
    seed: int = 0

    @field_validator("noise_sigma")
    @classmethod
    def _known_classes(cls, value: Optional[Dict[str, float]]) -> Optional[Dict[str, float]]:
        if value is None:
            return value
        known = {c.value for c in LandmarkClass}
        for name, sigma in value.items():
            if name not in known:
                raise ValueError(f"unknown landmark class {name!r}")
            if sigma < 0:
                raise ValueError(f"noise for {name} must be >= 0")
        return value

    @field_validator("independent_movers")
    @classmethod
    def _valid_ids(cls, value: List[int]) -> List[int]:
        for landmark_id in value:
            if not 0 <= landmark_id < NUM_LANDMARKS:
                raise ValueError(f"landmark id {landmark_id} out of range")
        return sorted(set(value))

    @field_validator("constellation")
    @classmethod
    def _twenty_offsets(
        cls, value: Optional[List[Tuple[float, float, float]]]
    ) -> Optional[List[Tuple[float, float, float]]]:
        if value is not None and len(value) != NUM_LANDMARKS - 1:
            raise ValueError(f"constellation needs {NUM_LANDMARKS - 1} offsets, got {len(value)}")
        return value

    @classmethod
    def parse(cls, data: dict) -> "Scenario":
        """Validate raw scenario data, raising :class:`ScenarioError`."""
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ScenarioError(f"Invalid scenario: {e}")

    @property
    def frame_count(self) -> int:
        return int(round(self.duration * self.rate)) + 1

    def sigma(self, landmark_class: LandmarkClass) -> float:
        if self.noise_sigma is not None and landmark_class.value in self.noise_sigma:
            return self.noise_sigma[landmark_class.value]
        if landmark_class is LandmarkClass.WRIST:
            return self.noise
        return self.noise * SaliencyConfig().score(landmark_class.value)

    def landmark_positions(self) -> Dict[int, Vector]:
        """World positions of the emitted landmarks at q = 0."""
        origin = np.array(self.hand_origin, dtype=np.float64)
        offsets = self.constellation if self.constellation is not None else DEFAULT_CONSTELLATION
        positions = {i + 1: origin + np.array(offset) for i, offset in enumerate(offsets)}
        if self.include_wrist:
            positions[0] = origin + np.array(WRIST_OFFSET)
        return dict(sorted(positions.items()))

    def grasp_point(self) -> Vector:
        positions = self.landmark_positions()
        return np.mean([positions[i] for i in GRASP_LANDMARKS], axis=0)

    def ground_truth(self) -> GroundTruthJoint:
        if self.joint.grasp_point is not None:
            return self.joint
        return self.joint.model_copy(update={"grasp_point": tuple(self.grasp_point().tolist())})

    def profile(self, t: float) -> float:
        """Joint coordinate at time ``t``: hold, smooth ramp to q_max, hold."""
        span = self.duration * (1.0 - 2.0 * self.hold_fraction)
        s = (t - self.duration * self.hold_fraction) / span
        s = min(1.0, max(0.0, s))
        return self.joint.q_max * s * s * (3.0 - 2.0 * s)


@dataclass
class SimulatedFrame:
    t: float
    observations: List[LandmarkObservation] = field(default_factory=list)
    truth: Dict[int, Vector] = field(default_factory=dict)
    q: float = 0.0


@dataclass
class SimulatedSequence:
    scenario: Scenario
    ground_truth: GroundTruthJoint
    frames: List[SimulatedFrame]
    body_poses: List[Pose6]

    def observation_frames(self) -> List[Tuple[float, List[LandmarkObservation]]]:
        return [(frame.t, frame.observations) for frame in self.frames]


def articulate(joint: GroundTruthJoint, q: float, point: Sequence[float]) -> Vector:
    """Location of ``point`` after moving the joint from 0 to ``q``."""
    return joint.articulate(q, point)


def _check_constellation(positions: Dict[int, Vector]) -> None:
    points = np.array(list(positions.values()))
    centered = points - points.mean(axis=0)
    singular = np.linalg.svd(centered, compute_uv=False)
    if len(points) < 3 or singular[1] < COLLINEAR_TOLERANCE:
        raise DegenerateConstellationError("Landmark constellation is collinear")


def _mover_direction(landmark_id: int) -> Vector:
    angle = 2.0 * math.pi * landmark_id / NUM_LANDMARKS
    return np.array([math.cos(angle), math.sin(angle), 1.0]) / math.sqrt(2.0)


def generate(scenario: Scenario) -> SimulatedSequence:
    """Simulate the scenario. The same scenario always gives the same sequence."""
    positions = scenario.landmark_positions()
    _check_constellation(positions)
    ground_truth = scenario.ground_truth()
    rng = np.random.default_rng(scenario.seed)
    ids = list(positions)
    base = np.array([positions[i] for i in ids])
    sigmas = np.array([scenario.sigma(LandmarkClass.from_id(i)) for i in ids])
    movers = np.array([i in scenario.independent_movers for i in ids])
    n = len(ids)

    frames: List[SimulatedFrame] = []
    body_poses: List[Pose6] = []
    for k in range(scenario.frame_count):
        t = k / scenario.rate
        q = scenario.profile(t)
        transform = ground_truth.articulation(q)
        truth = base @ transform[:3, :3].T + transform[:3, 3]
        if movers.any():
            wobble = scenario.mover_amplitude * math.sin(2.0 * math.pi * scenario.mover_frequency * t)
            for row in np.flatnonzero(movers):
                truth[row] += wobble * _mover_direction(ids[row])

        # every landmark draws every variate, whatever its fate this frame
        events = rng.random((n, 3))
        noise = rng.standard_normal((n, 3))
        outlier_direction = rng.standard_normal((n, 3))
        outlier_scale = rng.uniform(*OUTLIER_SCALE, size=n)
        present_vis = rng.uniform(*PRESENT_VISIBILITY, size=n)
        occluded_vis = rng.uniform(*OCCLUDED_VISIBILITY, size=n)

        frame = SimulatedFrame(t=t, truth={i: truth[row].copy() for row, i in enumerate(ids)}, q=q)
        for row, landmark_id in enumerate(ids):
            if events[row, 0] < scenario.dropout_rate:
                continue
            pos = truth[row] + sigmas[row] * noise[row]
            if events[row, 1] < scenario.outlier_rate:
                direction = outlier_direction[row] / np.linalg.norm(outlier_direction[row])
                pos = truth[row] + outlier_scale[row] * scenario.outlier_magnitude * direction
            occluded = events[row, 2] < scenario.occlusion_rate
            vis = occluded_vis[row] if occluded else present_vis[row]
            frame.observations.append(LandmarkObservation(t, landmark_id, pos, float(vis)))
        frames.append(frame)
        body_poses.append(log_map(transform))

    logger.debug(
        f"Generated {scenario.name}: {len(frames)} frames, {ground_truth.type.value} q_max={ground_truth.q_max}"
    )
    return SimulatedSequence(scenario, ground_truth, frames, body_poses)


class ScenarioError(HandJointError):
    """Raised when a scenario description is invalid."""


class DegenerateConstellationError(ScenarioError):
    """Raised when the landmark constellation cannot define a rigid body."""
