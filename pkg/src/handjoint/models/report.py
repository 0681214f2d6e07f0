from typing import Dict, List, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from ..joint_estimator import JointModel, JointType
from ..metrics import joint_model_from_axis

Point = Tuple[float, float, float]


class BeliefRecord(BaseModel):
    """The pipeline's belief after one frame, one line of a belief stream."""

    model_config = ConfigDict(extra="forbid")

    t: float
    joint_type: JointType
    body_initialized: bool
    motion_model: Optional[str] = None
    log_likelihoods: Dict[str, Optional[float]] = Field(default_factory=dict)
    axis_direction: Optional[Point] = None
    axis_point: Optional[Point] = None
    q: Optional[float] = None
    rejected: List[int] = Field(
        default_factory=list, description="Landmarks gated at body level this frame"
    )
    ransac_outliers: List[int] = Field(default_factory=list)


class ResultReport(BaseModel):
    """Final estimate of an ``estimate`` run."""

    model_config = ConfigDict(extra="forbid")

    joint_type: JointType
    axis_direction: Optional[Point] = None
    axis_point: Optional[Point] = None
    q_max: Optional[float] = Field(
        default=None, description="Largest joint coordinate magnitude of the selected model"
    )
    frames: int = 0
    body_initializations: int = 0
    log_likelihood_window: Optional[float] = None
    beliefs: Optional[List[BeliefRecord]] = None
    tangent_error: Optional[float] = Field(default=None, description="Degrees")
    type_mismatch: Optional[bool] = None
    frames_per_second: Optional[float] = None

    def to_joint_model(self) -> JointModel:
        if self.joint_type not in (JointType.PRISMATIC, JointType.REVOLUTE):
            return JointModel(self.joint_type)
        if self.axis_direction is None:
            raise ValueError(f"{self.joint_type.value} report has no axis_direction")
        return joint_model_from_axis(self.joint_type, self.axis_direction, self.axis_point)
