from typing import List, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..landmark_filter import NUM_LANDMARKS, LandmarkObservation


class LandmarkRecord(BaseModel):
    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    id: int = Field(ge=0, lt=NUM_LANDMARKS, description="Landmark index in the 21-point hand")
    pos: Tuple[float, float, float] = Field(description="Position in meters")
    vis: float = Field(default=1.0, ge=0, le=1, description="Detector visibility score")


class ObservationRecord(BaseModel):
    """One line of an observation JSONL file: all landmarks seen at time ``t``."""

    model_config = ConfigDict(extra="forbid", allow_inf_nan=False)

    t: float = Field(description="Seconds")
    landmarks: List[LandmarkRecord] = Field(default_factory=list)

    @field_validator("landmarks")
    @classmethod
    def _unique_ids(cls, value: List[LandmarkRecord]) -> List[LandmarkRecord]:
        ids = [landmark.id for landmark in value]
        if len(ids) != len(set(ids)):
            raise ValueError(f"duplicate landmark ids in {sorted(ids)}")
        return value

    @classmethod
    def from_observations(
        cls, t: float, observations: Sequence[LandmarkObservation]
    ) -> "ObservationRecord":
        return cls(
            t=t,
            landmarks=[
                LandmarkRecord(id=obs.id, pos=tuple(obs.pos.tolist()), vis=obs.vis)
                for obs in observations
            ],
        )

    def to_observations(self) -> List[LandmarkObservation]:
        return [
            LandmarkObservation(self.t, landmark.id, landmark.pos, landmark.vis)
            for landmark in self.landmarks
        ]
