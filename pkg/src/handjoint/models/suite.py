from enum import Enum
from typing import List

from pydantic import BaseModel, ConfigDict, Field, field_validator

from ..simulator import Scenario


class BenchMethod(Enum):
    PIPELINE = "pipeline"
    ABLATION = "ablation"
    SINGLE_POINT = "single_point"
    RIGID_HAND = "rigid_hand"


class BenchSuite(BaseModel):
    """Scenarios and methods of a benchmark run, as read from suite YAML."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = "suite"
    samples: int = Field(default=100, ge=2, description="Tangent error quadrature samples")
    methods: List[BenchMethod] = Field(default_factory=lambda: list(BenchMethod))
    scenarios: List[Scenario] = Field(min_length=1)

    @field_validator("scenarios")
    @classmethod
    def _unique_names(cls, value: List[Scenario]) -> List[Scenario]:
        names = [scenario.name for scenario in value]
        duplicates = sorted({name for name in names if names.count(name) > 1})
        if duplicates:
            raise ValueError(f"duplicate scenario names {duplicates}")
        return value
