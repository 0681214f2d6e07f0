"""Pipeline hyperparameters.

Defaults are the tuned filter parameters (initial, process and measurement
covariances, the landmark trace bound, the visibility bound and both
Mahalanobis bounds) plus the per-class saliency scores. RANSAC, model
selection and seeding settings are documented where they are declared.
"""

import logging
import math

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from pathlib import Path
from typing import Any, Dict, List

import numpy as np
import scipy.linalg
import tomli_w
from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo
from pydantic import field_validator

from .core import HandJointError, Matrix, is_positive_definite

logger = logging.getLogger(__name__)

COVARIANCE_DIMS: Dict[str, int] = {
    "p0_lm": 6,
    "q_lm": 6,
    "r_lm": 3,
    "p0_rb": 12,
    "q_rb": 12,
    "p0_pris": 4,
    "q_pris": 4,
    "p0_rev": 7,
    "q_rev": 7,
}


def _blkdiag(*blocks: tuple[float, int]) -> Matrix:
    return scipy.linalg.block_diag(*[value * np.eye(size) for value, size in blocks])


class SaliencyConfig(BaseModel):
    """Linear factors applied to a landmark's position covariance, per class."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    thumb: float = Field(default=1.5, gt=0, description="All thumb joints")
    mcp: float = Field(default=1.5, gt=0, description="Knuckle joints")
    pip: float = Field(default=1.0, gt=0, description="First finger joints")
    dip: float = Field(default=1.5, gt=0, description="Second finger joints")
    tip: float = Field(default=0.5, gt=0, description="Fingertips")

    def score(self, class_name: str) -> float:
        return float(getattr(self, class_name))


class RansacConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    iterations: int = Field(default=200, gt=0)
    inlier_threshold: float = Field(
        default=0.01,
        gt=0,
        description="Inlier residual bound in meters for the most certain track",
    )
    min_inliers: int = Field(default=6, ge=3)
    window: int = Field(
        default=10,
        ge=1,
        description="Frames between the start and end positions of the initialization tracks",
    )


class BodyConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    iterations: int = Field(default=2, ge=1, description="Iterated EKF steps")
    tolerance: float = Field(
        default=1e-6, gt=0, description="Iteration stops once the state moves less than this"
    )
    gating_rounds: int = Field(default=3, ge=1)
    reinit_lost_fraction: float = Field(default=0.5, gt=0, le=1)
    model_trim_fraction: float = Field(
        default=0.8,
        gt=0,
        le=1,
        description="Share of best-fitting landmarks that score a motion model",
    )
    jacobian_step: float = Field(default=1e-6, gt=0)


class JointConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    iterations: int = Field(
        default=1, ge=1, description="EKF linearizations per update, more than 1 iterates"
    )
    tolerance: float = Field(
        default=1e-6, gt=0, description="Iteration stops once the state moves less than this"
    )
    seed_translation: float = Field(
        default=0.02, gt=0, description="Relative translation (m) that seeds the prismatic filter"
    )
    seed_rotation: float = Field(
        default=math.radians(5.0),
        gt=0,
        description="Relative rotation (rad) that seeds the revolute filter",
    )
    jacobian_step: float = Field(default=1e-6, gt=0)


class ModelSelectConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    window: int = Field(default=30, ge=1, description="Frames in the likelihood window")
    radius_cap: float = Field(
        default=5.0,
        gt=0,
        description="Revolute estimates with a larger radius are treated as prismatic",
    )
    min_frames: int = Field(default=5, ge=1)
    parsimony: float = Field(default=0.05, ge=0, description="Penalty per model rank (nats)")
    disconnected_floor: float = Field(default=-50.0)


class PipelineConfig(BaseModel):
    model_config = ConfigDict(
        frozen=True, extra="forbid", arbitrary_types_allowed=True, validate_default=True
    )

    p0_lm: np.ndarray = Field(default_factory=lambda: _blkdiag((0.09, 3), (0.06, 3)))
    q_lm: np.ndarray = Field(default_factory=lambda: _blkdiag((0.13, 3), (0.05, 3)))
    r_lm: np.ndarray = Field(default_factory=lambda: 0.05 * np.eye(3))
    p0_rb: np.ndarray = Field(
        default_factory=lambda: _blkdiag((0.05, 3), (0.2, 3), (0.1, 3), (0.2, 3))
    )
    q_rb: np.ndarray = Field(
        default_factory=lambda: _blkdiag((0.75, 3), (3.0, 3), (2.4, 3), (4.8, 3))
    )
    p0_pris: np.ndarray = Field(default_factory=lambda: 3.0 * np.eye(4))
    q_pris: np.ndarray = Field(
        default_factory=lambda: _blkdiag((2.55, 2), (0.7, 1), (75.0, 1))
    )
    p0_rev: np.ndarray = Field(default_factory=lambda: np.eye(7))
    q_rev: np.ndarray = Field(
        default_factory=lambda: _blkdiag((2.55, 2), (0.3, 3), (5.1, 1), (75.0, 1))
    )

    dt_ref: float = Field(
        default=1.0 / 30.0, gt=0, description="Frame period the process covariances are tuned at"
    )
    landmark_unc_thresh: float = Field(default=0.3, gt=0)
    vis_thresh: float = Field(default=0.006, gt=0)
    maha_lm_thresh: float = Field(default=0.19, gt=0)
    maha_rb_thresh: float = Field(default=0.25, gt=0)

    saliency: SaliencyConfig = Field(default_factory=SaliencyConfig)
    ransac: RansacConfig = Field(default_factory=RansacConfig)
    body: BodyConfig = Field(default_factory=BodyConfig)
    joint: JointConfig = Field(default_factory=JointConfig)
    model_select: ModelSelectConfig = Field(default_factory=ModelSelectConfig)

    @field_validator(*COVARIANCE_DIMS.keys(), mode="before")
    @classmethod
    def _coerce_covariance(cls, value: Any, info: ValidationInfo) -> np.ndarray:
        name = str(info.field_name)
        size = COVARIANCE_DIMS[name]
        if isinstance(value, np.ndarray) and value.shape == (size, size):
            matrix = value.astype(np.float64)
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            matrix = float(value) * np.eye(size)
        elif isinstance(value, (list, tuple)) and all(
            isinstance(v, (int, float)) for v in value
        ):
            if len(value) != size:
                raise ValueError(f"{name} diagonal must have {size} entries, got {len(value)}")
            matrix = np.diag(np.asarray(value, dtype=np.float64))
        else:
            matrix = np.asarray(value, dtype=np.float64)
            if matrix.shape != (size, size):
                raise ValueError(f"{name} must be {size}x{size}, got shape {matrix.shape}")
        if not np.all(np.isfinite(matrix)):
            raise ValueError(f"{name} must be finite")
        if not np.allclose(matrix, matrix.T, atol=1e-12, rtol=0.0):
            raise ValueError(f"{name} not symmetric")
        if not is_positive_definite(matrix):
            raise ValueError(f"{name} not positive definite")
        matrix.setflags(write=False)
        return matrix

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, PipelineConfig):
            return NotImplemented
        return self.to_toml_dict() == other.to_toml_dict()

    __hash__ = None  # type: ignore[assignment]

    def step_scale(self, dt: float) -> float:
        """Factor applied to a process covariance over an interval of ``dt``."""
        return dt / self.dt_ref

    def without_uncertainty_models(self) -> "PipelineConfig":
        """Ablation: unit saliency scores and both gating levels disabled."""
        return self.model_copy(
            update={
                "saliency": SaliencyConfig(thumb=1.0, mcp=1.0, pip=1.0, dip=1.0, tip=1.0),
                "maha_lm_thresh": math.inf,
                "maha_rb_thresh": math.inf,
            }
        )

    def to_toml_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {}
        for name in COVARIANCE_DIMS:
            matrix: np.ndarray = getattr(self, name)
            if np.count_nonzero(matrix - np.diag(np.diag(matrix))) == 0:
                data[name] = [float(v) for v in np.diag(matrix)]
            else:
                data[name] = [[float(v) for v in row] for row in matrix]
        for name in (
            "dt_ref",
            "landmark_unc_thresh",
            "vis_thresh",
            "maha_lm_thresh",
            "maha_rb_thresh",
        ):
            data[name] = float(getattr(self, name))
        for name in ("saliency", "ransac", "body", "joint", "model_select"):
            data[name] = getattr(self, name).model_dump()
        return data


def load_config(path: str | Path) -> PipelineConfig:
    """Read a TOML config; omitted fields keep their defaults."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"Cannot read config file {path}: {e}")
    return parse_config(text, source=str(path))


def parse_config(text: str, source: str = "<string>") -> PipelineConfig:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"Failed to parse {source}: {e}")
    try:
        config = PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError.from_validation_error(e, source)
    logger.debug(f"Loaded config from {source}")
    return config


def serialize_config(config: PipelineConfig) -> str:
    return tomli_w.dumps(config.to_toml_dict())


def save_config(config: PipelineConfig, path: str | Path) -> None:
    Path(path).write_text(serialize_config(config), encoding="utf-8")


class ConfigError(HandJointError):
    """Raised when a configuration file cannot be parsed or fails validation."""

    def __init__(self, message: str, fields: List[str] | None = None):
        super().__init__(message)
        self.fields = fields or []

    @classmethod
    def from_validation_error(cls, error: ValidationError, source: str) -> "ConfigError":
        fields = []
        messages = []
        for detail in error.errors():
            field_name = ".".join(str(part) for part in detail["loc"])
            fields.append(field_name)
            messages.append(f"{field_name}: {detail['msg']}")
        return cls(f"Invalid config {source}: " + "; ".join(messages), fields)
