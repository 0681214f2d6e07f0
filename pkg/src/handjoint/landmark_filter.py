"""Per-landmark constant-velocity Kalman filters.

Each accepted hand landmark is tracked by its own filter over the state
(location, velocity). Observations are gated by visibility and by the
Mahalanobis distance of the innovation; filters whose position uncertainty
grows past the configured trace bound are marked lost.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, Iterable, List, Set, Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg

from .config import PipelineConfig
from .core import (
    InvalidTimeStepError,
    Matrix,
    SingularCovarianceError,
    Vector,
    as_vector,
    symmetrize,
)

logger = logging.getLogger(__name__)

NUM_LANDMARKS = 21
H_LM = np.hstack([np.eye(3), np.zeros((3, 3))])


class LandmarkClass(Enum):
    WRIST = "wrist"
    THUMB = "thumb"
    MCP = "mcp"
    PIP = "pip"
    DIP = "dip"
    TIP = "tip"

    @classmethod
    def from_id(cls, landmark_id: int) -> "LandmarkClass":
        """Class of a landmark in the 21-point hand topology.

        0 is the wrist, 1-4 the thumb, then four joints per finger
        (knuckle, first joint, second joint, tip) for ids 5-20.
        """
        if not 0 <= landmark_id < NUM_LANDMARKS:
            raise ValueError(f"Landmark id must be in [0, {NUM_LANDMARKS - 1}], got {landmark_id}")
        if landmark_id == 0:
            return cls.WRIST
        if landmark_id <= 4:
            return cls.THUMB
        return (cls.MCP, cls.PIP, cls.DIP, cls.TIP)[(landmark_id - 5) % 4]

    def saliency(self, config: PipelineConfig) -> float:
        if self is LandmarkClass.WRIST:
            raise ValueError("The wrist has no saliency score, it is excluded from filtering")
        return config.saliency.score(self.value)


class FilterStatus(Enum):
    ACTIVE = "active"
    LOST = "lost"


class IngestOutcome(Enum):
    ACCEPTED = "accepted"
    LOW_VISIBILITY = "low_visibility"
    EXCLUDED_CLASS = "excluded_class"


class CorrectionOutcome(Enum):
    CORRECTED = "corrected"
    GATED_OUTLIER = "gated_outlier"


@dataclass(frozen=True, eq=False)
class LandmarkObservation:
    t: float
    id: int
    pos: Vector
    vis: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "pos", as_vector(self.pos, 3, f"landmark {self.id} position"))
        if not 0 <= self.id < NUM_LANDMARKS:
            raise ValueError(f"Landmark id must be in [0, {NUM_LANDMARKS - 1}], got {self.id}")
        if not 0.0 <= self.vis <= 1.0:
            raise ValueError(f"Visibility must be in [0, 1], got {self.vis}")
        if not math.isfinite(self.t):
            raise ValueError(f"Timestamp must be finite, got {self.t}")

    @property
    def landmark_class(self) -> LandmarkClass:
        return LandmarkClass.from_id(self.id)


@dataclass(frozen=True, eq=False)
class LandmarkFilterState:
    id: int
    x: Vector
    P: Matrix
    t: float
    landmark_class: LandmarkClass
    missed_updates: int = 0
    status: FilterStatus = FilterStatus.ACTIVE

    @classmethod
    def spawn(cls, obs: LandmarkObservation, config: PipelineConfig) -> "LandmarkFilterState":
        """Fresh filter at the observed location with zero velocity."""
        return cls(
            id=obs.id,
            x=np.concatenate([obs.pos, np.zeros(3)]),
            P=np.array(config.p0_lm, dtype=np.float64),
            t=obs.t,
            landmark_class=obs.landmark_class,
        )

    @property
    def location(self) -> Vector:
        return self.x[:3]

    @property
    def velocity(self) -> Vector:
        return self.x[3:]

    @property
    def position_covariance(self) -> Matrix:
        return self.P[:3, :3]

    @property
    def position_uncertainty(self) -> float:
        return float(np.trace(self.P[:3, :3]))


@dataclass(frozen=True, eq=False)
class LandmarkMeasurement:
    """Filtered landmark location handed to the body level."""

    id: int
    pos: Vector
    cov: Matrix


def ingest(obs: LandmarkObservation, config: PipelineConfig) -> IngestOutcome:
    if obs.landmark_class is LandmarkClass.WRIST:
        return IngestOutcome.EXCLUDED_CLASS
    if obs.vis < config.vis_thresh:
        return IngestOutcome.LOW_VISIBILITY
    return IngestOutcome.ACCEPTED


def predict(state: LandmarkFilterState, dt: float, config: PipelineConfig) -> LandmarkFilterState:
    """Constant-velocity prediction over ``dt`` seconds."""
    if not dt > 0.0:
        raise InvalidTimeStepError(f"Landmark prediction needs dt > 0, got {dt}")
    F = np.eye(6)
    F[:3, 3:] = dt * np.eye(3)
    P = F @ state.P @ F.T + config.q_lm * config.step_scale(dt)
    return replace(state, x=F @ state.x, P=symmetrize(P), t=state.t + dt)


def mahalanobis(z: npt.ArrayLike, z_pred: npt.ArrayLike, S: Matrix) -> float:
    residual = np.asarray(z, dtype=np.float64) - np.asarray(z_pred, dtype=np.float64)
    try:
        factor = scipy.linalg.cho_factor(symmetrize(np.asarray(S, dtype=np.float64)), lower=True)
    except np.linalg.LinAlgError as e:
        raise SingularCovarianceError(f"Innovation covariance is not positive definite: {e}")
    return math.sqrt(max(0.0, float(residual @ scipy.linalg.cho_solve(factor, residual))))


def correct(
    state: LandmarkFilterState, obs: LandmarkObservation, config: PipelineConfig
) -> Tuple[LandmarkFilterState, CorrectionOutcome]:
    S = state.position_covariance + config.r_lm
    distance = mahalanobis(obs.pos, state.location, S)
    if distance >= config.maha_lm_thresh:
        logger.debug(f"Landmark {state.id} gated at t={obs.t:.3f} (M={distance:.3f})")
        return (
            replace(state, missed_updates=state.missed_updates + 1),
            CorrectionOutcome.GATED_OUTLIER,
        )

    gain = scipy.linalg.cho_solve(scipy.linalg.cho_factor(S, lower=True), H_LM @ state.P).T
    x = state.x + gain @ (obs.pos - state.location)
    I_KH = np.eye(6) - gain @ H_LM
    P = I_KH @ state.P @ I_KH.T + gain @ config.r_lm @ gain.T
    return (
        replace(state, x=x, P=symmetrize(P), missed_updates=0),
        CorrectionOutcome.CORRECTED,
    )


def check_lost(state: LandmarkFilterState, config: PipelineConfig) -> LandmarkFilterState:
    if state.position_uncertainty >= config.landmark_unc_thresh:
        if state.status is FilterStatus.ACTIVE:
            logger.debug(
                f"Landmark {state.id} lost (trace={state.position_uncertainty:.3f})"
            )
        return replace(state, status=FilterStatus.LOST)
    return replace(state, status=FilterStatus.ACTIVE)


def adjusted_covariance(state: LandmarkFilterState, config: PipelineConfig) -> Matrix:
    """Position covariance scaled by the landmark class saliency."""
    return state.landmark_class.saliency(config) * state.position_covariance


@dataclass
class LandmarkFrame:
    """Result of feeding one frame of observations to a :class:`LandmarkBank`."""

    t: float
    measurements: List[LandmarkMeasurement] = field(default_factory=list)
    outcomes: Dict[int, str] = field(default_factory=dict)

    def measurement_ids(self) -> List[int]:
        return [m.id for m in self.measurements]


class LandmarkBank:
    """All landmark filters of one hand.

    A filter is spawned on the first accepted observation of an id and
    respawned after it was lost. Each frame is processed as
    :meth:`process_frame`, optional :meth:`reject` feedback from the body
    level, then :meth:`finish_frame`.

    The filters live in arrays indexed by landmark id so a frame is predicted
    and corrected in a handful of stacked operations. The arithmetic is the
    same as :func:`predict` and :func:`correct`.
    """

    def __init__(self, config: PipelineConfig):
        self.config = config
        self._classes = [LandmarkClass.from_id(i) for i in range(NUM_LANDMARKS)]
        self._saliency = np.array(
            [0.0] + [c.saliency(config) for c in self._classes[1:]], dtype=np.float64
        )
        self._x = np.zeros((NUM_LANDMARKS, 6))
        self._P = np.zeros((NUM_LANDMARKS, 6, 6))
        self._t = np.zeros(NUM_LANDMARKS)
        self._missed = np.zeros(NUM_LANDMARKS, dtype=np.int64)
        self._exists = np.zeros(NUM_LANDMARKS, dtype=bool)
        self._lost = np.zeros(NUM_LANDMARKS, dtype=bool)
        self._spawned = np.zeros(NUM_LANDMARKS, dtype=bool)
        self._x_predicted = self._x.copy()
        self._P_predicted = self._P.copy()
        self._missed_predicted = self._missed.copy()

    @property
    def filters(self) -> Dict[int, LandmarkFilterState]:
        """Snapshot of the current filters keyed by landmark id."""
        return {i: self._state(i) for i in np.flatnonzero(self._exists).tolist()}

    def _state(self, i: int) -> LandmarkFilterState:
        return LandmarkFilterState(
            id=i,
            x=self._x[i].copy(),
            P=self._P[i].copy(),
            t=float(self._t[i]),
            landmark_class=self._classes[i],
            missed_updates=int(self._missed[i]),
            status=FilterStatus.LOST if self._lost[i] else FilterStatus.ACTIVE,
        )

    def _predict_all(self, t: float) -> None:
        due = np.flatnonzero(self._exists & (self._t < t))
        if due.size == 0:
            return
        dt = t - self._t[due]
        F = np.tile(np.eye(6), (due.size, 1, 1))
        F[:, :3, 3:] = dt[:, None, None] * np.eye(3)
        P = F @ self._P[due] @ F.transpose(0, 2, 1)
        P += self.config.q_lm * self.config.step_scale(dt)[:, None, None]
        self._P[due] = 0.5 * (P + P.transpose(0, 2, 1))
        self._x[due] = np.einsum("kij,kj->ki", F, self._x[due])
        self._t[due] = t

    def _correct_all(self, rows: npt.NDArray[np.int64], z: Matrix) -> npt.NDArray[np.bool_]:
        """Gate and correct ``rows`` against positions ``z``; returns the accepted mask."""
        P = self._P[rows]
        S = P[:, :3, :3] + self.config.r_lm
        try:
            S_inv = np.linalg.inv(S)
        except np.linalg.LinAlgError as e:
            raise SingularCovarianceError(f"Innovation covariance is not positive definite: {e}")
        innovation = z - self._x[rows, :3]
        distances = np.sqrt(
            np.maximum(0.0, np.einsum("ki,kij,kj->k", innovation, S_inv, innovation))
        )
        accepted = distances < self.config.maha_lm_thresh

        gain = P[:, :, :3] @ S_inv
        I_KH = np.eye(6) - gain @ H_LM
        P_new = I_KH @ P @ I_KH.transpose(0, 2, 1)
        P_new += gain @ self.config.r_lm @ gain.transpose(0, 2, 1)
        x_new = self._x[rows] + np.einsum("kij,kj->ki", gain, innovation)

        kept = rows[accepted]
        self._x[kept] = x_new[accepted]
        self._P[kept] = 0.5 * (P_new[accepted] + P_new[accepted].transpose(0, 2, 1))
        self._missed[kept] = 0
        self._missed[rows[~accepted]] += 1
        for i, distance in zip(rows[~accepted].tolist(), distances[~accepted].tolist()):
            logger.debug(f"Landmark {i} gated (M={distance:.3f})")
        return accepted

    def process_frame(self, t: float, observations: Iterable[LandmarkObservation]) -> LandmarkFrame:
        frame = LandmarkFrame(t=t)
        self._exists &= ~self._lost
        self._lost[:] = False
        self._spawned[:] = False
        self._predict_all(t)
        self._x_predicted = self._x.copy()
        self._P_predicted = self._P.copy()
        self._missed_predicted = self._missed.copy()

        forwarded: List[int] = []
        tracked: List[int] = []
        positions: List[Vector] = []
        for obs in observations:
            outcome = ingest(obs, self.config)
            if outcome is not IngestOutcome.ACCEPTED:
                frame.outcomes[obs.id] = outcome.value
                logger.debug(f"Landmark {obs.id} rejected at t={t:.3f}: {outcome.value}")
                continue
            forwarded.append(obs.id)
            if self._exists[obs.id]:
                tracked.append(obs.id)
                positions.append(obs.pos)
                continue
            self._x[obs.id] = np.concatenate([obs.pos, np.zeros(3)])
            self._P[obs.id] = self.config.p0_lm
            self._t[obs.id] = t
            self._missed[obs.id] = 0
            self._exists[obs.id] = True
            self._spawned[obs.id] = True
            frame.outcomes[obs.id] = "spawned"

        gated: Set[int] = set()
        if tracked:
            accepted = self._correct_all(np.array(tracked), np.array(positions))
            for landmark_id, ok in zip(tracked, accepted.tolist()):
                outcome = CorrectionOutcome.CORRECTED if ok else CorrectionOutcome.GATED_OUTLIER
                frame.outcomes[landmark_id] = outcome.value
                if not ok:
                    gated.add(landmark_id)
        forwarded = [i for i in forwarded if i not in gated]
        if forwarded:
            rows = np.array(forwarded)
            locations = self._x[rows, :3]
            covariances = self._saliency[rows, None, None] * self._P[rows, :3, :3]
            frame.measurements = [
                LandmarkMeasurement(id=i, pos=pos, cov=cov)
                for i, pos, cov in zip(forwarded, locations, covariances)
            ]
        return frame

    def reject(self, landmark_ids: Iterable[int]) -> None:
        """Undo this frame's correction of landmarks rejected downstream."""
        for landmark_id in landmark_ids:
            if not self._exists[landmark_id]:
                continue
            if self._spawned[landmark_id]:
                # nothing to fall back to
                self._exists[landmark_id] = False
                continue
            self._x[landmark_id] = self._x_predicted[landmark_id]
            self._P[landmark_id] = self._P_predicted[landmark_id]
            self._missed[landmark_id] = self._missed_predicted[landmark_id] + 1

    def finish_frame(self) -> List[int]:
        """Run the loss check on every filter; returns the ids lost this frame."""
        trace = np.trace(self._P[:, :3, :3], axis1=1, axis2=2)
        lost = self._exists & (trace >= self.config.landmark_unc_thresh)
        newly_lost = np.flatnonzero(lost & ~self._lost).tolist()
        for landmark_id in newly_lost:
            logger.debug(f"Landmark {landmark_id} lost (trace={trace[landmark_id]:.3f})")
        self._lost = lost
        return newly_lost

    def active_ids(self) -> List[int]:
        return np.flatnonzero(self._exists & ~self._lost).tolist()

    def is_lost(self, landmark_id: int) -> bool:
        return bool(not self._exists[landmark_id] or self._lost[landmark_id])
