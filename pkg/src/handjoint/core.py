"""Geometry substrate: SE(3) poses in exponential coordinates, rigid
transforms, axis parameterizations and Gaussian helpers.

Twists are ordered (linear; angular). Positions are meters, time seconds,
angles radians. The ``*_batch`` maps work on stacks of twists so the filters
can evaluate many linearization points in one call.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Tuple

import numpy as np
import numpy.typing as npt
import scipy.linalg
from scipy.spatial.transform import Rotation

logger = logging.getLogger(__name__)

Vector = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]
BatchTarget = Callable[[Matrix], Matrix]

# Below this rotation norm the V-matrix coefficients use their Taylor series.
SMALL_ANGLE = 1e-4
# Rotations this close to pi are reported as lying on the log-map branch cut.
BRANCH_CUT_TOLERANCE = 1e-6
PSD_TOLERANCE = 1e-9

_LEVI_CIVITA = np.zeros((3, 3, 3))
_LEVI_CIVITA[0, 1, 2] = _LEVI_CIVITA[1, 2, 0] = _LEVI_CIVITA[2, 0, 1] = 1.0
_LEVI_CIVITA[0, 2, 1] = _LEVI_CIVITA[2, 1, 0] = _LEVI_CIVITA[1, 0, 2] = -1.0


def as_vector(values: npt.ArrayLike, size: int, name: str = "vector") -> Vector:
    """Return a float copy of ``values`` checked to have ``size`` finite entries."""
    array = np.array(values, dtype=np.float64).reshape(-1)
    if array.shape != (size,):
        raise ValueError(f"{name} must have {size} elements, got {array.shape}")
    if not np.isfinite(array).all():
        raise ValueError(f"{name} must be finite, got {array}")
    return array


def _cross(a: Matrix, b: Matrix) -> Matrix:
    """Row-wise cross product of two (k, 3) arrays."""
    return np.einsum("ijk,nj,nk->ni", _LEVI_CIVITA, a, b)


def _v_coefficients(theta: Vector) -> Tuple[Vector, Vector]:
    # V(w) = I + b [w]x + c [w]x^2
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(t)) / t**2)
    c = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (t - np.sin(t)) / t**3)
    return b, c


def _v_inverse_coefficient(theta: Vector) -> Vector:
    # V(w)^-1 = I - 1/2 [w]x + d [w]x^2
    small = theta < SMALL_ANGLE
    t = np.where(small, 1.0, theta)
    return np.where(
        small,
        1.0 / 12.0 + theta**2 / 720.0,
        (1.0 - t * np.sin(t) / (2.0 * (1.0 - np.cos(t)))) / t**2,
    )


def _first_nonzero_sign(v: Vector, tol: float = 1e-12) -> float:
    for value in v:
        if abs(value) > tol:
            return 1.0 if value > 0 else -1.0
    return 1.0


def exp_map_batch(twists: Matrix) -> Tuple[npt.NDArray[np.float64], Matrix]:
    """Rotations (k, 3, 3) and translations (k, 3) of a (k, 6) stack of twists."""
    linear, angular = twists[:, :3], twists[:, 3:]
    b, c = _v_coefficients(np.linalg.norm(angular, axis=1))
    wv = _cross(angular, linear)
    translations = linear + b[:, None] * wv + c[:, None] * _cross(angular, wv)
    return Rotation.from_rotvec(angular).as_matrix(), translations


def log_map_batch(
    rotations: npt.NDArray[np.float64], translations: Matrix
) -> Tuple[Matrix, npt.NDArray[np.bool_]]:
    """Principal-branch twists (k, 6) of stacked rotations and translations.

    Also returns which rows lie within ``BRANCH_CUT_TOLERANCE`` of a rotation
    by pi; those rows get the canonical sign for their rotation vector.
    """
    angular = Rotation.from_matrix(rotations).as_rotvec()
    theta = np.linalg.norm(angular, axis=1)
    near_cut = math.pi - theta < BRANCH_CUT_TOLERANCE
    for row in np.flatnonzero(near_cut):
        angular[row] *= _first_nonzero_sign(angular[row])
    d = _v_inverse_coefficient(theta)
    wt = _cross(angular, translations)
    linear = translations - 0.5 * wt + d[:, None] * _cross(angular, wt)
    return np.hstack([linear, angular]), near_cut


def _exp(linear: Vector, angular: Vector) -> Matrix:
    rotations, translations = exp_map_batch(np.concatenate([linear, angular])[None, :])
    transform = np.eye(4)
    transform[:3, :3] = rotations[0]
    transform[:3, 3] = translations[0]
    return transform


def _log(transform: Matrix) -> Tuple[Vector, Vector, bool]:
    twists, near_cut = log_map_batch(transform[None, :3, :3], transform[None, :3, 3])
    return twists[0, :3], twists[0, 3:], bool(near_cut[0])


@dataclass(frozen=True, eq=False)
class Pose6:
    """Rigid pose as a twist in exponential coordinates."""

    linear: Vector = field(default_factory=lambda: np.zeros(3))
    angular: Vector = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        linear = as_vector(self.linear, 3, "Pose6.linear")
        angular = as_vector(self.angular, 3, "Pose6.angular")
        if float(angular @ angular) > math.pi**2:
            # re-express on the principal branch without changing the transform
            linear, angular, _ = _log(_exp(linear, angular))
        object.__setattr__(self, "linear", linear)
        object.__setattr__(self, "angular", angular)

    @classmethod
    def identity(cls) -> "Pose6":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vector: npt.ArrayLike) -> "Pose6":
        v = as_vector(vector, 6, "Pose6 vector")
        return cls(v[:3], v[3:])

    @property
    def vector(self) -> Vector:
        return np.concatenate([self.linear, self.angular])

    @property
    def matrix(self) -> Matrix:
        return exp_map(self)

    @property
    def rotation_angle(self) -> float:
        return float(np.linalg.norm(self.angular))

    def __repr__(self) -> str:
        return f"Pose6(linear={self.linear.tolist()}, angular={self.angular.tolist()})"


@dataclass(frozen=True, eq=False)
class Velocity6:
    """Spatial twist rate: pose(t + dt) = exp(dt * velocity) * pose(t)."""

    linear: Vector = field(default_factory=lambda: np.zeros(3))
    angular: Vector = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "linear", as_vector(self.linear, 3, "Velocity6.linear"))
        object.__setattr__(
            self, "angular", as_vector(self.angular, 3, "Velocity6.angular")
        )

    @classmethod
    def zero(cls) -> "Velocity6":
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_vector(cls, vector: npt.ArrayLike) -> "Velocity6":
        v = as_vector(vector, 6, "Velocity6 vector")
        return cls(v[:3], v[3:])

    @property
    def vector(self) -> Vector:
        return np.concatenate([self.linear, self.angular])

    def __repr__(self) -> str:
        return (
            f"Velocity6(linear={self.linear.tolist()}, angular={self.angular.tolist()})"
        )


def normalize_spherical(phi: float, theta: float) -> Tuple[float, float, bool]:
    """Map raw angles to phi in [0, 2pi), theta in [0, pi].

    The returned flag is True when theta was reflected, which negates the
    sign of any covariance terms coupling theta to other quantities.
    """
    theta = math.remainder(theta, 2.0 * math.pi)
    flipped = False
    if theta < 0.0:
        theta = -theta
        phi += math.pi
        flipped = True
    phi = phi % (2.0 * math.pi)
    if phi >= 2.0 * math.pi:
        phi = 0.0
    return phi, theta, flipped


@dataclass(frozen=True)
class AxisSpherical:
    """Unit axis direction as (phi, theta) spherical angles."""

    phi: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.phi) and math.isfinite(self.theta)):
            raise ValueError(f"Axis angles must be finite, got {self.phi}, {self.theta}")
        phi, theta, _ = normalize_spherical(self.phi, self.theta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_direction(cls, direction: npt.ArrayLike) -> "AxisSpherical":
        d = as_vector(direction, 3, "axis direction")
        norm = float(np.linalg.norm(d))
        if norm == 0.0:
            raise ValueError("Axis direction must be non-zero")
        d = d / norm
        theta = math.acos(max(-1.0, min(1.0, float(d[2]))))
        phi = math.atan2(float(d[1]), float(d[0])) if math.sin(theta) > 1e-15 else 0.0
        return cls(phi, theta)

    @property
    def direction(self) -> Vector:
        return axis_direction(self)


def spherical_to_direction(phi: float, theta: float) -> Vector:
    """Unit vector for raw (unnormalized) angles; smooth in both arguments."""
    st = math.sin(theta)
    return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


def spherical_directions(phi: Vector, theta: Vector) -> Matrix:
    """Row-wise :func:`spherical_to_direction` for arrays of angles."""
    st = np.sin(theta)
    return np.stack([st * np.cos(phi), st * np.sin(phi), np.cos(theta)], axis=1)


def axis_direction(axis: AxisSpherical) -> Vector:
    return spherical_to_direction(axis.phi, axis.theta)


def canonical_sign(direction: Vector) -> float:
    """+1 when the first non-zero component is positive, else -1."""
    return _first_nonzero_sign(direction)


@dataclass(frozen=True, eq=False)
class Gaussian:
    mean: Vector
    cov: Matrix

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1).copy()
        cov = np.asarray(self.cov, dtype=np.float64)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise ValueError(f"Covariance must be {n}x{n}, got {cov.shape}")
        cov = symmetrize(cov)
        if not is_psd(cov):
            raise ValueError("Covariance must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    def log_likelihood(self, x: npt.ArrayLike) -> float:
        return gaussian_log_likelihood(np.asarray(x, dtype=np.float64) - self.mean, self.cov)


def symmetrize(matrix: Matrix) -> Matrix:
    return 0.5 * (matrix + matrix.T)


def is_psd(matrix: Matrix, tol: float = PSD_TOLERANCE) -> bool:
    if not np.allclose(matrix, matrix.T, atol=1e-12, rtol=0.0):
        return False
    return bool(np.linalg.eigvalsh(matrix).min() >= -tol)


def is_positive_definite(matrix: Matrix) -> bool:
    try:
        scipy.linalg.cholesky(symmetrize(matrix), lower=True)
    except np.linalg.LinAlgError:
        return False
    return True


def gaussian_log_likelihood(residual: Vector, cov: Matrix) -> float:
    """log N(residual; 0, cov)."""
    try:
        factor = scipy.linalg.cho_factor(symmetrize(cov), lower=True, check_finite=False)
    except np.linalg.LinAlgError as e:
        raise SingularCovarianceError(f"Covariance is not positive definite: {e}")
    maha_sq = float(residual @ scipy.linalg.cho_solve(factor, residual, check_finite=False))
    log_det = 2.0 * float(np.sum(np.log(np.diag(factor[0]))))
    return -0.5 * (maha_sq + log_det + residual.shape[0] * math.log(2.0 * math.pi))


def exp_map(pose: Pose6) -> Matrix:
    """SE(3) exponential: 4x4 homogeneous transform of a twist."""
    return _exp(pose.linear, pose.angular)


def log_map(transform: Matrix) -> Pose6:
    """SE(3) logarithm on the principal branch."""
    pose, near_cut = log_map_checked(transform)
    if near_cut:
        logger.debug("log_map input is near the rotation branch cut")
    return pose


def log_map_checked(transform: Matrix) -> Tuple[Pose6, bool]:
    """Like :func:`log_map` but also reports whether the rotation angle is
    within ``BRANCH_CUT_TOLERANCE`` of pi."""
    transform = np.asarray(transform, dtype=np.float64)
    if transform.shape != (4, 4):
        raise ValueError(f"Transform must be 4x4, got {transform.shape}")
    linear, angular, near_cut = _log(transform)
    return Pose6(linear, angular), near_cut


def transform_point(pose: Pose6, point: npt.ArrayLike) -> Vector:
    transform = exp_map(pose)
    return transform[:3, :3] @ as_vector(point, 3, "point") + transform[:3, 3]


def transform_points(pose: Pose6, points: Matrix) -> Matrix:
    """Apply the pose to an (N, 3) array of points."""
    transform = exp_map(pose)
    return np.asarray(points) @ transform[:3, :3].T + transform[:3, 3]


def compose(first: Pose6, second: Pose6) -> Pose6:
    """Pose of exp(first) * exp(second)."""
    return log_map(exp_map(first) @ exp_map(second))


def invert_transform(transform: Matrix) -> Matrix:
    inverse = np.eye(4)
    rotation_t = transform[:3, :3].T
    inverse[:3, :3] = rotation_t
    inverse[:3, 3] = -rotation_t @ transform[:3, 3]
    return inverse


def translation_transform(translation: Vector) -> Matrix:
    transform = np.eye(4)
    transform[:3, 3] = translation
    return transform


def rotation_about_line(direction: Vector, point: Vector, angle: float) -> Matrix:
    """Rotation by ``angle`` about the line through ``point`` along ``direction``."""
    rotation = Rotation.from_rotvec(angle * np.asarray(direction)).as_matrix()
    transform = np.eye(4)
    transform[:3, :3] = rotation
    transform[:3, 3] = point - rotation @ point
    return transform


def rigid_alignment(
    source: Matrix, target: Matrix, weights: Vector | None = None
) -> Matrix:
    """Weighted least-squares rigid transform mapping ``source`` onto ``target``.

    Closed form via the SVD of the weighted cross-covariance; the reflection
    solution is rejected by correcting the sign of the smallest singular
    direction.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if source.shape != target.shape or source.shape[1] != 3:
        raise ValueError(
            f"Point sets must both be (N, 3), got {source.shape} and {target.shape}"
        )
    w = np.ones(source.shape[0]) if weights is None else np.asarray(weights, dtype=np.float64)
    w = w / w.sum()
    centroid_source = w @ source
    centroid_target = w @ target
    h = (source - centroid_source).T @ ((target - centroid_target) * w[:, None])
    u, _, vt = np.linalg.svd(h)
    d = np.sign(np.linalg.det(vt.T @ u.T))
    if d == 0.0:
        d = 1.0
    rotation = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    transform = np.eye(4)
    transform[:3, :3] = rotation
    transform[:3, 3] = centroid_target - rotation @ centroid_source
    return transform


def numerical_jacobian(
    func: BatchTarget, x: Vector, step: float = 1e-6
) -> Tuple[Vector, Matrix]:
    """Value and central-difference Jacobian of ``func`` at ``x``.

    ``func`` maps each row of a (k, n) array to a row of its (k, m) result,
    so the center and all 2n displaced points are evaluated in one call.
    """
    n = x.shape[0]
    offsets = step * np.eye(n)
    values = func(np.vstack([x[None, :], x + offsets, x - offsets]))
    jacobian = (values[1 : n + 1] - values[n + 1 :]).T / (2.0 * step)
    return values[0], jacobian


class HandJointError(Exception):
    """Base class for all handjoint errors."""


class SingularCovarianceError(HandJointError):
    """Raised when a covariance that must be positive definite is not."""


class InvalidTimeStepError(HandJointError):
    """Raised when a prediction is asked for a non-positive time step."""
