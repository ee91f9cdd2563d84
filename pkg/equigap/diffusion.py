import math
from enum import Enum
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    field_validator,
    model_validator,
)
from scipy.special import logsumexp

from .groups import (
    GroupKind,
    GroupSpec,
    augment,
    orbit_nearest_point,
    orbit_sq_dist,
    quotient_coordinates,
)
from .log import logger
from .manifolds import PointCloud
from .nnindex import scan_nearest
from .utils import DEFAULT_ORBIT_K, NumericalError, as_points, make_rng

# Largest orbit quadrature tried by the adaptive refinement
MAX_ORBIT_K = 4096
# Score change accepted by the adaptive refinement
QUADRATURE_TOL = 1e-6
# Weight normalization tolerance
WEIGHT_TOL = 1e-12
# A trajectory with a coordinate beyond this is aborted
DIVERGENCE_LIMIT = 1e6
# Smallest gap between the two closest orbits for a unique minimizer
UNIQUENESS_GAP = 1e-6


class ScheduleKind(str, Enum):
    GEOMETRIC = "geometric"
    LINEAR = "linear"


class Schedule(BaseModel):
    """
    Noise schedule alpha_0 = 1 > alpha_1 > ... > alpha_T > 0
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    T: int = Field(..., ge=1)
    alpha: np.ndarray

    @field_validator("alpha", mode="before")
    @classmethod
    def _readonly(cls, value):
        arr = np.array(value, dtype=np.float64)
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def _check(self) -> "Schedule":
        a = self.alpha
        if a.shape != (self.T + 1,):
            raise ValueError("alpha must hold T + 1 values")
        if a[0] != 1.0:
            raise ValueError("alpha_0 must be 1")
        if np.any(a[1:] <= 0.0) or np.any(np.diff(a) >= 0.0):
            raise ValueError("alpha must be strictly decreasing and positive")
        return self

    @classmethod
    def linear(
        cls, T: int = 100, start: Optional[float] = None, end: float = 1e-4
    ) -> "Schedule":
        """
        alpha linear from `start` at step 1 down to `end` at step T

        start defaults to 1 - 1e-2 / T: 0.9999 for T = 100, closer to the
        data as T grows.
        """
        if start is None:
            start = 1.0 - 1e-2 / T
        if not 0.0 < end < start < 1.0:
            raise ValueError("Need 0 < end < start < 1")
        if T == 1:
            steps = np.array([end])
        else:
            steps = np.linspace(start, end, T)
        return cls(T=T, alpha=np.concatenate([[1.0], steps]))

    @classmethod
    def geometric(
        cls,
        T: int = 100,
        sigma_min: Optional[float] = None,
        sigma_max: float = 100.0,
    ) -> "Schedule":
        """
        Noise-to-signal ratio sqrt((1 - alpha) / alpha) geometric in t

        It runs from sigma_min at step 1 to sigma_max at step T. sigma_min
        defaults to 1 / T: the first step moves toward the data and the ratio
        between consecutive steps toward 1 as T grows. For T = 100 the
        defaults give alpha close to 0.9999 at step 1 and to 1e-4 at step T.
        """
        if sigma_min is None:
            sigma_min = 1.0 / T
        if not 0.0 < sigma_min < sigma_max:
            raise ValueError("Need 0 < sigma_min < sigma_max")
        if T == 1:
            sigma = np.array([sigma_max])
        else:
            sigma = np.geomspace(sigma_min, sigma_max, T)
        return cls(T=T, alpha=np.concatenate([[1.0], 1.0 / (1.0 + sigma**2)]))

    @classmethod
    def of(cls, kind: ScheduleKind, T: int) -> "Schedule":
        """Schedule of the given kind with default end points"""
        if ScheduleKind(kind) == ScheduleKind.LINEAR:
            return cls.linear(T)
        return cls.geometric(T)

    def check_step(self, t: int):
        if not 1 <= t <= self.T:
            raise ValueError(
                f"Step {t} outside [1, {self.T}]; the score is singular at t = 0"
            )

    def beta(self, t: int) -> float:
        """Temperature 2 (1 - alpha_t) / alpha_t"""
        self.check_step(t)
        a = self.alpha[t]
        return 2.0 * (1.0 - a) / a


class ScoreField(BaseModel):
    """
    Exact score of the noised empirical distribution of G(D)

    Continuous orbits are replaced by an equally spaced quadrature of
    quadrature_K points. When quadrature_K is not given it starts at
    DEFAULT_ORBIT_K and doubles until the score settles.
    """

    model_config = ConfigDict(frozen=True)

    dataset: PointCloud
    group: GroupSpec = Field(default_factory=GroupSpec.identity)
    quadrature_K: Optional[int] = Field(None, ge=1)
    schedule: Schedule = Field(default_factory=Schedule.geometric)

    _components: Optional[np.ndarray] = PrivateAttr(default=None)
    _K: Optional[int] = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check(self) -> "ScoreField":
        if self.dataset.n == 0:
            raise ValueError("Empty dataset")
        if self.group.kind == GroupKind.TRANSLATION:
            raise ValueError("The sampler supports identity and rotation groups")
        self.group.check_dim(self.dataset.ambient_dim)
        return self

    @property
    def ambient_dim(self) -> int:
        return self.dataset.ambient_dim

    @property
    def K(self) -> Optional[int]:
        """Orbit quadrature in use, None for the identity group"""
        self.components
        return self._K

    @property
    def components(self) -> np.ndarray:
        """Mixture centers"""
        if self._components is None:
            if self.group.kind == GroupKind.IDENTITY:
                self._components = self.dataset.points
            elif self.quadrature_K is not None:
                self._set_K(self.quadrature_K)
            else:
                self._refine()
        return self._components

    def _set_K(self, K: int):
        self._K = K
        self._components = augment(self.group, self.dataset, K).points

    def _refine(self):
        t = max(1, self.schedule.T // 10)
        alpha = self.schedule.alpha[t]
        rng = make_rng(0, "quadrature")
        base = self.dataset.points[rng.integers(self.dataset.n, size=10)]
        samples = math.sqrt(alpha) * base + math.sqrt(1.0 - alpha) * rng.standard_normal(
            base.shape
        )
        K = DEFAULT_ORBIT_K
        self._set_K(K)
        current = self.score(samples, t)
        while K < MAX_ORBIT_K:
            self._set_K(2 * K)
            refined = self.score(samples, t)
            change = np.max(np.abs(refined - current))
            scale = max(np.max(np.abs(refined)), 1.0)
            logger.debug("Orbit quadrature K=%d: score change %.3e", 2 * K, change)
            if change < QUADRATURE_TOL * scale:
                # the coarser grid already agreed
                self._set_K(K)
                return
            K, current = 2 * K, refined
        logger.warning(
            "Orbit quadrature did not settle, using K=%d", MAX_ORBIT_K
        )

    def score(self, y, t: int) -> np.ndarray:
        """
        Score of the noised mixture at step t

        Component weights are a softmax of the log-densities, computed with
        log-sum-exp; y may be a vector or an array (m, D).
        """
        self.schedule.check_step(t)
        y = as_points(y, self.ambient_dim)
        single = y.ndim == 1
        Y = np.atleast_2d(y)
        Z = self.components
        alpha = self.schedule.alpha[t]
        root = math.sqrt(alpha)
        # log N(y | sqrt(a) z, (1-a) I) up to terms constant in z
        logits = (2.0 * root * (Y @ Z.T) - alpha * np.sum(Z * Z, axis=1)) / (
            2.0 * (1.0 - alpha)
        )
        log_w = logits - logsumexp(logits, axis=1, keepdims=True)
        weights = np.exp(log_w)
        total = weights.sum(axis=1)
        if np.any(np.abs(total - 1.0) > WEIGHT_TOL):
            raise NumericalError(
                f"Mixture weights sum to {total.min()!r}..{total.max()!r}"
            )
        mean = weights @ Z
        s = -(Y - root * mean) / (1.0 - alpha)
        return s[0] if single else s


def ddim_step(field: ScoreField, y: np.ndarray, t: int) -> np.ndarray:
    """
    One deterministic reverse step from t to t - 1

    eps = -sqrt(1 - a_t) s_t(y), y0 = (y - sqrt(1 - a_t) eps) / sqrt(a_t),
    y_{t-1} = sqrt(a_{t-1}) y0 + sqrt(1 - a_{t-1}) eps
    """
    alpha = field.schedule.alpha
    eps = -math.sqrt(1.0 - alpha[t]) * field.score(y, t)
    y0 = (y - math.sqrt(1.0 - alpha[t]) * eps) / math.sqrt(alpha[t])
    return math.sqrt(alpha[t - 1]) * y0 + math.sqrt(1.0 - alpha[t - 1]) * eps


class ReverseResult(BaseModel):
    """
    Endpoints of the reverse flow

    endpoints - endpoints of the trajectories that did not diverge, in
        sample order
    diverged - indices of aborted trajectories
    trace - states (T + 1, n_samples, D) from t = T down to t = 0, when
        requested
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    endpoints: PointCloud
    sample_ids: Tuple[int, ...]
    diverged: Tuple[int, ...] = ()
    trace: Optional[np.ndarray] = None


def reverse_flow(
    field: ScoreField, y_T: np.ndarray, trace: bool = False
) -> ReverseResult:
    """Run the deterministic reverse flow from the given terminal states"""
    y = np.array(np.atleast_2d(as_points(y_T, field.ambient_dim)))
    T = field.schedule.T
    alive = np.ones(y.shape[0], dtype=bool)
    states: List[np.ndarray] = [y.copy()] if trace else []
    for t in range(T, 0, -1):
        idx = np.flatnonzero(alive)
        if idx.size == 0:
            break
        step = ddim_step(field, y[idx], t)
        bad = ~np.all(np.isfinite(step), axis=1) | np.any(
            np.abs(step) > DIVERGENCE_LIMIT, axis=1
        )
        if bad.any():
            logger.warning(
                "Aborted %d diverging trajectories at t=%d", int(bad.sum()), t
            )
            alive[idx[bad]] = False
        y[idx[~bad]] = step[~bad]
        if trace:
            states.append(y.copy())

    if not alive.any():
        raise NumericalError("All reverse trajectories diverged")
    ids = np.flatnonzero(alive)
    return ReverseResult(
        endpoints=PointCloud(points=y[ids]),
        sample_ids=tuple(int(i) for i in ids),
        diverged=tuple(int(i) for i in np.flatnonzero(~alive)),
        trace=np.stack(states) if trace else None,
    )


def reverse_sample(
    field: ScoreField, n_samples: int, seed: int, trace: bool = False
) -> ReverseResult:
    """
    Sample endpoints of the reverse flow from standard normal states

    Trajectory i draws its terminal state from its own stream, so the
    endpoint of a trajectory does not depend on n_samples.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    y_T = np.stack(
        [
            make_rng(seed, "trajectory", i).standard_normal(field.ambient_dim)
            for i in range(n_samples)
        ]
    )
    return reverse_flow(field, y_T, trace=trace)


def endpoint_orbit_error(
    endpoints: PointCloud, dataset: PointCloud, group: GroupSpec
) -> Tuple[float, float]:
    """(max, mean) squared orbit distance from endpoints to the nearest G(z)"""
    if endpoints.n == 0 or dataset.n == 0:
        raise ValueError("Empty endpoints or dataset")
    _, d2 = scan_nearest(
        quotient_coordinates(group, dataset.points),
        quotient_coordinates(group, endpoints.points),
    )
    return float(d2.max()), float(d2.mean())


def score_concentration_check(
    field: ScoreField, y, t_values: Sequence[int]
) -> List[float]:
    """
    Alignment of the score with the direction to the closest orbit point

    For each t, the cosine between -(1 - a_t) s_t(y) and the residual
    y - sqrt(a_t) y*, where y* is the point of G(D) closest to y. The
    residual is taken to the scaled point sqrt(a_t) y*, the mean of the
    dominant noised component, not to y* itself: y - y* differs from it by
    (1 - sqrt(a_t)) y*, which vanishes only as t -> 0.

    Raises:
        ValueError - the closest orbit is not unique
    """
    y = as_points(y, field.ambient_dim)
    t_values = list(t_values)
    if any(b >= a for a, b in zip(t_values, t_values[1:])):
        raise ValueError("t_values must be decreasing")
    data = field.dataset.points
    d2 = np.atleast_1d(orbit_sq_dist(field.group, y, data))
    order = np.argsort(d2, kind="stable")
    if d2.size > 1 and d2[order[1]] - d2[order[0]] <= UNIQUENESS_GAP:
        raise ValueError(
            "The distance to G(D) is not reached at a unique point "
            "(uniqueness hypothesis of the concentration argument)"
        )
    y_star = orbit_nearest_point(field.group, y, data[order[0]])

    cosines = []
    for t in t_values:
        alpha = field.schedule.alpha[t]
        v = -(1.0 - alpha) * field.score(y, t)
        target = y - math.sqrt(alpha) * y_star
        norm = np.linalg.norm(v) * np.linalg.norm(target)
        cosines.append(1.0 if norm == 0.0 else float(v @ target / norm))
    return cosines


def max_angular_gap(points: PointCloud, group: GroupSpec) -> float:
    """Largest empty arc between the angles of points in the rotation plane"""
    if group.kind != GroupKind.ROTATION:
        raise ValueError("Angular coverage needs a rotation group")
    if points.n == 0:
        raise ValueError("No points")
    i, j = group.plane
    angles = np.sort(np.mod(np.arctan2(points.points[:, j], points.points[:, i]), 2 * math.pi))
    gaps = np.diff(np.concatenate([angles, [angles[0] + 2 * math.pi]]))
    return float(gaps.max())
