import math
from enum import Enum
from functools import lru_cache
from typing import Callable, Dict, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PrivateAttr,
    field_validator,
    model_validator,
)
from scipy.optimize import least_squares
from scipy.special import gammaln

from .log import logger
from .utils import as_points, make_rng


class ManifoldKind(str, Enum):
    """
    Built-in data manifolds
    """

    HYPERCUBE = "hypercube"
    HYPERSPHERE = "sphere"
    WAVE = "wave"
    SWISS_ROLL = "swissroll"
    DEFORMED_SPHERE = "deformed_sphere"
    EXTERNAL = "external"


class PointCloud(BaseModel):
    """
    Finite ordered set of points of the ambient space

    The array is copied on validation and made read-only.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    points: np.ndarray = Field(..., description="Array (n, ambient_dim)")
    condition_axis: Optional[int] = Field(
        None,
        description=(
            "Coordinate used as the input of a conditional task, "
            "the remaining coordinates are the target"
        ),
    )

    @field_validator("points", mode="before")
    @classmethod
    def _as_array(cls, value) -> np.ndarray:
        arr = np.array(value, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] < 1:
            raise ValueError("Points must be an array (n, ambient_dim)")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Point coordinates must be finite")
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def _check_axis(self) -> "PointCloud":
        axis = self.condition_axis
        if axis is not None and not 0 <= axis < self.ambient_dim:
            raise ValueError(f"condition_axis {axis} is out of range")
        return self

    @classmethod
    def empty(cls, ambient_dim: int) -> "PointCloud":
        return cls(points=np.zeros((0, ambient_dim)))

    @property
    def ambient_dim(self) -> int:
        return self.points.shape[1]

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.n


class ManifoldSpec(BaseModel):
    """
    Parametric description of a data manifold

    Only the parameters of the selected kind are used. The hypercube is
    [-side/2, side/2]^intrinsic_dim on the first axes of the ambient space,
    the hypersphere is centered at the origin. A periodic hypercube
    identifies opposite faces: its points are the same, its distances wrap.
    """

    model_config = ConfigDict(frozen=True)

    kind: ManifoldKind
    intrinsic_dim: int = Field(..., ge=1)
    ambient_dim: int = Field(..., ge=1)
    side: float = Field(1.0, gt=0.0, description="Hypercube side c")
    periodic: bool = Field(
        False, description="Hypercube with opposite faces identified (flat torus)"
    )
    radius: float = Field(1.0, gt=0.0, description="Hypersphere radius r")
    wave_radius: float = Field(
        0.5, gt=0.0, description="Radius of the half-circles of the wave"
    )
    wave_arcs: int = Field(
        4, ge=1, description="Number of alternating half-circles along x"
    )
    wave_depth: float = Field(
        2.0, gt=0.0, description="Length of the wave along the y-axis"
    )
    roll_turns: float = Field(
        1.5, gt=0.0, description="Swiss roll turns, t in [1.5pi, 1.5pi+2pi*turns]"
    )
    roll_height: float = Field(10.0, gt=0.0, description="Swiss roll height")
    deformation: float = Field(
        0.3, ge=0.0, lt=1.0, description="Radial deformation amplitude"
    )
    reference: Optional[PointCloud] = Field(
        None,
        exclude=True,
        description="Dense sample standing for an external manifold",
    )

    _index = PrivateAttr(default=None)

    @model_validator(mode="after")
    def _check_dims(self) -> "ManifoldSpec":
        if self.intrinsic_dim > self.ambient_dim:
            raise ValueError("intrinsic_dim must not exceed ambient_dim")
        if (
            self.kind == ManifoldKind.HYPERSPHERE
            and self.intrinsic_dim != self.ambient_dim - 1
        ):
            raise ValueError("A hypersphere has intrinsic_dim = ambient_dim - 1")
        if self.periodic and self.kind != ManifoldKind.HYPERCUBE:
            raise ValueError("Only the hypercube can be periodic")
        if self.kind in (
            ManifoldKind.WAVE,
            ManifoldKind.SWISS_ROLL,
            ManifoldKind.DEFORMED_SPHERE,
        ) and (self.intrinsic_dim, self.ambient_dim) != (2, 3):
            raise ValueError(
                f"'{self.kind.value}' is a surface of the 3-d ambient space"
            )
        if self.kind == ManifoldKind.EXTERNAL:
            if self.reference is None or self.reference.n == 0:
                raise ValueError("An external manifold needs a reference cloud")
            if self.reference.ambient_dim != self.ambient_dim:
                raise ValueError("Reference cloud dimension mismatch")
        elif self.reference is not None:
            raise ValueError("Only external manifolds take a reference cloud")
        return self

    # ___ Constructors ___

    @classmethod
    def hypercube(
        cls,
        dim: int,
        ambient_dim: Optional[int] = None,
        side: float = 1.0,
        periodic: bool = False,
    ) -> "ManifoldSpec":
        return cls(
            kind=ManifoldKind.HYPERCUBE,
            intrinsic_dim=dim,
            ambient_dim=dim if ambient_dim is None else ambient_dim,
            side=side,
            periodic=periodic,
        )

    @classmethod
    def hypersphere(
        cls, ambient_dim: int = 3, radius: float = 1.0
    ) -> "ManifoldSpec":
        return cls(
            kind=ManifoldKind.HYPERSPHERE,
            intrinsic_dim=ambient_dim - 1,
            ambient_dim=ambient_dim,
            radius=radius,
        )

    @classmethod
    def wave(cls, **params) -> "ManifoldSpec":
        return cls(
            kind=ManifoldKind.WAVE, intrinsic_dim=2, ambient_dim=3, **params
        )

    @classmethod
    def swiss_roll(cls, **params) -> "ManifoldSpec":
        return cls(
            kind=ManifoldKind.SWISS_ROLL, intrinsic_dim=2, ambient_dim=3, **params
        )

    @classmethod
    def deformed_sphere(cls, deformation: float = 0.3) -> "ManifoldSpec":
        return cls(
            kind=ManifoldKind.DEFORMED_SPHERE,
            intrinsic_dim=2,
            ambient_dim=3,
            deformation=deformation,
        )

    @classmethod
    def external(
        cls, reference: PointCloud, intrinsic_dim: Optional[int] = None
    ) -> "ManifoldSpec":
        """
        Manifold known only through a dense sample

        The intrinsic dimension is unknown; it defaults to the ambient
        dimension, which is only an upper bound.
        """
        return cls(
            kind=ManifoldKind.EXTERNAL,
            intrinsic_dim=intrinsic_dim or reference.ambient_dim,
            ambient_dim=reference.ambient_dim,
            reference=reference,
        )

    # __ Properties ___

    @property
    def wave_length(self) -> float:
        """Length of the input range [0, wave_length] of the wave"""
        return 2.0 * self.wave_radius * self.wave_arcs

    @property
    def wrap_periods(self) -> Optional[np.ndarray]:
        """
        Period of each ambient axis under the torus identification

        Zero marks an open axis; None when the manifold is not periodic.
        """
        if not self.periodic:
            return None
        periods = np.zeros(self.ambient_dim)
        periods[: self.intrinsic_dim] = self.side
        return periods

    @property
    def measure(self) -> float:
        """
        Riemannian volume of the manifold

        Raises ValueError for kinds without a closed form.
        """
        if self.kind == ManifoldKind.HYPERCUBE:
            return self.side**self.intrinsic_dim
        if self.kind == ManifoldKind.HYPERSPHERE:
            k = self.intrinsic_dim
            log_area = (
                math.log(2.0)
                + 0.5 * (k + 1) * math.log(math.pi)
                - gammaln(0.5 * (k + 1))
            )
            return math.exp(log_area) * self.radius**k
        if self.kind == ManifoldKind.WAVE:
            return self.wave_arcs * math.pi * self.wave_radius * self.wave_depth
        if self.kind == ManifoldKind.SWISS_ROLL:
            t0, t1 = _roll_bounds(self)
            scale = _roll_scale(self.roll_turns, self.roll_height)
            return (
                scale**2
                * self.roll_height
                * float(_roll_arclength(t1) - _roll_arclength(t0))
            )
        raise ValueError(f"No closed-form measure for '{self.kind.value}'")


# ___ Sampling ___


def sample_uniform(spec: ManifoldSpec, n: int, seed: int) -> PointCloud:
    """
    Sample n i.i.d. points uniformly on the manifold

    Parameters
    ----------
        spec : ManifoldSpec
            Manifold, any kind but external
        n : int
            Number of points, n >= 1
        seed : int
            Seed; the output is a deterministic function of (spec, n, seed)
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.kind == ManifoldKind.EXTERNAL:
        raise ValueError(
            "An external manifold has no sampler, "
            "subsample its reference cloud with 'subsample'"
        )
    return PointCloud(points=draw_uniform(spec, n, make_rng(seed, "sample")))


def draw_uniform(
    spec: ManifoldSpec, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n uniform points from an already seeded generator"""
    sampler = _SAMPLERS.get(spec.kind)
    if sampler is None:
        raise ValueError(
            f"Uniform sampling is not supported for '{spec.kind.value}'"
        )
    return sampler(spec, n, rng)


def sample_conditional_wave(spec: ManifoldSpec, n: int, seed: int) -> PointCloud:
    """
    Sample the wave as a conditional task

    The input x is uniform on [0, wave_length] and is marked as the
    conditioning coordinate; y is uniform along the translation axis and
    z = w(x) lies on the half-circle profile.
    """
    if spec.kind != ManifoldKind.WAVE:
        raise ValueError("Conditional sampling needs a wave manifold")
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = make_rng(seed, "conditional")
    x = rng.uniform(0.0, spec.wave_length, n)
    y = rng.uniform(0.0, spec.wave_depth, n)
    points = np.column_stack([x, y, wave_profile(spec, x)])
    return PointCloud(points=points, condition_axis=0)


def wave_profile(spec: ManifoldSpec, x) -> np.ndarray:
    """
    Height z = w(x) of the wave profile

    The profile is a chain of half-circles of radius wave_radius, upper and
    lower in turn, starting with an upper one at x = 0.
    """
    a = spec.wave_radius
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, spec.wave_length)
    arc = np.minimum(np.floor(x / (2.0 * a)), spec.wave_arcs - 1)
    center = a * (2.0 * arc + 1.0)
    sign = np.where(arc % 2 == 0, 1.0, -1.0)
    return sign * np.sqrt(np.maximum(a * a - (x - center) ** 2, 0.0))


def subsample(cloud: PointCloud, n: int, seed: int) -> PointCloud:
    """Draw n distinct points of a cloud, without replacement"""
    if n < 1 or n > cloud.n:
        raise ValueError(f"Cannot subsample {n} points out of {cloud.n}")
    index = make_rng(seed, "subsample").choice(cloud.n, size=n, replace=False)
    return PointCloud(
        points=cloud.points[index], condition_axis=cloud.condition_axis
    )


def deduplicate(cloud: PointCloud) -> PointCloud:
    """Remove repeated points, keeping first occurrences in order"""
    _, first = np.unique(cloud.points, axis=0, return_index=True)
    first.sort()
    if first.size < cloud.n:
        logger.warning("Removed %d duplicate points", cloud.n - first.size)
    return PointCloud(
        points=cloud.points[first], condition_axis=cloud.condition_axis
    )


def _sample_hypercube(spec: ManifoldSpec, n: int, rng) -> np.ndarray:
    half = spec.side / 2.0
    points = np.zeros((n, spec.ambient_dim))
    points[:, : spec.intrinsic_dim] = rng.uniform(
        -half, half, size=(n, spec.intrinsic_dim)
    )
    return points


def _sample_hypersphere(spec: ManifoldSpec, n: int, rng) -> np.ndarray:
    g = rng.standard_normal((n, spec.ambient_dim))
    return spec.radius * g / np.linalg.norm(g, axis=1, keepdims=True)


def _sample_wave(spec: ManifoldSpec, n: int, rng) -> np.ndarray:
    # Uniform in arclength: pick an arc, then a uniform angle on it
    a = spec.wave_radius
    arc = rng.integers(0, spec.wave_arcs, size=n)
    theta = rng.uniform(0.0, math.pi, size=n)
    y = rng.uniform(0.0, spec.wave_depth, size=n)
    sign = np.where(arc % 2 == 0, 1.0, -1.0)
    x = a * (2.0 * arc + 1.0) - a * np.cos(theta)
    z = sign * a * np.sin(theta)
    return np.column_stack([x, y, z])


def _sample_swiss_roll(spec: ManifoldSpec, n: int, rng) -> np.ndarray:
    t0, t1 = _roll_bounds(spec)
    s = rng.uniform(_roll_arclength(t0), _roll_arclength(t1), size=n)
    h = rng.uniform(0.0, spec.roll_height, size=n)
    t = _invert_roll_arclength(s, t0, t1)
    scale = _roll_scale(spec.roll_turns, spec.roll_height)
    return scale * np.column_stack([t * np.cos(t), h, t * np.sin(t)])


def _sample_deformed_sphere(spec: ManifoldSpec, n: int, rng) -> np.ndarray:
    # Rejection from the round sphere: the acceptance ratio is the area
    # element of the deformed surface over the one of the unit sphere.
    a = spec.deformation
    bound = (1.0 + a) * math.sqrt((1.0 + a) ** 2 + 45.0 * a * a)
    chunks = []
    count = 0
    while count < n:
        m = max(2 * (n - count), 64)
        g = rng.standard_normal((m, 3))
        u = g / np.linalg.norm(g, axis=1, keepdims=True)
        theta = np.arccos(np.clip(u[:, 2], -1.0, 1.0))
        phi = np.arctan2(u[:, 1], u[:, 0])
        r = 1.0 + a * np.sin(3 * theta) * np.sin(2 * phi)
        r_theta = 3.0 * a * np.cos(3 * theta) * np.sin(2 * phi)
        # r_phi / sin(theta), using sin(3t) = sin(t) (3 - 4 sin(t)^2)
        r_phi = 2.0 * a * (3.0 - 4.0 * np.sin(theta) ** 2) * np.cos(2 * phi)
        weight = r * np.sqrt(r * r + r_theta**2 + r_phi**2)
        accept = rng.uniform(0.0, bound, size=m) < weight
        chunks.append(r[accept, None] * u[accept])
        count += int(accept.sum())
    return np.concatenate(chunks)[:n]


_SAMPLERS: Dict[ManifoldKind, Callable] = {
    ManifoldKind.HYPERCUBE: _sample_hypercube,
    ManifoldKind.HYPERSPHERE: _sample_hypersphere,
    ManifoldKind.WAVE: _sample_wave,
    ManifoldKind.SWISS_ROLL: _sample_swiss_roll,
    ManifoldKind.DEFORMED_SPHERE: _sample_deformed_sphere,
}


# ___ Projection ___


def project(spec: ManifoldSpec, y) -> np.ndarray:
    """
    Closest point of the manifold under the ambient Euclidean metric

    Accepts a single vector or an array (m, ambient_dim). When the closest
    point is not unique the lexicographically smallest candidate is
    returned, except for the center of a hypersphere which maps to
    radius * e_0. External manifolds return the nearest reference point
    (smallest index on ties).
    """
    y = as_points(y, spec.ambient_dim)
    single = y.ndim == 1
    batch = np.atleast_2d(y)
    result = _PROJECTIONS[spec.kind](spec, batch)
    return result[0] if single else result


def _project_hypercube(spec: ManifoldSpec, y: np.ndarray) -> np.ndarray:
    half = spec.side / 2.0
    out = np.zeros_like(y)
    out[:, : spec.intrinsic_dim] = np.clip(
        y[:, : spec.intrinsic_dim], -half, half
    )
    return out


def _project_hypersphere(spec: ManifoldSpec, y: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(y, axis=1, keepdims=True)
    out = np.zeros_like(y)
    center = norm[:, 0] == 0.0
    out[~center] = spec.radius * y[~center] / norm[~center]
    # every point of the sphere is a minimizer
    out[center, 0] = spec.radius
    return out


def _project_wave(spec: ManifoldSpec, y: np.ndarray) -> np.ndarray:
    a = spec.wave_radius
    arcs = np.arange(spec.wave_arcs)
    centers = a * (2.0 * arcs + 1.0)
    signs = np.where(arcs % 2 == 0, 1.0, -1.0)

    px = y[:, 0:1] - centers[None, :]
    pz = y[:, 2:3]
    rho = np.hypot(px, pz)
    # Radial projection is valid on the side of the arc
    on_side = (signs[None, :] * pz >= 0.0) & (rho > 0.0)
    safe = np.where(rho > 0.0, rho, 1.0)
    radial_x = centers[None, :] + a * px / safe
    radial_z = a * pz / safe
    # Otherwise one of the two endpoints is closest (left wins ties)
    left_d = (px + a) ** 2 + pz**2
    right_d = (px - a) ** 2 + pz**2
    end_x = np.where(right_d < left_d, centers + a, centers - a)
    cand_x = np.where(on_side, radial_x, end_x)
    cand_z = np.where(on_side, radial_z, 0.0)

    dist = (cand_x - y[:, 0:1]) ** 2 + (cand_z - pz) ** 2
    best = dist.min(axis=1, keepdims=True)
    # lexicographic order on (x, z) among minimizers
    key = np.where(dist == best, cand_x, np.inf)
    first_x = key.min(axis=1, keepdims=True)
    key_z = np.where((dist == best) & (cand_x == first_x), cand_z, np.inf)
    rows = np.arange(y.shape[0])
    col = np.argmin(key_z, axis=1)
    out = np.empty_like(y)
    out[:, 0] = cand_x[rows, col]
    out[:, 1] = np.clip(y[:, 1], 0.0, spec.wave_depth)
    out[:, 2] = cand_z[rows, col]
    return out


def _project_swiss_roll(spec: ManifoldSpec, y: np.ndarray) -> np.ndarray:
    t0, t1 = _roll_bounds(spec)
    scale = _roll_scale(spec.roll_turns, spec.roll_height)
    p = y / scale
    px, pz = p[:, 0], p[:, 2]

    grid = np.linspace(t0, t1, 4096)
    gx, gz = grid * np.cos(grid), grid * np.sin(grid)
    d_grid = (gx[None, :] - px[:, None]) ** 2 + (gz[None, :] - pz[:, None]) ** 2
    t = grid[np.argmin(d_grid, axis=1)]
    t_grid = t.copy()

    # Newton on the stationarity condition (c(t) - p) . c'(t) = 0
    for _ in range(50):
        cos_t, sin_t = np.cos(t), np.sin(t)
        rx, rz = t * cos_t - px, t * sin_t - pz
        d1x, d1z = cos_t - t * sin_t, sin_t + t * cos_t
        d2x, d2z = -2.0 * sin_t - t * cos_t, 2.0 * cos_t - t * sin_t
        grad = rx * d1x + rz * d1z
        hess = d1x**2 + d1z**2 + rx * d2x + rz * d2z
        step = np.where(hess > 0.0, grad / np.where(hess > 0.0, hess, 1.0), 0.0)
        t_new = np.clip(t - step, t0, t1)
        done = np.max(np.abs(t_new - t)) <= 1e-15 * t1
        t = t_new
        if done:
            break

    def sq_dist(tt):
        return (tt * np.cos(tt) - px) ** 2 + (tt * np.sin(tt) - pz) ** 2

    t = np.where(sq_dist(t) <= sq_dist(t_grid), t, t_grid)
    out = np.column_stack(
        [t * np.cos(t), np.clip(p[:, 1], 0.0, spec.roll_height), t * np.sin(t)]
    )
    return scale * out


def _project_deformed_sphere(spec: ManifoldSpec, y: np.ndarray) -> np.ndarray:
    a = spec.deformation
    grid_angles, grid_points = _deformed_grid(a)
    out = np.empty_like(y)
    for i, p in enumerate(y):
        d_grid = np.sum((grid_points - p) ** 2, axis=1)
        start = int(np.argmin(d_grid))
        fit = least_squares(
            lambda v: _deformed_point(a, v[0], v[1]) - p,
            grid_angles[start],
            jac=lambda v: _deformed_jacobian(a, v[0], v[1]),
            method="lm",
            xtol=1e-15,
            ftol=1e-15,
            gtol=1e-15,
        )
        point = _deformed_point(a, fit.x[0], fit.x[1])
        if np.sum((point - p) ** 2) > d_grid[start]:
            point = grid_points[start]
        out[i] = point
    return out


def _project_external(spec: ManifoldSpec, y: np.ndarray) -> np.ndarray:
    from .nnindex import NNIndex

    if spec._index is None:
        spec._index = NNIndex.build(spec.reference)
    index, _ = spec._index.nearest_many(y)
    return spec.reference.points[index].copy()


_PROJECTIONS: Dict[ManifoldKind, Callable] = {
    ManifoldKind.HYPERCUBE: _project_hypercube,
    ManifoldKind.HYPERSPHERE: _project_hypersphere,
    ManifoldKind.WAVE: _project_wave,
    ManifoldKind.SWISS_ROLL: _project_swiss_roll,
    ManifoldKind.DEFORMED_SPHERE: _project_deformed_sphere,
    ManifoldKind.EXTERNAL: _project_external,
}


# ___ Swiss roll geometry ___


def _roll_bounds(spec: ManifoldSpec) -> Tuple[float, float]:
    t0 = 1.5 * math.pi
    return t0, t0 + 2.0 * math.pi * spec.roll_turns


def _roll_arclength(t):
    """Arclength primitive of the spiral (t cos t, t sin t)"""
    return 0.5 * (t * np.sqrt(1.0 + t * t) + np.arcsinh(t))


def _invert_roll_arclength(s: np.ndarray, t0: float, t1: float) -> np.ndarray:
    # The arclength is convex and increasing: Newton started on the right
    # of the root decreases monotonically onto it.
    t = np.full_like(s, t1)
    for _ in range(100):
        step = (_roll_arclength(t) - s) / np.sqrt(1.0 + t * t)
        t = np.clip(t - step, t0, t1)
        if np.max(np.abs(step)) <= 1e-14 * t1:
            break
    return t


@lru_cache(maxsize=16)
def _roll_scale(turns: float, height: float) -> float:
    """Factor mapping the bounding-box diagonal of the roll to 1"""
    t0 = 1.5 * math.pi
    t = np.linspace(t0, t0 + 2.0 * math.pi * turns, 20001)
    width_x = np.ptp(t * np.cos(t))
    width_z = np.ptp(t * np.sin(t))
    return 1.0 / math.sqrt(width_x**2 + height**2 + width_z**2)


# ___ Deformed sphere geometry ___


def _deformed_point(a: float, theta: float, phi: float) -> np.ndarray:
    r = 1.0 + a * math.sin(3 * theta) * math.sin(2 * phi)
    return r * np.array(
        [
            math.sin(theta) * math.cos(phi),
            math.sin(theta) * math.sin(phi),
            math.cos(theta),
        ]
    )


def _deformed_jacobian(a: float, theta: float, phi: float) -> np.ndarray:
    st, ct = math.sin(theta), math.cos(theta)
    sp, cp = math.sin(phi), math.cos(phi)
    r = 1.0 + a * math.sin(3 * theta) * math.sin(2 * phi)
    r_theta = 3.0 * a * math.cos(3 * theta) * math.sin(2 * phi)
    r_phi = 2.0 * a * math.sin(3 * theta) * math.cos(2 * phi)
    u = np.array([st * cp, st * sp, ct])
    e_theta = np.array([ct * cp, ct * sp, -st])
    e_phi = np.array([-sp, cp, 0.0])
    d_theta = r_theta * u + r * e_theta
    d_phi = r_phi * u + r * st * e_phi
    return np.column_stack([d_theta, d_phi])


@lru_cache(maxsize=8)
def _deformed_grid(a: float) -> Tuple[np.ndarray, np.ndarray]:
    theta = (np.arange(64) + 0.5) * math.pi / 64
    phi = np.arange(128) * 2.0 * math.pi / 128 - math.pi
    tt, pp = np.meshgrid(theta, phi, indexing="ij")
    angles = np.column_stack([tt.ravel(), pp.ravel()])
    points = np.array([_deformed_point(a, t, p) for t, p in angles])
    return angles, points
