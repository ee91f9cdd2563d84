import math
from enum import Enum
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .manifolds import PointCloud
from .utils import as_points


class GroupKind(str, Enum):
    IDENTITY = "identity"
    TRANSLATION = "translation"
    ROTATION = "rotation"


class GroupSpec(BaseModel):
    """
    Isometric group action on the ambient space

    IDENTITY - trivial group
    TRANSLATION - continuous translations along `axes`, each coordinate
        identified modulo its period (torus) starting at its offset
    ROTATION - rotations of the coordinate plane `plane`, about the axis
        orthogonal to it
    """

    model_config = ConfigDict(frozen=True)

    kind: GroupKind = GroupKind.IDENTITY
    axes: Tuple[int, ...] = Field(
        (), description="Translated axes (translation only)"
    )
    periods: Tuple[float, ...] = Field(
        (), description="Period of each translated axis"
    )
    offsets: Tuple[float, ...] = Field(
        (), description="Start of the fundamental interval of each axis"
    )
    plane: Tuple[int, int] = Field(
        (0, 1), description="Rotated coordinate plane (rotation only)"
    )

    @model_validator(mode="after")
    def _check(self) -> "GroupSpec":
        if self.kind == GroupKind.TRANSLATION:
            if not self.axes:
                raise ValueError("A translation group needs at least one axis")
            if len(set(self.axes)) != len(self.axes) or min(self.axes) < 0:
                raise ValueError("Translated axes must be distinct and >= 0")
            if len(self.periods) != len(self.axes):
                raise ValueError("One period per translated axis is required")
            if any(p <= 0 for p in self.periods):
                raise ValueError("Periods must be positive")
            if self.offsets and len(self.offsets) != len(self.axes):
                raise ValueError("One offset per translated axis is required")
        elif self.axes or self.periods or self.offsets:
            raise ValueError(f"'{self.kind.value}' takes no translation axes")
        i, j = self.plane
        if i == j or min(i, j) < 0:
            raise ValueError("The rotation plane needs two distinct axes")
        return self

    # ___ Constructors ___

    @classmethod
    def identity(cls) -> "GroupSpec":
        return cls()

    @classmethod
    def translation(
        cls,
        axes,
        periods,
        offsets=None,
    ) -> "GroupSpec":
        axes = (axes,) if isinstance(axes, int) else tuple(axes)
        if isinstance(periods, (int, float)):
            periods = (float(periods),) * len(axes)
        if isinstance(offsets, (int, float)):
            offsets = (float(offsets),) * len(axes)
        return cls(
            kind=GroupKind.TRANSLATION,
            axes=axes,
            periods=tuple(periods),
            offsets=tuple(offsets) if offsets is not None else (),
        )

    @classmethod
    def rotation(cls, axis: int = 2) -> "GroupSpec":
        """Rotations about a coordinate axis of the 3-d space"""
        if axis not in (0, 1, 2):
            raise ValueError("Rotation axis must be 0, 1 or 2")
        plane = tuple(a for a in (0, 1, 2) if a != axis)
        return cls(kind=GroupKind.ROTATION, plane=plane)

    # ___ Properties ___

    @property
    def label(self) -> str:
        if self.kind == GroupKind.ROTATION:
            return "rotation[{},{}]".format(*self.plane)
        if self.kind == GroupKind.TRANSLATION:
            return "translation[{}]".format(",".join(map(str, self.axes)))
        return "identity"

    @property
    def quotient_dim_reduction(self) -> int:
        if self.kind == GroupKind.ROTATION:
            return 1
        if self.kind == GroupKind.TRANSLATION:
            return len(self.axes)
        return 0

    @property
    def has_constant_orbit_volume(self) -> bool:
        """Rotation orbits grow with the distance to the axis"""
        return self.kind != GroupKind.ROTATION

    @property
    def offset_values(self) -> Tuple[float, ...]:
        return self.offsets or (0.0,) * len(self.axes)

    def orbit_volume(self, y=None) -> float:
        """
        Riemannian volume |G| of an orbit

        For rotations it depends on the point: 2*pi*rho(y).
        """
        if self.kind == GroupKind.TRANSLATION:
            return float(np.prod(self.periods))
        if self.kind == GroupKind.ROTATION:
            if y is None:
                raise ValueError("Rotation orbit volume depends on the point")
            y = as_points(y)
            return 2.0 * math.pi * float(np.hypot(y[self.plane[0]], y[self.plane[1]]))
        return 1.0

    def check_dim(self, ambient_dim: int):
        """Raise ValueError if the action does not fit the ambient space"""
        used = self.axes if self.kind == GroupKind.TRANSLATION else ()
        if self.kind == GroupKind.ROTATION:
            used = self.plane
        if used and max(used) >= ambient_dim:
            raise ValueError(
                f"Group '{self.label}' does not act on a "
                f"{ambient_dim}-d ambient space"
            )


class OrbitCloud(BaseModel):
    """
    Orbit G(D) of a dataset

    discretization is the number of samples per continuous orbit (per axis
    for translations), or None for the analytic orbit.
    """

    model_config = ConfigDict(frozen=True)

    base: PointCloud
    group: GroupSpec
    discretization: Optional[int] = Field(None, ge=1)

    @model_validator(mode="after")
    def _check(self) -> "OrbitCloud":
        if self.base.n == 0:
            raise ValueError("Orbit of an empty dataset")
        self.group.check_dim(self.base.ambient_dim)
        return self

    @property
    def size(self) -> Optional[int]:
        """Number of materialized points, None for the analytic orbit"""
        if self.group.kind == GroupKind.IDENTITY:
            return self.base.n
        if self.discretization is None:
            return None
        copies = self.discretization ** max(len(self.group.axes), 1)
        return self.base.n * copies

    def materialize(self) -> PointCloud:
        if self.group.kind == GroupKind.IDENTITY:
            return self.base
        if self.discretization is None:
            raise ValueError("An analytic orbit cannot be materialized")
        return augment(self.group, self.base, self.discretization)


def _pair(group: GroupSpec, y, z) -> Tuple[np.ndarray, np.ndarray]:
    y = as_points(y)
    z = as_points(z)
    if y.shape[-1] != z.shape[-1]:
        raise ValueError(
            f"Dimension mismatch: {y.shape[-1]} and {z.shape[-1]}"
        )
    group.check_dim(y.shape[-1])
    return y, z


def orbit_sq_dist(group: GroupSpec, y, z) -> Union[float, np.ndarray]:
    """
    Squared distance from y to the orbit G(z), in closed form

    Broadcasts over leading dimensions of y and z.

    Parameters
    ----------
        group : GroupSpec
        y : array (..., D)
        z : array (..., D)
    """
    y, z = _pair(group, y, z)
    if group.kind == GroupKind.ROTATION:
        i, j = group.plane
        rest = [a for a in range(y.shape[-1]) if a not in (i, j)]
        rho_y = np.hypot(y[..., i], y[..., j])
        rho_z = np.hypot(z[..., i], z[..., j])
        result = (rho_y - rho_z) ** 2
        if rest:
            result = result + np.sum((y[..., rest] - z[..., rest]) ** 2, axis=-1)
    elif group.kind == GroupKind.TRANSLATION:
        keep = [a for a in range(y.shape[-1]) if a not in group.axes]
        if keep:
            result = np.sum((y[..., keep] - z[..., keep]) ** 2, axis=-1)
        else:
            result = np.zeros(np.broadcast_shapes(y.shape, z.shape)[:-1])
    else:
        result = np.sum((y - z) ** 2, axis=-1)
    if np.ndim(result) == 0:
        return float(result)
    return result


def orbit_nearest_point(group: GroupSpec, y, z) -> np.ndarray:
    """Point of the orbit G(z) closest to y"""
    y, z = _pair(group, y, z)
    out = np.array(np.broadcast_to(z, np.broadcast_shapes(y.shape, z.shape)))
    if group.kind == GroupKind.ROTATION:
        i, j = group.plane
        rho_y = np.hypot(y[..., i], y[..., j])
        rho_z = np.hypot(z[..., i], z[..., j])
        moved = rho_y > 0.0
        safe = np.where(moved, rho_y, 1.0)
        out[..., i] = np.where(moved, rho_z * y[..., i] / safe, out[..., i])
        out[..., j] = np.where(moved, rho_z * y[..., j] / safe, out[..., j])
    elif group.kind == GroupKind.TRANSLATION:
        for a in group.axes:
            out[..., a] = y[..., a]
    return out


def canonicalize(group: GroupSpec, y) -> np.ndarray:
    """
    Deterministic representative of the orbit G(y)

    Rotation moves y into the half-plane {y_i >= 0, y_j = 0} of its plane
    (points on the axis are fixed); translation reduces each translated
    coordinate into [offset, offset + period).
    """
    y = as_points(y)
    group.check_dim(y.shape[-1])
    out = np.array(y, dtype=np.float64)
    if group.kind == GroupKind.ROTATION:
        i, j = group.plane
        rho = np.hypot(y[..., i], y[..., j])
        off_axis = rho > 0.0
        out[..., i] = np.where(off_axis, rho, y[..., i])
        out[..., j] = np.where(off_axis, 0.0, y[..., j])
    elif group.kind == GroupKind.TRANSLATION:
        for a, period, offset in zip(
            group.axes, group.periods, group.offset_values
        ):
            out[..., a] = _wrap(y[..., a], period, offset)
    return out


def quotient_coordinates(group: GroupSpec, y) -> np.ndarray:
    """
    Embedding in which the squared Euclidean distance is orbit_sq_dist

    Rotations use the canonical representative, translations drop the
    translated axes. A group translating every axis maps to a single zero
    coordinate.
    """
    y = np.atleast_2d(as_points(y))
    group.check_dim(y.shape[-1])
    if group.kind == GroupKind.ROTATION:
        return canonicalize(group, y)
    if group.kind == GroupKind.TRANSLATION:
        kept = np.delete(y, list(group.axes), axis=-1)
        if kept.shape[-1] == 0:
            return np.zeros(y.shape[:-1] + (1,))
        return np.ascontiguousarray(kept)
    return y


def _wrap(v: np.ndarray, period: float, offset: float) -> np.ndarray:
    inside = (v >= offset) & (v < offset + period)
    wrapped = offset + np.mod(v - offset, period)
    wrapped = np.where(wrapped >= offset + period, offset, wrapped)
    return np.where(inside, v, wrapped)


def act(group: GroupSpec, y, element) -> np.ndarray:
    """
    Apply a group element to points

    The element is an angle for rotations, a shift per translated axis for
    translations and is ignored by the identity.
    """
    y = as_points(y)
    group.check_dim(y.shape[-1])
    out = np.array(y, dtype=np.float64)
    if group.kind == GroupKind.ROTATION:
        i, j = group.plane
        c, s = math.cos(element), math.sin(element)
        out[..., i] = c * y[..., i] - s * y[..., j]
        out[..., j] = s * y[..., i] + c * y[..., j]
    elif group.kind == GroupKind.TRANSLATION:
        shift = np.broadcast_to(np.asarray(element, dtype=np.float64), len(group.axes))
        for a, delta in zip(group.axes, shift):
            out[..., a] = y[..., a] + delta
    return out


def random_element(group: GroupSpec, rng: np.random.Generator):
    if group.kind == GroupKind.ROTATION:
        return float(rng.uniform(0.0, 2.0 * math.pi))
    if group.kind == GroupKind.TRANSLATION:
        return rng.uniform(0.0, np.asarray(group.periods))
    return None


def augment(
    group: GroupSpec, cloud: PointCloud, K: int, wrap: bool = True
) -> PointCloud:
    """
    Materialize the discretized orbit G(D)

    Rotations replicate each point at the K angles 2*pi*k/K. Translations
    replicate it over the K^k grid of shifts period*j/K of the k translated
    axes, reduced into the fundamental interval when `wrap` is set. Copies
    of one base point are contiguous.

    Args:
        group - Group
        cloud - Dataset D
        K - Samples per orbit (per axis)
        wrap - Reduce translated coordinates modulo period
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if group.kind == GroupKind.IDENTITY:
        return cloud
    group.check_dim(cloud.ambient_dim)
    base = cloud.points

    if group.kind == GroupKind.ROTATION:
        i, j = group.plane
        angles = 2.0 * math.pi * np.arange(K) / K
        c, s = np.cos(angles), np.sin(angles)
        out = np.repeat(base[:, None, :], K, axis=1)
        out[:, :, i] = c[None, :] * base[:, i, None] - s[None, :] * base[:, j, None]
        out[:, :, j] = s[None, :] * base[:, i, None] + c[None, :] * base[:, j, None]
    else:
        steps = np.arange(K) / K
        grids = np.meshgrid(*([steps] * len(group.axes)), indexing="ij")
        shifts = np.stack([g.ravel() for g in grids], axis=1) * np.asarray(
            group.periods
        )
        out = np.repeat(base[:, None, :], shifts.shape[0], axis=1)
        for col, (a, period, offset) in enumerate(
            zip(group.axes, group.periods, group.offset_values)
        ):
            moved = base[:, a, None] + shifts[None, :, col]
            out[:, :, a] = _wrap(moved, period, offset) if wrap else moved
    return PointCloud(points=out.reshape(-1, cloud.ambient_dim))
