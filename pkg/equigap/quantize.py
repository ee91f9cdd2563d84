import math
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .groups import GroupKind, GroupSpec, canonicalize, quotient_coordinates
from .log import logger
from .manifolds import ManifoldKind, ManifoldSpec, PointCloud, draw_uniform, project
from .nnindex import scan_nearest
from .utils import (
    DEFAULT_MAX_ITER,
    DEFAULT_REFERENCE_SIZE,
    DEFAULT_RESTARTS,
    DEFAULT_TOL,
    GapEstimate,
    GapMode,
    Metric,
    NumericalError,
    SampleStats,
    make_rng,
)

# Relative slack for the per-iteration monotonicity check
MONOTONE_SLACK = 1e-9


class QuantizerResult(BaseModel):
    """
    Outcome of a Lloyd run

    quantization_error is the mean (orbit) squared distance from the
    reference sample to the centroids; history holds it per iteration.
    """

    model_config = ConfigDict(frozen=True)

    centroids: PointCloud
    quantization_error: float = Field(..., ge=0.0)
    std_error: float = Field(0.0, ge=0.0)
    iterations: int = Field(..., ge=0)
    converged: bool
    history: Tuple[float, ...] = ()


def _assign(
    group: GroupSpec, centroids: np.ndarray, reference_q: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    return scan_nearest(quotient_coordinates(group, centroids), reference_q)


def kmeanspp_init(
    sample: PointCloud,
    n: int,
    seed: int,
    group: Optional[GroupSpec] = None,
    restart: int = 0,
) -> PointCloud:
    """
    Choose n distinct points of sample by D^2 weighting

    The first pick is uniform; each next pick has probability proportional
    to the squared (orbit) distance to the closest pick so far. When every
    remaining weight is zero the pick is uniform among unchosen points.
    """
    if n < 1 or n > sample.n:
        raise ValueError(
            f"Cannot choose {n} centers from a sample of {sample.n} points"
        )
    group = group or GroupSpec.identity()
    rng = make_rng(seed, "kmeans++", restart)
    q = quotient_coordinates(group, sample.points)
    chosen = np.zeros(sample.n, dtype=bool)

    first = int(rng.integers(sample.n))
    picks = [first]
    chosen[first] = True
    d2 = ((q - q[first]) ** 2).sum(axis=1)
    for _ in range(1, n):
        weights = np.where(chosen, 0.0, d2)
        total = weights.sum()
        if total > 0.0:
            cdf = np.cumsum(weights)
            k = int(np.searchsorted(cdf, rng.uniform(0.0, cdf[-1]), side="right"))
            if k >= sample.n or weights[k] == 0.0:
                k = int(np.flatnonzero(weights > 0.0)[-1])
        else:
            k = int(rng.choice(np.flatnonzero(~chosen)))
        picks.append(k)
        chosen[k] = True
        d2 = np.minimum(d2, ((q - q[k]) ** 2).sum(axis=1))
    return PointCloud(points=sample.points[picks])


def lloyd(
    spec: ManifoldSpec,
    init: PointCloud,
    reference: PointCloud,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    group: Optional[GroupSpec] = None,
) -> QuantizerResult:
    """
    Lloyd iterations with on-manifold snapping

    Each iteration assigns reference points to their nearest centroid,
    replaces centroids by their cell means and snaps the means back onto
    the manifold. With a group, assignment uses the orbit distance and
    means are taken over canonical representatives.

    Parameters
    ----------
        spec : ManifoldSpec
            Manifold the centroids must lie on
        init : PointCloud
            Initial centroids
        reference : PointCloud
            Dense sample of the manifold, the target measure
        max_iter : int
            Maximum number of update steps
        tol : float
            Stop when the relative error decrease falls below tol
        group : GroupSpec, optional
            Symmetry group, identity by default

    Raises
    ------
        NumericalError
            The error increased between two iterations
    """
    if init.n == 0 or reference.n == 0:
        raise ValueError("Lloyd needs non-empty centroids and reference")
    group = group or GroupSpec.identity()
    ref = canonicalize(group, reference.points)
    ref_q = quotient_coordinates(group, ref)
    centroids = canonicalize(group, init.points)
    n = centroids.shape[0]

    labels, d2 = _assign(group, centroids, ref_q)
    error = float(d2.mean())
    history = [error]
    converged = error == 0.0
    iterations = 0
    while not converged and iterations < max_iter:
        new = _update(spec, group, centroids, ref, labels, d2, n)
        new_labels, new_d2 = _assign(group, new, ref_q)
        new_error = float(new_d2.mean())
        iterations += 1
        logger.debug("Lloyd iteration %d: error %.6e", iterations, new_error)
        if new_error > error * (1.0 + MONOTONE_SLACK):
            raise NumericalError(
                f"Lloyd error increased at iteration {iterations}: "
                f"{error!r} -> {new_error!r}"
            )
        decrease = error - new_error
        converged = new_error == 0.0 or decrease <= tol * error
        centroids, labels, d2, error = new, new_labels, new_d2, new_error
        history.append(error)

    return QuantizerResult(
        centroids=PointCloud(points=centroids),
        quantization_error=error,
        std_error=SampleStats.of(d2).std_error,
        iterations=iterations,
        converged=converged,
        history=tuple(history),
    )


def _update(
    spec: ManifoldSpec,
    group: GroupSpec,
    centroids: np.ndarray,
    ref: np.ndarray,
    labels: np.ndarray,
    d2: np.ndarray,
    n: int,
) -> np.ndarray:
    # bincount sums in reference order, independent of scheduling
    counts = np.bincount(labels, minlength=n)
    sums = np.stack(
        [
            np.bincount(labels, weights=ref[:, k], minlength=n)
            for k in range(ref.shape[1])
        ],
        axis=1,
    )
    new = centroids.copy()
    filled = counts > 0
    if filled.any():
        means = sums[filled] / counts[filled, None]
        new[filled] = canonicalize(group, project(spec, canonicalize(group, means)))

    empty = np.flatnonzero(~filled)
    if empty.size:
        logger.warning("Re-seeding %d empty Lloyd cells", empty.size)
        far = d2.copy()
        for cell in empty:
            k = int(np.argmax(far))
            new[cell] = ref[k]
            far[k] = -1.0
    return new


def analytic_optimal_dataset(
    spec: ManifoldSpec, group: GroupSpec, n: int
) -> Optional[PointCloud]:
    """
    Closed-form optimal dataset, when one is known

    A hypercube whose quotient is a segment takes the n cell midpoints of
    that segment; a circle takes n equally spaced points. Returns None for
    every other configuration.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if spec.kind == ManifoldKind.HYPERCUBE and group.kind != GroupKind.ROTATION:
        translated = set(group.axes)
        free = [a for a in range(spec.intrinsic_dim) if a not in translated]
        if len(free) != 1:
            return None
        c = spec.side
        points = np.zeros((n, spec.ambient_dim))
        points[:, free[0]] = -c / 2.0 + c * (2.0 * np.arange(n) + 1.0) / (2.0 * n)
        return PointCloud(points=points)
    if (
        spec.kind == ManifoldKind.HYPERSPHERE
        and spec.ambient_dim == 2
        and group.kind == GroupKind.IDENTITY
    ):
        angles = 2.0 * math.pi * np.arange(n) / n
        return PointCloud(
            points=spec.radius * np.column_stack([np.cos(angles), np.sin(angles)])
        )
    return None


def _reference_cloud(
    spec: ManifoldSpec, reference_size: int, seed: int
) -> PointCloud:
    if spec.kind == ManifoldKind.EXTERNAL:
        cloud = spec.reference
        if cloud.n <= reference_size:
            return cloud
        index = make_rng(seed, "reference").choice(
            cloud.n, size=reference_size, replace=False
        )
        return PointCloud(points=cloud.points[index])
    return PointCloud(
        points=draw_uniform(spec, reference_size, make_rng(seed, "reference"))
    )


def optimal_dataset(
    spec: ManifoldSpec,
    group: GroupSpec,
    n: int,
    seed: int,
    restarts: int = DEFAULT_RESTARTS,
    reference_size: int = DEFAULT_REFERENCE_SIZE,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    analytic_init: bool = True,
) -> QuantizerResult:
    """
    Best Lloyd result over restarts

    Restart 0 starts from the analytic optimum when one exists and
    analytic_init is set; the other restarts use k-means++ on the reference.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if spec.periodic:
        raise ValueError("Optimal datasets of a periodic hypercube are not supported")
    group.check_dim(spec.ambient_dim)
    reference = _reference_cloud(spec, reference_size, seed)
    if n > reference.n:
        raise ValueError(
            f"n={n} exceeds the reference sample size {reference.n}"
        )
    analytic = analytic_optimal_dataset(spec, group, n) if analytic_init else None

    best: Optional[QuantizerResult] = None
    for restart in range(restarts):
        if restart == 0 and analytic is not None:
            init = analytic
        else:
            init = kmeanspp_init(reference, n, seed, group=group, restart=restart)
        result = lloyd(spec, init, reference, max_iter, tol, group=group)
        logger.debug(
            "Restart %d/%d (n=%d): error %.6e after %d iterations",
            restart + 1, restarts, n, result.quantization_error, result.iterations,
        )
        if best is None or result.quantization_error < best.quantization_error:
            best = result
    return best


def optimal_gap(
    spec: ManifoldSpec,
    group: GroupSpec,
    n: int,
    seed: int,
    restarts: int = DEFAULT_RESTARTS,
    reference_size: int = DEFAULT_REFERENCE_SIZE,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
    analytic_init: bool = True,
) -> GapEstimate:
    """Optimal representation gap, the quantization error of the best dataset"""
    result = optimal_dataset(
        spec,
        group,
        n,
        seed,
        restarts=restarts,
        reference_size=reference_size,
        max_iter=max_iter,
        tol=tol,
        analytic_init=analytic_init,
    )
    metric = Metric.SQ_EUCLIDEAN if group.kind == GroupKind.IDENTITY else Metric.QUOTIENT
    return GapEstimate(
        value=result.quantization_error,
        std_error=result.std_error,
        n_dataset=n,
        n_eval=_reference_size(spec, reference_size),
        seed=seed,
        mode=GapMode.OPTIMAL,
        metric=metric,
        group=group.label,
    )


def _reference_size(spec: ManifoldSpec, reference_size: int) -> int:
    if spec.kind == ManifoldKind.EXTERNAL:
        return min(spec.reference.n, reference_size)
    return reference_size
