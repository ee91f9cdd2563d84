import math
from enum import Enum
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from .groups import (
    GroupKind,
    GroupSpec,
    OrbitCloud,
    canonicalize,
    quotient_coordinates,
)
from .log import logger
from .manifolds import (
    ManifoldKind,
    ManifoldSpec,
    PointCloud,
    draw_uniform,
    sample_uniform,
    subsample,
    wave_profile,
)
from .nnindex import NNIndex, scan_nearest, sq_dists
from .utils import (
    DEFAULT_GRID_SIZE,
    DEFAULT_N_EVAL,
    GapEstimate,
    GapMode,
    Metric,
    SampleStats,
    make_rng,
)


class PredictionKind(str, Enum):
    DISCRETE = "discrete"
    ORBIT_AUGMENTED = "orbit_augmented"
    DIFFUSION_ENDPOINTS = "diffusion_endpoints"


class PredictionSpace(BaseModel):
    """
    Set of points a model can predict

    DISCRETE - the dataset itself
    ORBIT_AUGMENTED - the group orbit of the dataset, analytic or
        discretized
    DIFFUSION_ENDPOINTS - endpoints of the reverse diffusion flow
    """

    model_config = ConfigDict(frozen=True)

    kind: PredictionKind
    cloud: Optional[PointCloud] = None
    orbit: Optional[OrbitCloud] = None

    @model_validator(mode="after")
    def _check(self) -> "PredictionSpace":
        if self.kind == PredictionKind.ORBIT_AUGMENTED:
            if self.orbit is None:
                raise ValueError("An orbit-augmented space needs an orbit")
        elif self.cloud is None or self.cloud.n == 0:
            raise ValueError("Empty prediction space")
        return self

    @classmethod
    def discrete(cls, cloud: PointCloud) -> "PredictionSpace":
        return cls(kind=PredictionKind.DISCRETE, cloud=cloud)

    @classmethod
    def diffusion_endpoints(cls, cloud: PointCloud) -> "PredictionSpace":
        return cls(kind=PredictionKind.DIFFUSION_ENDPOINTS, cloud=cloud)

    @classmethod
    def orbit_augmented(
        cls,
        cloud: PointCloud,
        group: GroupSpec,
        discretization: Optional[int] = None,
    ) -> "PredictionSpace":
        orbit = OrbitCloud(base=cloud, group=group, discretization=discretization)
        return cls(kind=PredictionKind.ORBIT_AUGMENTED, orbit=orbit)

    @classmethod
    def for_group(
        cls,
        cloud: PointCloud,
        group: GroupSpec,
        discretization: Optional[int] = None,
    ) -> "PredictionSpace":
        """Prediction space of a model trained on cloud, equivariant to group"""
        if group.kind == GroupKind.IDENTITY:
            return cls.discrete(cloud)
        return cls.orbit_augmented(cloud, group, discretization)

    @property
    def group(self) -> GroupSpec:
        if self.orbit is not None:
            return self.orbit.group
        return GroupSpec.identity()

    @property
    def n_dataset(self) -> int:
        return self.orbit.base.n if self.orbit is not None else self.cloud.n

    def sq_distances(
        self, Y: np.ndarray, periods: Optional[np.ndarray] = None
    ) -> np.ndarray:
        """
        Squared distance from each row of Y to the prediction space

        periods - wrap length of each ambient axis (0 for an open axis), the
            torus distance of a periodic hypercube
        """
        if periods is not None:
            return self._wrapped_sq_distances(Y, periods)
        if self.kind != PredictionKind.ORBIT_AUGMENTED:
            return NNIndex.build(self.cloud).nearest_many(Y)[1]
        if self.orbit.discretization is not None:
            return NNIndex.build(self.orbit.materialize()).nearest_many(Y)[1]
        # closed-form orbit distance
        group = self.orbit.group
        _, d2 = scan_nearest(
            quotient_coordinates(group, self.orbit.base.points),
            quotient_coordinates(group, Y),
        )
        return d2

    def _wrapped_sq_distances(self, Y: np.ndarray, periods: np.ndarray) -> np.ndarray:
        group = self.group
        if group.kind == GroupKind.ROTATION:
            raise ValueError("Rotations do not act on a periodic hypercube")
        if self.kind != PredictionKind.ORBIT_AUGMENTED:
            return scan_nearest(self.cloud.points, Y, periods)[1]
        if self.orbit.discretization is not None:
            return scan_nearest(self.orbit.materialize().points, Y, periods)[1]
        points = quotient_coordinates(group, self.orbit.base.points)
        kept = np.delete(periods, list(group.axes))
        if kept.size == 0:
            kept = np.zeros(1)
        return scan_nearest(points, quotient_coordinates(group, Y), kept)[1]


def eval_points(spec: ManifoldSpec, n_eval: int, seed: int) -> np.ndarray:
    """
    Evaluation sample of a gap estimate

    Fresh uniform points; for an external manifold, points of its reference
    cloud (without replacement while the cloud is large enough).
    """
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    rng = make_rng(seed, "eval")
    if spec.kind == ManifoldKind.EXTERNAL:
        cloud = spec.reference
        index = rng.choice(cloud.n, size=n_eval, replace=n_eval > cloud.n)
        return cloud.points[index]
    return draw_uniform(spec, n_eval, rng)


def _apply_metric(
    spec: ManifoldSpec, d2: np.ndarray, metric: Metric
) -> np.ndarray:
    if metric in (Metric.SQ_EUCLIDEAN, Metric.QUOTIENT):
        return d2
    if metric == Metric.EUCLIDEAN:
        return np.sqrt(d2)
    if metric == Metric.SQ_GEODESIC:
        if spec.kind != ManifoldKind.HYPERSPHERE:
            raise ValueError("The geodesic metric is defined on the hypersphere only")
        r = spec.radius
        cos_angle = np.clip(1.0 - d2 / (2.0 * r * r), -1.0, 1.0)
        return (r * np.arccos(cos_angle)) ** 2
    raise ValueError(f"Unsupported metric '{metric}'")


def gap(
    spec: ManifoldSpec,
    pred: PredictionSpace,
    n_eval: int = DEFAULT_N_EVAL,
    seed: int = 0,
    metric: Optional[Metric] = None,
    mode: GapMode = GapMode.IID,
) -> GapEstimate:
    """
    Monte Carlo representation gap of a prediction space

    The mean, over n_eval uniform points of the manifold, of the loss to the
    nearest predictable point. Orbit-augmented spaces without a
    discretization use the closed-form orbit distance.

    Args:
        spec - Manifold
        pred - Prediction space
        n_eval - Number of evaluation points
        seed - Seed of the evaluation sample
        metric - Loss; defaults to the quotient metric for orbit-augmented
            spaces and to the squared Euclidean distance otherwise
        mode - Label of how the dataset was chosen
    """
    if metric is None:
        metric = (
            Metric.QUOTIENT
            if pred.kind == PredictionKind.ORBIT_AUGMENTED
            and pred.group.kind != GroupKind.IDENTITY
            else Metric.SQ_EUCLIDEAN
        )
    if metric == Metric.QUOTIENT and pred.kind != PredictionKind.ORBIT_AUGMENTED:
        raise ValueError("The quotient metric needs an orbit-augmented space")
    Y = eval_points(spec, n_eval, seed)
    losses = _apply_metric(spec, pred.sq_distances(Y, spec.wrap_periods), metric)
    stats = SampleStats.of(losses)
    return GapEstimate(
        value=stats.mean,
        std_error=stats.std_error,
        n_dataset=pred.n_dataset,
        n_eval=n_eval,
        seed=seed,
        mode=mode,
        metric=metric,
        group=pred.group.label,
    )


def gap_cell(
    spec: ManifoldSpec,
    group: GroupSpec,
    n: int,
    seed: int,
    n_eval: int = DEFAULT_N_EVAL,
    metric: Optional[Metric] = None,
    source: Optional[PointCloud] = None,
    discretization: Optional[int] = None,
) -> GapEstimate:
    """
    Gap of one i.i.d. dataset of size n

    The dataset is sampled from the manifold, or subsampled from `source`
    (or from the reference cloud of an external manifold). A discretization
    replaces continuous orbits by that many equally spaced elements.
    """
    if source is None and spec.kind == ManifoldKind.EXTERNAL:
        source = spec.reference
    if source is not None:
        dataset = subsample(source, n, seed)
    else:
        dataset = sample_uniform(spec, n, seed)
    pred = PredictionSpace.for_group(dataset, group, discretization)
    return gap(spec, pred, n_eval=n_eval, seed=seed, metric=metric)


def random_gap_curve(
    spec: ManifoldSpec,
    group: GroupSpec,
    n_values: Sequence[int],
    seeds: Sequence[int],
    n_eval: int = DEFAULT_N_EVAL,
    metric: Optional[Metric] = None,
    source: Optional[PointCloud] = None,
) -> List[Tuple[int, GapEstimate]]:
    """
    Random gap over a grid of dataset sizes and seeds

    For a given seed all sizes share one evaluation sample. Rows are
    ordered by (n, seed).
    """
    n_values = list(n_values)
    seeds = list(seeds)
    if not n_values or not seeds:
        raise ValueError("n_values and seeds must be non-empty")
    if min(n_values) < 1:
        raise ValueError("Dataset sizes must be >= 1")
    if any(b < a for a, b in zip(n_values, n_values[1:])):
        raise ValueError("n_values must be increasing")
    curve = []
    for n in n_values:
        for seed in seeds:
            est = gap_cell(spec, group, n, seed, n_eval, metric, source)
            logger.debug("gap n=%d seed=%d: %.6e", n, seed, est.value)
            curve.append((n, est))
    return curve


# ___ Conditional tasks ___


class PredictorKind(str, Enum):
    NEAREST_INPUT = "nearest_input"
    PIECEWISE_LINEAR = "piecewise_linear"


class Predictor(BaseModel):
    """
    Interpolating predictor of a conditional task with a scalar input

    Training inputs are sorted; targets are the remaining coordinates,
    canonicalized when the predictor is equivariant to a group acting on
    the target axes.
    """

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    kind: PredictorKind
    inputs: np.ndarray = Field(..., description="Sorted training inputs (n,)")
    points: np.ndarray = Field(
        ..., description="Training points (n, ambient_dim), sorted by input"
    )
    condition_axis: int = Field(..., ge=0)
    group: GroupSpec = Field(default_factory=GroupSpec.identity)

    @field_validator("inputs", "points", mode="before")
    @classmethod
    def _readonly(cls, value):
        arr = np.array(value, dtype=np.float64)
        arr.flags.writeable = False
        return arr

    @model_validator(mode="after")
    def _check(self) -> "Predictor":
        if self.inputs.size == 0:
            raise ValueError("Empty training set")
        if self.group.kind == GroupKind.ROTATION:
            raise ValueError("Conditional predictors support translations only")
        if self.condition_axis in self.group.axes:
            raise ValueError("The group must not act on the input axis")
        if self.kind == PredictorKind.PIECEWISE_LINEAR and np.any(
            np.diff(self.inputs) == 0.0
        ):
            raise ValueError("Piecewise-linear interpolation needs distinct inputs")
        return self

    @classmethod
    def fit(
        cls,
        cloud: PointCloud,
        kind: PredictorKind = PredictorKind.PIECEWISE_LINEAR,
        group: Optional[GroupSpec] = None,
    ) -> "Predictor":
        if cloud.condition_axis is None:
            raise ValueError("Training cloud has no conditioning coordinate")
        if cloud.n == 0:
            raise ValueError("Empty training set")
        group = group or GroupSpec.identity()
        axis = cloud.condition_axis
        order = np.argsort(cloud.points[:, axis], kind="stable")
        points = cloud.points[order]
        if group.kind != GroupKind.IDENTITY:
            points = canonicalize(group, points)
        return cls(
            kind=kind,
            inputs=points[:, axis],
            points=points,
            condition_axis=axis,
            group=group,
        )

    @property
    def n(self) -> int:
        return self.inputs.size

    @property
    def lipschitz_estimate(self) -> Optional[float]:
        """
        Max segment slope of the target under the orbit metric

        None for nearest-input predictors, which are not continuous.
        """
        if self.kind == PredictorKind.NEAREST_INPUT:
            return None
        if self.n == 1:
            return 0.0
        kept = [
            a
            for a in range(self.points.shape[1])
            if a != self.condition_axis and a not in self.group.axes
        ]
        if not kept:
            return 0.0
        rise = np.linalg.norm(np.diff(self.points[:, kept], axis=0), axis=1)
        return float(np.max(rise / np.diff(self.inputs)))

    def predict(self, x) -> np.ndarray:
        """Predicted targets for inputs x, shape (m, ambient_dim - 1)"""
        return np.delete(self.graph(x), self.condition_axis, axis=1)

    def graph(self, x) -> np.ndarray:
        """Points (x, f(x)) of the ambient space, shape (m, ambient_dim)"""
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        if self.kind == PredictorKind.NEAREST_INPUT:
            right = np.clip(np.searchsorted(self.inputs, x), 0, self.n - 1)
            left = np.clip(right - 1, 0, self.n - 1)
            # ties go to the smaller input
            use_right = np.abs(self.inputs[right] - x) < np.abs(x - self.inputs[left])
            out = self.points[np.where(use_right, right, left)].copy()
        else:
            out = np.empty((x.size, self.points.shape[1]))
            for k in range(self.points.shape[1]):
                out[:, k] = np.interp(x, self.inputs, self.points[:, k])
        out[:, self.condition_axis] = x
        return out


def _conditional_truth(spec: ManifoldSpec, n_eval: int, seed: int) -> np.ndarray:
    if spec.kind != ManifoldKind.WAVE:
        raise ValueError("Conditional gaps are defined on the wave")
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    rng = make_rng(seed, "eval")
    x = rng.uniform(0.0, spec.wave_length, n_eval)
    y = rng.uniform(0.0, spec.wave_depth, n_eval)
    return np.column_stack([x, y, wave_profile(spec, x)])


def _conditional_losses(
    spec: ManifoldSpec,
    pred: Predictor,
    n_eval: int,
    seed: int,
    grid_size: int,
) -> Tuple[np.ndarray, np.ndarray]:
    # (gap, generalization) squared losses on one paired sample
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    truth = _conditional_truth(spec, n_eval, seed)
    x = truth[:, pred.condition_axis]
    group = pred.group
    q_truth = quotient_coordinates(group, truth)
    q_self = quotient_coordinates(group, pred.graph(x))
    grid = np.linspace(0.0, spec.wave_length, grid_size)
    q_grid = quotient_coordinates(group, pred.graph(grid))
    _, d2_grid = scan_nearest(q_grid, q_truth)
    d2_self = sq_dists(q_self, q_truth)
    return np.minimum(d2_grid, d2_self), d2_self


def _conditional_metric(metric: Metric) -> Metric:
    if metric not in (Metric.SQ_EUCLIDEAN, Metric.EUCLIDEAN, Metric.QUOTIENT):
        raise ValueError(f"Unsupported conditional metric '{metric.value}'")
    return metric


def conditional_gap(
    spec: ManifoldSpec,
    pred: Predictor,
    n_eval: int = DEFAULT_N_EVAL,
    seed: int = 0,
    grid_size: int = DEFAULT_GRID_SIZE,
    metric: Metric = Metric.SQ_EUCLIDEAN,
) -> GapEstimate:
    """
    Conditional representation gap on the wave

    For fresh inputs x with targets on the wave, the loss is the distance
    from (x, target) to the closest point of the predictor graph, taken
    over a grid of grid_size inputs and the point (x, f(x)) itself. An
    equivariant predictor is compared through the orbit metric.
    """
    metric = _conditional_metric(metric)
    gap_losses, _ = _conditional_losses(spec, pred, n_eval, seed, grid_size)
    stats = SampleStats.of(_apply_metric(spec, gap_losses, metric))
    return GapEstimate(
        value=stats.mean,
        std_error=stats.std_error,
        n_dataset=pred.n,
        n_eval=n_eval,
        seed=seed,
        metric=metric,
        group=pred.group.label,
    )


def gen_error(
    spec: ManifoldSpec,
    pred: Predictor,
    n_eval: int = DEFAULT_N_EVAL,
    seed: int = 0,
    metric: Metric = Metric.SQ_EUCLIDEAN,
) -> float:
    """Generalization error: mean target-space loss between truth and f(x)"""
    metric = _conditional_metric(metric)
    truth = _conditional_truth(spec, n_eval, seed)
    x = truth[:, pred.condition_axis]
    group = pred.group
    d2 = sq_dists(
        quotient_coordinates(group, pred.graph(x)),
        quotient_coordinates(group, truth),
    )
    return SampleStats.of(_apply_metric(spec, d2, metric)).mean


class SandwichReport(BaseModel):
    """
    Paired comparison of the conditional gap with the generalization error

    upper: gap <= gen_error + 3 sigma
    lower: gen_error / factor - 3 sigma <= gap, factor = (1 + L) for the
        Euclidean metric and (1 + L)^2 for the squared one
    """

    model_config = ConfigDict(frozen=True)

    conditional_gap: float
    gen_error: float
    gap_std_error: float
    gen_std_error: float
    lipschitz: Optional[float]
    factor: Optional[float]
    upper_sigma: float = Field(..., description="Paired std error of gen - gap")
    lower_sigma: Optional[float] = Field(
        None, description="Paired std error of gen / factor - gap"
    )
    upper_holds: bool
    lower_holds: Optional[bool]


def sandwich(
    spec: ManifoldSpec,
    pred: Predictor,
    n_eval: int = DEFAULT_N_EVAL,
    seed: int = 0,
    grid_size: int = DEFAULT_GRID_SIZE,
    metric: Metric = Metric.EUCLIDEAN,
) -> SandwichReport:
    """Evaluate both sides of the gap / generalization-error sandwich"""
    metric = _conditional_metric(metric)
    gap_sq, gen_sq = _conditional_losses(spec, pred, n_eval, seed, grid_size)
    gap_l = _apply_metric(spec, gap_sq, metric)
    gen_l = _apply_metric(spec, gen_sq, metric)
    gap_s, gen_s = SampleStats.of(gap_l), SampleStats.of(gen_l)
    upper = SampleStats.of(gen_l - gap_l)
    upper_holds = gap_s.mean <= gen_s.mean + 3.0 * upper.std_error

    lipschitz = pred.lipschitz_estimate
    factor = lower_sigma = lower_holds = None
    if lipschitz is not None:
        power = 1 if metric == Metric.EUCLIDEAN else 2
        factor = (1.0 + lipschitz) ** power
        lower = SampleStats.of(gen_l / factor - gap_l)
        lower_sigma = lower.std_error
        lower_holds = gen_s.mean / factor - 3.0 * lower_sigma <= gap_s.mean
    if not upper_holds or lower_holds is False:
        logger.warning(
            "Sandwich violated: gap %.6e, gen_error %.6e, L %s",
            gap_s.mean, gen_s.mean, lipschitz,
        )
    return SandwichReport(
        conditional_gap=gap_s.mean,
        gen_error=gen_s.mean,
        gap_std_error=gap_s.std_error,
        gen_std_error=gen_s.std_error,
        lipschitz=lipschitz,
        factor=factor,
        upper_sigma=upper.std_error,
        lower_sigma=lower_sigma,
        upper_holds=upper_holds,
        lower_holds=lower_holds,
    )


def discrete_conditional_gap(
    class_datasets: Mapping[Hashable, PointCloud],
    class_manifolds: Mapping[Hashable, ManifoldSpec],
    group: Optional[GroupSpec] = None,
    n_eval: int = DEFAULT_N_EVAL,
    seed: int = 0,
    weights: Optional[Mapping[Hashable, float]] = None,
) -> GapEstimate:
    """
    Gap of a class-conditional model

    The weighted sum over classes of the per-class gaps; all classes use
    the same evaluation seed. Weights default to uniform and are
    normalized.
    """
    missing = set(class_datasets) ^ set(class_manifolds)
    if missing:
        raise ValueError(f"Classes missing from one of the maps: {sorted(map(str, missing))}")
    if not class_datasets:
        raise ValueError("No classes")
    group = group or GroupSpec.identity()
    classes = sorted(class_datasets, key=str)
    raw = {c: 1.0 for c in classes} if weights is None else dict(weights)
    if set(raw) != set(classes) or any(w < 0 for w in raw.values()):
        raise ValueError("Class weights must be non-negative, one per class")
    total = sum(raw.values())
    if total <= 0.0:
        raise ValueError("Class weights must not all be zero")

    value = 0.0
    variance = 0.0
    estimates: Dict[Hashable, GapEstimate] = {}
    for c in classes:
        pred = PredictionSpace.for_group(class_datasets[c], group)
        est = gap(class_manifolds[c], pred, n_eval=n_eval, seed=seed)
        estimates[c] = est
        w = raw[c] / total
        value += w * est.value
        variance += (w * est.std_error) ** 2
    first = estimates[classes[0]]
    return GapEstimate(
        value=value,
        std_error=math.sqrt(variance),
        n_dataset=sum(e.n_dataset for e in estimates.values()),
        n_eval=n_eval,
        seed=seed,
        metric=first.metric,
        group=group.label,
    )
