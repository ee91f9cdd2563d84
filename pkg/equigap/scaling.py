import math
from enum import Enum
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy import stats
from scipy.spatial import cKDTree
from scipy.special import gammaln

from .log import logger
from .manifolds import PointCloud
from .utils import GapEstimate, format_float


class ConstantKind(str, Enum):
    EXACT = "exact"
    APPROXIMATION = "approximation"
    EMPIRICAL = "empirical"


class DensityKind(str, Enum):
    UNIFORM = "uniform"


class ScalingFit(BaseModel):
    """
    Least-squares line through (ln n, ln gap)

    estimated_dim is -2 / slope, None when the slope is not negative.
    """

    model_config = ConfigDict(frozen=True)

    slope: float
    intercept: float
    r_squared: float = Field(..., ge=0.0, le=1.0)
    estimated_dim: Optional[float] = Field(None, gt=0.0)
    points_used: int = Field(..., ge=2)

    def csv_row(self) -> list:
        return [
            format_float(self.slope),
            format_float(self.intercept),
            format_float(self.r_squared),
            "" if self.estimated_dim is None else format_float(self.estimated_dim),
            self.points_used,
        ]


FIT_CSV_HEADER = ["slope", "intercept", "r_squared", "estimated_dim", "points_used"]


class ZadorConstants(BaseModel):
    model_config = ConfigDict(frozen=True)

    d: int = Field(..., ge=1)
    J_random: float = Field(..., gt=0.0)
    J_optimal: float = Field(..., gt=0.0)
    J_optimal_kind: ConstantKind

    @classmethod
    def of(cls, d: int) -> "ZadorConstants":
        value, kind = j_optimal(d)
        return cls(d=d, J_random=j_random(d), J_optimal=value, J_optimal_kind=kind)


class DimSummary(BaseModel):
    """Mean and standard deviation of per-seed dimension estimates"""

    model_config = ConfigDict(frozen=True)

    mean: Optional[float]
    std: Optional[float]
    n_fits: int
    n_undefined: int


def _check_dim(d: int):
    if int(d) != d or d < 1:
        raise ValueError(f"Dimension must be a positive integer, got {d}")


def j_random(d: int) -> float:
    """
    Nearest-neighbor constant of i.i.d. datasets

    J_d = Gamma(2/d + 1) * Gamma(d/2 + 1)^(2/d) / pi, evaluated in log
    space.
    """
    _check_dim(d)
    log_value = gammaln(2.0 / d + 1.0) + (2.0 / d) * gammaln(d / 2.0 + 1.0)
    return float(math.exp(log_value) / math.pi)


def j_optimal(d: int) -> Tuple[float, ConstantKind]:
    """
    Optimal quantization constant of the unit cube

    Exact for d = 1, 2; the large-d approximation d / (2 pi e) otherwise.
    """
    _check_dim(d)
    if d == 1:
        return 1.0 / 12.0, ConstantKind.EXACT
    if d == 2:
        return 5.0 / (18.0 * math.sqrt(3.0)), ConstantKind.EXACT
    return d / (2.0 * math.pi * math.e), ConstantKind.APPROXIMATION


def volume_functional(
    density_kind: DensityKind,
    measure: float,
    d: int,
    mode: str = "random",
) -> float:
    """
    Density factor of the gap asymptotics

    Both the random and the optimal functional reduce to measure^(2/d)
    for a uniform density.
    """
    _check_dim(d)
    if DensityKind(density_kind) != DensityKind.UNIFORM:
        raise ValueError("Only uniform densities are supported")
    if mode not in ("random", "optimal"):
        raise ValueError(f"Unknown mode '{mode}'")
    if measure <= 0:
        raise ValueError("measure must be positive")
    return measure ** (2.0 / d)


def fit_loglog(
    curve: Sequence[Tuple[float, float]], drop_smallest: int = 0
) -> ScalingFit:
    """
    Ordinary least squares on (ln n, ln gap)

    Parameters
    ----------
        curve : sequence of (n, gap)
            Strictly increasing n, positive gaps, at least 3 points
        drop_smallest : int
            Number of smallest n to leave out
    """
    if drop_smallest < 0:
        raise ValueError("drop_smallest must be >= 0")
    points = list(curve)[drop_smallest:]
    if len(points) < 3:
        raise ValueError("A log-log fit needs at least 3 points")
    n = np.array([p[0] for p in points], dtype=np.float64)
    g = np.array([p[1] for p in points], dtype=np.float64)
    if np.any(n <= 0):
        raise ValueError("Dataset sizes must be positive")
    if np.any(np.diff(n) <= 0):
        raise ValueError("Dataset sizes must be strictly increasing")
    if np.any(g <= 0) or not np.all(np.isfinite(g)):
        raise ValueError("Gap values must be positive to take logarithms")

    x, y = np.log(n), np.log(g)
    result = stats.linregress(x, y)
    slope = float(result.slope)
    residual = y - (result.intercept + slope * x)
    total = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if total == 0.0 else 1.0 - float(np.sum(residual**2)) / total
    r_squared = min(max(r_squared, 0.0), 1.0)
    estimated_dim = -2.0 / slope if slope < 0 else None
    if estimated_dim is None:
        logger.warning("Non-negative slope %.6g, dimension undefined", slope)
    return ScalingFit(
        slope=slope,
        intercept=float(result.intercept),
        r_squared=r_squared,
        estimated_dim=estimated_dim,
        points_used=len(points),
    )


def mean_curve(rows: Iterable[Tuple[int, GapEstimate]]) -> List[Tuple[int, float]]:
    """Average gap per n over seeds, ordered by n"""
    grouped: Dict[int, List[float]] = {}
    for n, est in rows:
        grouped.setdefault(n, []).append(est.value)
    return [(n, float(np.mean(grouped[n]))) for n in sorted(grouped)]


def fit_per_seed(
    rows: Iterable[Tuple[int, GapEstimate]], drop_smallest: int = 0
) -> Dict[int, ScalingFit]:
    """One fit per seed of a gap grid"""
    by_seed: Dict[int, List[Tuple[int, float]]] = {}
    for n, est in rows:
        by_seed.setdefault(est.seed, []).append((n, est.value))
    return {
        seed: fit_loglog(sorted(curve), drop_smallest=drop_smallest)
        for seed, curve in sorted(by_seed.items())
    }


def summarize_dims(fits: Iterable[ScalingFit]) -> DimSummary:
    fits = list(fits)
    dims = [f.estimated_dim for f in fits if f.estimated_dim is not None]
    if not dims:
        return DimSummary(mean=None, std=None, n_fits=len(fits), n_undefined=len(fits))
    std = float(np.std(dims, ddof=1)) if len(dims) > 1 else 0.0
    return DimSummary(
        mean=float(np.mean(dims)),
        std=std,
        n_fits=len(fits),
        n_undefined=len(fits) - len(dims),
    )


def effective_sample_size(d: int, n: float) -> float:
    """
    Optimal-dataset size with the same gap as an i.i.d. dataset of size n

    n * (J*_d / J_d)^(d/2)
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    ratio = j_optimal(d)[0] / j_random(d)
    return n * ratio ** (d / 2.0)


def predicted_gap(
    d: int,
    n: float,
    measure: float = 1.0,
    group_volume: float = 1.0,
    mode: str = "random",
) -> float:
    """Asymptotic gap |G| * J * V / n^(2/d)"""
    if n <= 0:
        raise ValueError("n must be positive")
    if group_volume <= 0:
        raise ValueError("group_volume must be positive")
    constant = j_random(d) if mode == "random" else j_optimal(d)[0]
    volume = volume_functional(DensityKind.UNIFORM, measure, d, mode)
    return group_volume * constant * volume / n ** (2.0 / d)


def expected_random_gap(d: int, n: int, measure: float = 1.0) -> float:
    """
    Mean i.i.d. gap of a flat d-torus of the given volume at finite n

    J_d * V^(2/d) * Gamma(n + 1) / Gamma(n + 1 + 2/d). Exact up to terms
    of order (1 - omega_d (side / 2)^d)^n, the probability that the
    nearest point is further than half a side; exact for d = 1.
    """
    _check_dim(d)
    if n < 1:
        raise ValueError("n must be >= 1")
    if measure <= 0:
        raise ValueError("measure must be positive")
    a = 2.0 / d
    log_ratio = gammaln(n + 1.0) - gammaln(n + 1.0 + a)
    return j_random(d) * measure**a * math.exp(log_ratio)


def expected_segment_gap(n: int) -> float:
    """
    Exact mean i.i.d. gap of [0, 1]

    Spacings are Dirichlet with E[L^3] = 6 / ((n+1)(n+2)(n+3)); interior
    spacings contribute L^3 / 12, the two boundary ones L^3 / 3.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    return (n + 7.0) / (2.0 * (n + 1.0) * (n + 2.0) * (n + 3.0))


def predicted_gap_kind(d: int, mode: str) -> ConstantKind:
    """Tag of the constant behind predicted_gap"""
    return ConstantKind.EXACT if mode == "random" else j_optimal(d)[1]


def empirical_j_optimal(
    d: int,
    n_values: Sequence[int] = (64, 128, 256),
    seed: int = 0,
    **quantize_params,
) -> Tuple[float, ConstantKind]:
    """
    Estimate J*_d by quantizing the unit cube

    Lloyd starts from k-means++ only, never from a closed-form optimum.
    Returns n^(2/d) times the optimal gap at the largest n. Slow.
    """
    from .groups import GroupSpec
    from .manifolds import ManifoldSpec
    from .quantize import optimal_gap

    _check_dim(d)
    quantize_params.setdefault("analytic_init", False)
    spec = ManifoldSpec.hypercube(d)
    values = []
    for n in sorted(n_values):
        est = optimal_gap(spec, GroupSpec.identity(), n, seed, **quantize_params)
        values.append(n ** (2.0 / d) * est.value)
        logger.info("J*_%d estimate at n=%d: %.6g", d, n, values[-1])
    return values[-1], ConstantKind.EMPIRICAL


def twonn_dimension(cloud: PointCloud, discard_fraction: float = 0.1) -> float:
    """
    Two-NN estimate of the intrinsic dimension

    With mu = r2 / r1 the ratio of the distances to the two nearest
    neighbors, -ln(1 - F(mu)) is linear in ln(mu) with slope d. The line
    is fitted on the sorted ratios, leaving out the largest
    discard_fraction of them.
    """
    if not 0.0 <= discard_fraction < 1.0:
        raise ValueError("discard_fraction must be in [0, 1)")
    points = cloud.points
    if points.shape[0] < 3:
        raise ValueError("Two-NN needs at least 3 points")
    distances, _ = cKDTree(points).query(points, k=3)
    r1, r2 = distances[:, 1], distances[:, 2]
    valid = r1 > 0.0
    if valid.sum() < 3:
        raise ValueError("Too many duplicate points for Two-NN")
    mu = np.sort(r2[valid] / r1[valid])
    cdf = np.arange(mu.size) / mu.size
    keep = max(int(mu.size * (1.0 - discard_fraction)), 2)
    slope, _ = np.polyfit(np.log(mu[:keep]), -np.log(1.0 - cdf[:keep]), 1)
    return float(slope)
