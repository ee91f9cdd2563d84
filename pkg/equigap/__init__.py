__version__ = "0.1.0"

from .groups import GroupKind, GroupSpec, OrbitCloud, augment, orbit_sq_dist
from .manifolds import ManifoldKind, ManifoldSpec, PointCloud, project, sample_uniform
from .quantize import optimal_dataset, optimal_gap
from .repgap import (
    PredictionSpace,
    Predictor,
    PredictorKind,
    conditional_gap,
    gap,
    random_gap_curve,
)
from .scaling import ZadorConstants, effective_sample_size, fit_loglog
from .utils import ConfigError, GapEstimate, GapMode, Metric, NumericalError

__all__ = [
    "ConfigError",
    "GapEstimate",
    "GapMode",
    "GroupKind",
    "GroupSpec",
    "ManifoldKind",
    "ManifoldSpec",
    "Metric",
    "NumericalError",
    "OrbitCloud",
    "PointCloud",
    "PredictionSpace",
    "Predictor",
    "PredictorKind",
    "ZadorConstants",
    "augment",
    "conditional_gap",
    "effective_sample_size",
    "fit_loglog",
    "gap",
    "optimal_dataset",
    "optimal_gap",
    "orbit_sq_dist",
    "project",
    "random_gap_curve",
    "sample_uniform",
]
