import math
import zlib
from enum import Enum
from typing import Optional, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

# Defaults
DEFAULT_N_EVAL = 1000
DEFAULT_REFERENCE_SIZE = 100_000
DEFAULT_MAX_ITER = 200
DEFAULT_TOL = 1e-6
DEFAULT_RESTARTS = 8
DEFAULT_GRID_SIZE = 10_000
DEFAULT_ORBIT_K = 256
LEAF_SIZE = 16


class EquigapError(Exception):
    """Base error of the toolkit"""


class ConfigError(EquigapError, ValueError):
    """Invalid configuration, flag or input file"""


class NumericalError(EquigapError, RuntimeError):
    """A numerical invariant was broken during a computation"""


class GapMode(str, Enum):
    """How the dataset behind a gap estimate was chosen"""

    IID = "iid"
    OPTIMAL = "optimal"


class Metric(str, Enum):
    """
    Loss used to compare a point of the manifold with a prediction

    SQ_EUCLIDEAN - squared ambient distance, the default everywhere
    EUCLIDEAN - plain ambient distance
    SQ_GEODESIC - squared great-circle distance, hypersphere only
    QUOTIENT - squared distance between group orbits
    """

    SQ_EUCLIDEAN = "sq_euclidean"
    EUCLIDEAN = "euclidean"
    SQ_GEODESIC = "sq_geodesic"
    QUOTIENT = "quotient"


class GapEstimate(BaseModel):
    """
    Monte Carlo estimate of the representation gap
    """

    model_config = ConfigDict(frozen=True)

    value: float = Field(..., ge=0.0, description="Estimated gap")
    std_error: float = Field(
        ..., ge=0.0, description="Sample standard deviation / sqrt(n_eval)"
    )
    n_dataset: int = Field(..., ge=0, description="Size of the dataset D")
    n_eval: int = Field(..., ge=1, description="Number of evaluation points")
    seed: int
    mode: GapMode = GapMode.IID
    metric: Metric = Metric.SQ_EUCLIDEAN
    group: str = Field("identity", description="Label of the symmetry group")

    def csv_row(self) -> list:
        """Row for the gap-curve CSV, columns as in GAP_CSV_HEADER"""
        return [
            self.n_dataset,
            self.seed,
            self.mode.value,
            self.group,
            format_float(self.value),
            format_float(self.std_error),
            self.n_eval,
            self.metric.value,
        ]


GAP_CSV_HEADER = [
    "n", "seed", "mode", "group", "value", "std_error", "n_eval", "metric"
]


class SampleStats(BaseModel):
    """Mean and standard error of a vector of per-point losses"""

    mean: float
    std_error: float

    @model_validator(mode="after")
    def _check(self) -> "SampleStats":
        if not math.isfinite(self.mean):
            raise NumericalError("Non-finite loss average")
        return self

    @classmethod
    def of(cls, values: np.ndarray) -> "SampleStats":
        values = np.asarray(values, dtype=np.float64)
        if values.size == 0:
            raise ValueError("No values to average")
        std_error = 0.0
        if values.size > 1:
            std_error = float(np.std(values, ddof=1) / math.sqrt(values.size))
        return cls(mean=float(np.mean(values)), std_error=std_error)


def make_rng(seed: int, *stream: Union[int, str]) -> np.random.Generator:
    """
    Return the generator of a named random stream

    The same (seed, stream) pair gives the same numbers on every platform.
    Different stream keys give independent generators, which is how
    parallel work partitions the seed space.

    Parameters
    ----------
        seed : int
            Experiment seed, any 64-bit integer
        stream : int or str
            Stream keys; strings are hashed with CRC-32
    """
    keys = [int(seed) % 2**64]
    for key in stream:
        if isinstance(key, str):
            keys.append(zlib.crc32(key.encode("utf-8")))
        else:
            keys.append(int(key) % 2**64)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(keys)))


def format_float(value: float) -> str:
    """Format a float with 17 significant digits (round-trip exact)"""
    return f"{float(value):.17g}"


def as_points(value, ambient_dim: Optional[int] = None) -> np.ndarray:
    """
    Return value as a float64 array of shape (..., ambient_dim)

    Raises ValueError on a dimension mismatch or non-finite coordinates.
    """
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        raise ValueError("Expected a vector, got a scalar")
    if ambient_dim is not None and arr.shape[-1] != ambient_dim:
        raise ValueError(
            f"Dimension mismatch: expected {ambient_dim}, got {arr.shape[-1]}"
        )
    if not np.all(np.isfinite(arr)):
        raise ValueError("Coordinates must be finite")
    return arr
