"""
Files: point clouds (CSV and binary), gap curves, fits, traces, metadata
"""

import csv
import json
import struct
from pathlib import Path
from typing import Iterable, Optional, Tuple, Union

import numpy as np

from .log import logger
from .manifolds import PointCloud
from .utils import GAP_CSV_HEADER, ConfigError, GapEstimate, format_float

PathLike = Union[str, Path]

MAGIC = b"RGPC"
_HEADER = struct.Struct("<4sII")
CSV_SUFFIXES = (".csv",)
BINARY_SUFFIXES = (".bin", ".rgpc")


def cloud_format(path: PathLike) -> str:
    """'csv' or 'binary', from the file extension"""
    suffix = Path(path).suffix.lower()
    if suffix in CSV_SUFFIXES:
        return "csv"
    if suffix in BINARY_SUFFIXES:
        return "binary"
    raise ConfigError(
        f"Unknown point-cloud format '{suffix}' of {path}, "
        f"use one of {CSV_SUFFIXES + BINARY_SUFFIXES}"
    )


def write_cloud(path: PathLike, cloud: PointCloud):
    """
    Write a cloud

    CSV: header x0,...,x{d-1}, one point per row, 17 significant digits,
    LF line endings. Binary: b"RGPC", <u4 count, <u4 ambient_dim, then the
    coordinates as row-major <f8.
    """
    path = Path(path)
    if cloud_format(path) == "csv":
        with path.open("w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            writer.writerow([f"x{k}" for k in range(cloud.ambient_dim)])
            for row in cloud.points:
                writer.writerow([format_float(v) for v in row])
    else:
        with path.open("wb") as f:
            f.write(_HEADER.pack(MAGIC, cloud.n, cloud.ambient_dim))
            f.write(np.ascontiguousarray(cloud.points, dtype="<f8").tobytes())
    logger.debug("Wrote %d points to %s", cloud.n, path)


def read_cloud(path: PathLike, condition_axis: Optional[int] = None) -> PointCloud:
    path = Path(path)
    if cloud_format(path) == "csv":
        points = _read_csv(path)
    else:
        points = _read_binary(path)
    try:
        return PointCloud(points=points, condition_axis=condition_axis)
    except ValueError as e:
        raise ConfigError(f"Invalid point cloud in {path}: {e}") from e


def _read_csv(path: Path) -> np.ndarray:
    with path.open("r", encoding="utf-8") as f:
        header = f.readline().strip().split(",")
    if not header or header != [f"x{k}" for k in range(len(header))]:
        raise ConfigError(f"{path}: expected a header x0,x1,...")
    try:
        points = np.loadtxt(
            path, delimiter=",", skiprows=1, dtype=np.float64, ndmin=2
        )
    except ValueError as e:
        raise ConfigError(f"{path}: {e}") from e
    if points.size == 0:
        return np.zeros((0, len(header)))
    if points.shape[1] != len(header):
        raise ConfigError(f"{path}: rows do not match the header")
    return points


def _read_binary(path: Path) -> np.ndarray:
    data = path.read_bytes()
    if len(data) < _HEADER.size:
        raise ConfigError(f"{path}: truncated header")
    magic, count, dim = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise ConfigError(f"{path}: bad magic {magic!r}")
    expected = _HEADER.size + 8 * count * dim
    if len(data) != expected or dim == 0:
        raise ConfigError(
            f"{path}: expected {expected} bytes for {count}x{dim}, got {len(data)}"
        )
    values = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    return values.reshape(count, dim).astype(np.float64)


def write_gap_csv(path: PathLike, rows: Iterable[Tuple[int, GapEstimate]]):
    """Gap curve, ordered by (n, seed)"""
    ordered = sorted(rows, key=lambda row: (row[0], row[1].seed))
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(GAP_CSV_HEADER)
        for _, est in ordered:
            writer.writerow(est.csv_row())


def write_fit_csv(path: PathLike, header: list, row: list):
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerow(row)


def write_trace_csv(path: PathLike, trace: np.ndarray, sample_ids: Iterable[int]):
    """
    Trajectories as rows sample_id,t,coord0,...

    trace holds the states from t = T down to t = 0, shape (T + 1, n, D).
    """
    sample_ids = list(sample_ids)
    steps, _, dim = trace.shape
    with Path(path).open("w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["sample_id", "t"] + [f"coord{k}" for k in range(dim)])
        for sample in sample_ids:
            for k in range(steps):
                t = steps - 1 - k
                writer.writerow(
                    [sample, t] + [format_float(v) for v in trace[k, sample]]
                )


def write_json(path: PathLike, payload: dict):
    """Pretty JSON with sorted keys; floats keep their shortest repr"""
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False)
    Path(path).write_text(text + "\n", encoding="utf-8")
