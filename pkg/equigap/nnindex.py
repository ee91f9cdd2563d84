"""
Exact nearest-neighbor search

Every query returns exactly what an exhaustive scan returns: the smallest
squared Euclidean distance, ties broken by the smallest point index.
"""

from typing import List, Optional, Tuple

import numpy as np

from .log import logger
from .manifolds import PointCloud
from .utils import LEAF_SIZE, as_points

# Queries x points per block of the exhaustive scan
SCAN_BLOCK = 1 << 22
# Above this size (and up to TREE_MAX_DIM) batches go through the tree
TREE_MIN_POINTS = 20_000
TREE_MAX_DIM = 8


def sq_dists(
    points: np.ndarray, y: np.ndarray, periods: Optional[np.ndarray] = None
) -> np.ndarray:
    """
    Squared distances from rows of points to y, the reference formula

    Coordinates are accumulated left to right, so the value for a row does
    not depend on the shape of the batch it is computed in. Axes with a
    positive entry in periods use the wrapped (torus) difference.
    """
    diff = points - y
    if periods is not None:
        wrapped = periods > 0.0
        safe = np.where(wrapped, periods, 1.0)
        diff = np.where(wrapped, diff - safe * np.round(diff / safe), diff)
    out = diff[..., 0] ** 2
    for k in range(1, diff.shape[-1]):
        out = out + diff[..., k] ** 2
    return out


def exhaustive_nearest(points: np.ndarray, y: np.ndarray) -> Tuple[int, float]:
    d2 = sq_dists(points, y)
    i = int(np.argmin(d2))
    return i, float(d2[i])


class NNIndex:
    """
    kd-tree over a point cloud

    Nodes split at the median of their widest axis; leaves hold at most
    LEAF_SIZE points. The structure is immutable after build.
    """

    def __init__(self, source: PointCloud, leaf_size: int = LEAF_SIZE):
        if source.n == 0:
            raise ValueError("Cannot index an empty point cloud")
        self.source = source
        self.leaf_size = leaf_size
        self._build()

    @classmethod
    def build(cls, cloud: PointCloud) -> "NNIndex":
        return cls(cloud)

    @property
    def ambient_dim(self) -> int:
        return self.source.ambient_dim

    def _build(self):
        points = self.source.points
        order = np.arange(points.shape[0])
        start: List[int] = []
        end: List[int] = []
        split_dim: List[int] = []
        split_val: List[float] = []
        left: List[int] = []
        right: List[int] = []

        def new_node(lo, hi):
            start.append(lo)
            end.append(hi)
            split_dim.append(-1)
            split_val.append(0.0)
            left.append(-1)
            right.append(-1)
            return len(start) - 1

        stack = [new_node(0, points.shape[0])]
        while stack:
            node = stack.pop()
            lo, hi = start[node], end[node]
            if hi - lo <= self.leaf_size:
                continue
            sub = points[order[lo:hi]]
            spread = sub.max(axis=0) - sub.min(axis=0)
            dim = int(np.argmax(spread))
            if spread[dim] == 0.0:
                # all points equal
                continue
            mid = (hi - lo) // 2
            part = np.argpartition(sub[:, dim], mid, kind="introselect")
            order[lo:hi] = order[lo:hi][part]
            split_dim[node] = dim
            split_val[node] = float(points[order[lo + mid], dim])
            left[node] = new_node(lo, lo + mid)
            right[node] = new_node(lo + mid, hi)
            stack.append(left[node])
            stack.append(right[node])

        self._order = order
        self._points = np.ascontiguousarray(points[order])
        self._start = np.asarray(start)
        self._end = np.asarray(end)
        self._split_dim = np.asarray(split_dim)
        self._split_val = np.asarray(split_val)
        self._left = np.asarray(left)
        self._right = np.asarray(right)
        logger.debug(
            "Built kd-tree: %d points, %d nodes", points.shape[0], len(start)
        )

    def nearest(self, y) -> Tuple[int, float]:
        """
        Exact nearest neighbor of y

        Returns:
            (point index, squared distance)
        """
        y = as_points(y, self.ambient_dim)
        if y.ndim != 1:
            raise ValueError("nearest expects a single vector")
        return self._query(y)

    def _query(self, y: np.ndarray) -> Tuple[int, float]:
        best_d2 = np.inf
        best_i = -1
        stack = [(0, 0.0)]
        while stack:
            node, bound = stack.pop()
            # strict: an equal bound may still hold a smaller index
            if bound > best_d2:
                continue
            if self._left[node] < 0:
                lo, hi = self._start[node], self._end[node]
                d2 = sq_dists(self._points[lo:hi], y)
                m = d2.min()
                if m <= best_d2:
                    cand = int(self._order[lo:hi][d2 == m].min())
                    if m < best_d2 or cand < best_i:
                        best_d2, best_i = m, cand
                continue
            diff = y[self._split_dim[node]] - self._split_val[node]
            if diff < 0.0:
                near, far = self._left[node], self._right[node]
            else:
                near, far = self._right[node], self._left[node]
            stack.append((far, diff * diff))
            stack.append((near, bound))
        return best_i, float(best_d2)

    def nearest_many(self, Y, method: str = "auto") -> Tuple[np.ndarray, np.ndarray]:
        """
        Exact nearest neighbors of the rows of Y

        method - "scan" (blocked exhaustive), "tree" or "auto"
        """
        Y = np.atleast_2d(as_points(Y, self.ambient_dim))
        if method == "auto":
            use_tree = (
                self.source.n >= TREE_MIN_POINTS
                and self.ambient_dim <= TREE_MAX_DIM
            )
            method = "tree" if use_tree else "scan"
        if method == "tree":
            result = [self._query(y) for y in Y]
            index = np.array([r[0] for r in result], dtype=np.int64)
            d2 = np.array([r[1] for r in result], dtype=np.float64)
            return index, d2
        if method != "scan":
            raise ValueError(f"Unknown search method '{method}'")
        return scan_nearest(self.source.points, Y)


def scan_nearest(
    points: np.ndarray, Y: np.ndarray, periods: Optional[np.ndarray] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """Blocked exhaustive scan, same arithmetic as sq_dists"""
    n, dim = points.shape
    block = max(1, SCAN_BLOCK // max(n * dim, 1))
    index = np.empty(Y.shape[0], dtype=np.int64)
    d2 = np.empty(Y.shape[0], dtype=np.float64)
    for lo in range(0, Y.shape[0], block):
        chunk = Y[lo : lo + block]
        dist = sq_dists(points[None, :, :], chunk[:, None, :], periods)
        arg = np.argmin(dist, axis=1)
        index[lo : lo + block] = arg
        d2[lo : lo + block] = dist[np.arange(chunk.shape[0]), arg]
    return index, d2
