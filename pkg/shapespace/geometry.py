"""
Core geometry containers and nearest-neighbor search.

Meshes and point clouds store vertices as (n, 3) float64 arrays in
millimeters. Vertex order is semantic: training shapes are in dense
correspondence, so vertex i of one shape corresponds to vertex i of every
other shape. Nothing in this module ever converts units.
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatchError, EmptyPointCloudError, MeshFormatError


def as_points(points, context="points"):
    """Return `points` as a finite (n, 3) float64 array."""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1 and arr.size == 3:
        arr = arr.reshape(1, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise DimensionMismatchError(f"{context} must have shape (n, 3), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{context} contain non-finite coordinates")
    return arr


@dataclass
class TriangleMesh:
    """Vertex-indexed triangle mesh."""

    vertices: np.ndarray
    faces: np.ndarray
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = as_points(self.vertices, "mesh vertices")
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        n = len(self.vertices)
        if n < 3:
            raise DimensionMismatchError(f"a mesh needs at least 3 vertices, got {n}")
        _check_faces(self.faces, n)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(n, 3)

    @property
    def n(self):
        return len(self.vertices)

    def triangles(self):
        """(F, 3, 3) array of triangle corner positions."""
        return self.vertices[self.faces]

    def bbox_diagonal(self):
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))


@dataclass
class QuadMesh:
    """Vertex-indexed quad mesh; grid-structured when `grid_dims` is set."""

    vertices: np.ndarray
    faces: np.ndarray
    grid_dims: Optional[Tuple[int, int]] = None
    colors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.vertices = as_points(self.vertices, "mesh vertices")
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 4)
        n = len(self.vertices)
        _check_faces(self.faces, n)
        if self.grid_dims is not None:
            rows, cols = (int(v) for v in self.grid_dims)
            if rows * cols != n:
                raise DimensionMismatchError(
                    f"grid {rows}x{cols} needs {rows * cols} vertices, got {n}")
            self.grid_dims = (rows, cols)
        if self.colors is not None:
            self.colors = np.asarray(self.colors, dtype=np.uint8).reshape(n, 3)

    @classmethod
    def from_grid(cls, vertices, rows, cols, colors=None):
        """Build a grid-structured mesh from row-major vertices."""
        return cls(np.asarray(vertices, dtype=float).reshape(rows * cols, 3),
                   grid_faces(rows, cols), (rows, cols), colors)

    @property
    def n(self):
        return len(self.vertices)

    def grid(self):
        """Vertices as a (rows, cols, 3) view. Only valid for grid-structured meshes."""
        if self.grid_dims is None:
            raise DimensionMismatchError("mesh is not grid-structured")
        return self.vertices.reshape(self.grid_dims[0], self.grid_dims[1], 3)

    def triangulated(self):
        """Split each quad along its 0-2 diagonal."""
        f = self.faces
        tris = np.concatenate([f[:, [0, 1, 2]], f[:, [0, 2, 3]]], axis=0)
        return TriangleMesh(self.vertices, tris, self.colors)


def grid_faces(rows, cols):
    """Row-major quad connectivity of a rows x cols vertex grid."""
    r, c = np.meshgrid(np.arange(rows - 1), np.arange(cols - 1), indexing="ij")
    v00 = (r * cols + c).ravel()
    return np.stack([v00, v00 + 1, v00 + cols + 1, v00 + cols], axis=1)


def _check_faces(faces, n):
    if faces.size == 0:
        return
    if faces.min() < 0 or faces.max() >= n:
        raise MeshFormatError("<memory>", f"face index out of range [0, {n})")
    # every face must use distinct vertices
    s = np.sort(faces, axis=1)
    if np.any(s[:, 1:] == s[:, :-1]):
        raise MeshFormatError("<memory>", "degenerate face with repeated vertex index")


@dataclass
class PointCloud:
    """
    Unordered target points.

    `outlier_mask` flags points inserted by corruption simulators, and
    `metadata` records how the cloud was produced (occlusion regions, seeds).
    """

    points: np.ndarray
    outlier_mask: Optional[np.ndarray] = None
    metadata: Dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.size == 0:
            raise EmptyPointCloudError("point cloud is empty")
        self.points = as_points(pts, "point cloud")
        if self.outlier_mask is None:
            self.outlier_mask = np.zeros(len(self.points), dtype=bool)
        else:
            self.outlier_mask = np.asarray(self.outlier_mask, dtype=bool).reshape(len(self.points))

    @property
    def m(self):
        return len(self.points)

    def transformed(self, transform):
        """Apply a SimilarityTransform (or anything with `.apply`) to every point."""
        return PointCloud(transform.apply(self.points), self.outlier_mask.copy(), dict(self.metadata))


@dataclass(frozen=True)
class Landmark:
    label: str
    position: Optional[Tuple[float, float, float]]

    @property
    def present(self):
        return self.position is not None


class LandmarkSet:
    """Named landmarks; absent landmarks carry no position."""

    def __init__(self, entries: Iterable[Landmark] = ()):
        self._entries: Dict[str, Landmark] = {}
        for entry in entries:
            self.add(entry.label, entry.position)

    @classmethod
    def from_positions(cls, positions: Dict[str, Optional[Iterable[float]]]):
        out = cls()
        for label, pos in positions.items():
            out.add(label, pos)
        return out

    def add(self, label, position=None):
        label = str(label)
        if label in self._entries:
            raise ValueError(f"duplicate landmark label {label!r}")
        if position is not None:
            p = np.asarray(position, dtype=float).reshape(3)
            if not np.all(np.isfinite(p)):
                raise ValueError(f"landmark {label!r} has a non-finite position")
            position = tuple(float(v) for v in p)
        self._entries[label] = Landmark(label, position)

    def __len__(self):
        return len(self._entries)

    def __iter__(self):
        return iter(self._entries.values())

    def __contains__(self, label):
        return label in self._entries

    def __getitem__(self, label):
        return self._entries[label]

    @property
    def labels(self) -> List[str]:
        return list(self._entries)

    def present_labels(self) -> List[str]:
        return [e.label for e in self if e.present]

    def position(self, label):
        entry = self._entries[label]
        if not entry.present:
            raise KeyError(f"landmark {label!r} is absent")
        return np.array(entry.position)

    def positions(self, labels):
        return np.array([self.position(label) for label in labels]).reshape(-1, 3)

    def common_labels(self, other: "LandmarkSet") -> List[str]:
        """Labels present in both sets, in this set's order."""
        theirs = set(other.present_labels())
        return [label for label in self.present_labels() if label in theirs]

    def subset(self, labels):
        return LandmarkSet(self._entries[label] for label in labels if label in self._entries)

    def transformed(self, transform):
        out = LandmarkSet()
        for e in self:
            out.add(e.label, transform.apply(np.array(e.position))[0] if e.present else None)
        return out


class NearestNeighborIndex:
    """
    Exact nearest-neighbor index over a point cloud (k-d tree).

    Queries return the point minimizing the Euclidean distance; among exactly
    equidistant points the smallest index wins, so fitting is reproducible.
    The index is immutable after construction and safe for concurrent reads.
    """

    # candidates fetched from the tree before exact re-ranking
    CANDIDATES = 8

    def __init__(self, cloud):
        points = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=float)
        if points.size == 0:
            raise EmptyPointCloudError("cannot build an index over an empty cloud")
        self._points = as_points(points, "index points").copy()
        self._points.setflags(write=False)
        self._tree = cKDTree(self._points)

    @property
    def points(self):
        return self._points

    @property
    def m(self):
        return len(self._points)

    def query(self, queries) -> Tuple[np.ndarray, np.ndarray]:
        """
        Nearest neighbors of many query points.

        Returns:
            (indices, distances): int64 array and float64 array, one entry per query
        """
        q = np.asarray(queries, dtype=float).reshape(-1, 3)
        if len(q) == 0:
            return np.zeros(0, dtype=np.int64), np.zeros(0)
        k = min(self.CANDIDATES, self.m)
        dist, idx = self._tree.query(q, k=k)
        dist = dist.reshape(len(q), k)
        idx = idx.reshape(len(q), k)

        # exact squared distances, recomputed the same way for every candidate
        d2 = ((self._points[idx] - q[:, None, :]) ** 2).sum(axis=2)
        best = _argmin_lowest_index(d2, idx)
        best_idx = idx[np.arange(len(q)), best]
        best_d2 = d2[np.arange(len(q)), best]

        # rows whose candidate list may be cut off inside a tie group
        if k < self.m:
            crowded = dist[:, -1] <= dist[:, 0] * (1.0 + 1e-9) + 1e-300
            for row in np.flatnonzero(crowded):
                radius = dist[row, 0] * (1.0 + 1e-9) + 1e-12
                cand = np.asarray(self._tree.query_ball_point(q[row], radius), dtype=np.int64)
                cd2 = ((self._points[cand] - q[row]) ** 2).sum(axis=1)
                low = cd2.min()
                best_idx[row] = cand[cd2 == low].min()
                best_d2[row] = low
        return best_idx.astype(np.int64), np.sqrt(best_d2)

    def nearest(self, p) -> Tuple[int, float]:
        """Nearest neighbor of a single point: (index, distance)."""
        idx, dist = self.query(np.asarray(p, dtype=float).reshape(1, 3))
        return int(idx[0]), float(dist[0])


def _argmin_lowest_index(d2, idx):
    """Column of the row minimum; among equal minima the one with the smallest point index."""
    low = d2.min(axis=1, keepdims=True)
    big = np.iinfo(np.int64).max
    masked = np.where(d2 == low, idx, big)
    chosen = masked.min(axis=1, keepdims=True)
    return np.argmax((idx == chosen) & (d2 == low), axis=1)


def brute_force_nearest(points, queries):
    """O(nm) reference search with the same tie rule (smallest index)."""
    points = np.asarray(points, dtype=float)
    q = np.asarray(queries, dtype=float).reshape(-1, 3)
    d2 = ((q[:, None, :] - points[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return idx, np.sqrt(d2[np.arange(len(q)), idx])
