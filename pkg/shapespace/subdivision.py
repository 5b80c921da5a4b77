"""
Quad subdivision hierarchy over a regular base grid, template resampling
onto it, and linear upsampling of grids to finer hierarchies.

A hierarchy with base grid (rows_0, cols_0) and J levels has
rows_j = 2 * rows_{j-1} - 1 (same for cols) at level j. Vertices of level j
that are not already present at level j-1 are the "odd" (new) vertices of
level j; at the finest level every vertex belongs to exactly one level, which
is also the level of its wavelet coefficient.

Coefficient order is level-major, then row-major within the level.
"""

from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

import config
from .errors import DimensionMismatchError, InsufficientLandmarksError, ProjectionError, TopologyError
from .geometry import QuadMesh, TriangleMesh, grid_faces
from .logger import pipeline_logger

# Landmarks anchoring the four corners of the base grid
CORNER_LABELS = ("corner_tl", "corner_tr", "corner_bl", "corner_br")


@dataclass(frozen=True)
class SubdivisionHierarchy:
    base_dims: Tuple[int, int] = config.DEFAULT_BASE_DIMS
    levels: int = config.DEFAULT_LEVELS

    def __post_init__(self):
        rows, cols = (int(v) for v in self.base_dims)
        if rows < 2 or cols < 2:
            raise ValueError(f"base grid must be at least 2x2, got {rows}x{cols}")
        if int(self.levels) < 0:
            raise ValueError(f"levels must be >= 0, got {self.levels}")
        object.__setattr__(self, "base_dims", (rows, cols))
        object.__setattr__(self, "levels", int(self.levels))

    def dims(self, level=None):
        """(rows, cols) of the grid at `level` (default: finest)."""
        level = self.levels if level is None else level
        if not 0 <= level <= self.levels:
            raise ValueError(f"level {level} outside [0, {self.levels}]")
        step = 2 ** level
        return ((self.base_dims[0] - 1) * step + 1, (self.base_dims[1] - 1) * step + 1)

    @property
    def n(self):
        rows, cols = self.dims()
        return rows * cols

    def count_up_to(self, level):
        """Number of vertices (= coefficients) at levels 0..level."""
        rows, cols = self.dims(level)
        return rows * cols

    def refined(self, extra_levels):
        return SubdivisionHierarchy(self.base_dims, self.levels + int(extra_levels))

    @cached_property
    def vertex_levels(self):
        """(rows, cols) int array: level at which each finest vertex first appears."""
        rows, cols = self.dims()
        lev = np.full((rows, cols), self.levels, dtype=np.int64)
        for j in range(self.levels - 1, -1, -1):
            step = 2 ** (self.levels - j)
            lev[::step, ::step] = j
        return lev

    @cached_property
    def order(self):
        """Flat finest-grid vertex index of each coefficient, in coefficient order."""
        rows, cols = self.dims()
        flat_levels = self.vertex_levels.ravel()
        # stable sort keeps row-major order within each level
        return np.argsort(flat_levels, kind="stable")

    @cached_property
    def coefficient_levels(self):
        """Level of each coefficient, in coefficient order (non-decreasing)."""
        return self.vertex_levels.ravel()[self.order]

    @cached_property
    def inverse_order(self):
        inv = np.empty_like(self.order)
        inv[self.order] = np.arange(len(self.order))
        return inv

    def level_slice(self, level):
        """Slice of the coefficient vector holding the coefficients of `level`."""
        start = 0 if level == 0 else self.count_up_to(level - 1)
        return slice(start, self.count_up_to(level))

    def to_dict(self):
        return {"base_rows": self.base_dims[0], "base_cols": self.base_dims[1], "levels": self.levels}


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def resample_to_grid(mesh, landmarks, hierarchy, run_id="resample"):
    """
    Resample a disc-topology mesh onto the hierarchy's finest grid.

    The four corner landmarks anchor a bilinear grid; each grid point is then
    moved to its closest point on the mesh surface. A mesh that already is a
    grid of the right size (vertex count and row-major grid connectivity) is
    returned unchanged.
    """
    rows, cols = hierarchy.dims()
    try:
        if isinstance(mesh, QuadMesh):
            if mesh.grid_dims == (rows, cols) or _is_grid_connectivity(mesh, rows, cols):
                return QuadMesh.from_grid(mesh.vertices.copy(), rows, cols)
            mesh = mesh.triangulated()
        elif _is_grid_connectivity(mesh, rows, cols):
            return QuadMesh.from_grid(mesh.vertices.copy(), rows, cols)

        check_disc_topology(mesh)
        missing = [label for label in CORNER_LABELS
                   if label not in landmarks or not landmarks[label].present]
        if missing:
            raise InsufficientLandmarksError(f"resampling needs corner landmarks {missing}")
        tl, tr, bl, br = (landmarks.position(label) for label in CORNER_LABELS)

        u = np.linspace(0.0, 1.0, rows)[:, None, None]
        v = np.linspace(0.0, 1.0, cols)[None, :, None]
        grid = (1 - u) * ((1 - v) * tl + v * tr) + u * ((1 - v) * bl + v * br)
        projected, dist = closest_points_on_mesh(mesh, grid.reshape(-1, 3))
        limit = mesh.bbox_diagonal()
        if np.any(dist > limit):
            worst = int(np.argmax(dist))
            raise ProjectionError(
                f"grid point {worst} is {dist[worst]:.3f} mm from the surface (limit {limit:.3f} mm)")

        pipeline_logger.log_stage("RESAMPLE", "SUCCESS", run_id,
                                  {"n": rows * cols, "max_projection_mm": float(dist.max())})
        return QuadMesh.from_grid(projected, rows, cols)
    except Exception as e:
        pipeline_logger.log_error(run_id, "RESAMPLE", e)
        raise


def _is_grid_connectivity(mesh, rows, cols):
    """True when vertex count matches and every face lies within one grid cell."""
    if mesh.n != rows * cols or len(mesh.faces) == 0:
        return False
    r, c = np.divmod(mesh.faces, cols)
    return bool(np.all(r.max(axis=1) - r.min(axis=1) <= 1) and np.all(c.max(axis=1) - c.min(axis=1) <= 1))


def check_disc_topology(mesh):
    """Raise TopologyError unless the triangle mesh is one patch with one boundary loop."""
    faces = mesh.faces
    edges = np.sort(np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]]), axis=1)
    uniq, counts = np.unique(edges, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise TopologyError("mesh is non-manifold (edge shared by more than two faces)")
    used = np.unique(faces)
    V, E, F = len(used), len(uniq), len(faces)
    if V - E + F != 1:
        raise TopologyError(f"Euler characteristic {V - E + F} is not that of a disc")
    boundary = uniq[counts == 1]
    if len(boundary) == 0:
        raise TopologyError("mesh has no boundary")
    nodes, inv = np.unique(boundary, return_inverse=True)
    inv = inv.reshape(-1, 2)
    graph = coo_matrix((np.ones(len(inv)), (inv[:, 0], inv[:, 1])), shape=(len(nodes), len(nodes)))
    n_loops, _ = connected_components(graph, directed=False)
    if n_loops != 1:
        raise TopologyError(f"mesh has {n_loops} boundary loops")


def closest_points_on_mesh(mesh, queries, candidates=16, chunk=4096):
    """
    Exact closest points on a triangle mesh surface.

    Triangles are pre-selected through a k-d tree on their centroids. A query
    whose candidate set cannot be certified (a farther centroid could still
    belong to a closer triangle) is re-checked against every triangle whose
    centroid lies within the certifying radius.
    """
    q = np.asarray(queries, dtype=float).reshape(-1, 3)
    tris = mesh.triangles()
    centroids = tris.mean(axis=1)
    radius = np.linalg.norm(tris - centroids[:, None, :], axis=2).max()
    k = min(candidates, len(tris))
    tree = cKDTree(centroids)

    out = np.empty_like(q)
    dist = np.empty(len(q))
    for start in range(0, len(q), chunk):
        block = q[start:start + chunk]
        cdist, cidx = tree.query(block, k=k)
        cdist = cdist.reshape(len(block), k)
        cidx = cidx.reshape(len(block), k)
        pts = closest_point_on_triangles(
            block[:, None, :], tris[cidx, 0], tris[cidx, 1], tris[cidx, 2])
        d = np.linalg.norm(pts - block[:, None, :], axis=2)
        best = np.argmin(d, axis=1)
        rows = np.arange(len(block))
        out[start:start + len(block)] = pts[rows, best]
        dist[start:start + len(block)] = d[rows, best]

        if k < len(tris):
            # a closer triangle would have its centroid within dist + radius
            bd = dist[start:start + len(block)]
            for i in np.flatnonzero(cdist[:, -1] < bd + radius):
                cand = np.asarray(tree.query_ball_point(block[i], bd[i] + radius), dtype=np.int64)
                if len(cand) == 0:
                    continue
                cp = closest_point_on_triangles(block[i][None, :], tris[cand, 0], tris[cand, 1], tris[cand, 2])
                cd = np.linalg.norm(cp - block[i], axis=1)
                j = int(np.argmin(cd))
                if cd[j] < bd[i]:
                    out[start + i], dist[start + i] = cp[j], cd[j]
    return out, dist


def closest_point_on_triangles(p, a, b, c):
    """
    Closest point to p on triangles (a, b, c), vectorized over broadcast shapes.

    Region tests follow the standard Voronoi-region classification of the
    triangle (vertex, edge and face regions).
    """
    p, a, b, c = np.broadcast_arrays(p, a, b, c)
    ab, ac, ap = b - a, c - a, p - a
    d1 = (ab * ap).sum(-1)
    d2 = (ac * ap).sum(-1)
    bp = p - b
    d3 = (ab * bp).sum(-1)
    d4 = (ac * bp).sum(-1)
    cp = p - c
    d5 = (ab * cp).sum(-1)
    d6 = (ac * cp).sum(-1)

    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        denom = va + vb + vc
        v_face = np.where(denom != 0, vb / denom, 0.0)
        w_face = np.where(denom != 0, vc / denom, 0.0)
        out = a + ab * v_face[..., None] + ac * w_face[..., None]

        # edge bc
        t_bc = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        m = (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0)
        out = np.where(m[..., None], b + (c - b) * np.nan_to_num(t_bc)[..., None], out)
        # edge ac
        t_ac = d2 / (d2 - d6)
        m = (vb <= 0) & (d2 >= 0) & (d6 <= 0)
        out = np.where(m[..., None], a + ac * np.nan_to_num(t_ac)[..., None], out)
        out = np.where(((d6 >= 0) & (d5 <= d6))[..., None], c, out)
        # edge ab
        t_ab = d1 / (d1 - d3)
        m = (vc <= 0) & (d1 >= 0) & (d3 <= 0)
        out = np.where(m[..., None], a + ab * np.nan_to_num(t_ab)[..., None], out)

    out = np.where(((d3 >= 0) & (d4 <= d3))[..., None], b, out)
    out = np.where(((d1 <= 0) & (d2 <= 0))[..., None], a, out)
    return out


# ---------------------------------------------------------------------------
# upsampling
# ---------------------------------------------------------------------------

def upsample_grid(grid, hierarchy, extra_levels=1):
    """
    Linearly upsample a grid of `hierarchy` to `hierarchy.refined(extra_levels)`.

    New vertices are bilinear interpolations of the coarse grid, so the wavelet
    details of the added levels vanish and all coarser coefficients are kept.
    """
    rows, cols = hierarchy.dims()
    g = _as_grid(grid, rows, cols)
    for _ in range(int(extra_levels)):
        r, c = g.shape[:2]
        fine = np.zeros((2 * r - 1, 2 * c - 1, 3))
        fine[::2, ::2] = g
        fine[::2, 1::2] = 0.5 * (g[:, :-1] + g[:, 1:])
        fine[1::2, ::2] = 0.5 * (g[:-1, :] + g[1:, :])
        fine[1::2, 1::2] = 0.25 * (g[:-1, :-1] + g[:-1, 1:] + g[1:, :-1] + g[1:, 1:])
        g = fine
    fine_h = hierarchy.refined(extra_levels)
    return QuadMesh.from_grid(g.reshape(-1, 3), *fine_h.dims())


def _as_grid(grid, rows, cols):
    verts = grid.vertices if isinstance(grid, (QuadMesh, TriangleMesh)) else np.asarray(grid, dtype=float)
    verts = np.asarray(verts, dtype=float)
    if verts.size != rows * cols * 3:
        raise DimensionMismatchError(
            f"grid has {verts.size // 3} vertices, hierarchy expects {rows}x{cols}={rows * cols}")
    return verts.reshape(rows, cols, 3)


def grid_mesh(vertices, hierarchy):
    """Wrap finest-level row-major vertices as a grid QuadMesh."""
    rows, cols = hierarchy.dims()
    return QuadMesh(np.asarray(vertices, dtype=float).reshape(rows * cols, 3), grid_faces(rows, cols), (rows, cols))
