"""
Linear B-spline lifting wavelets on a subdivision grid.

The transform works in place on the finest-level grid. At level j the grid of
that level is the strided view X[::s, ::s] with s = 2**(J - j); inside it the
even-even positions are the vertices of level j-1 and the remaining positions
are the new (odd) vertices of level j:

    E = G[0::2, 0::2]   even vertices (level j-1)
    H = G[0::2, 1::2]   edge-odd, between two horizontal evens
    V = G[1::2, 0::2]   edge-odd, between two vertical evens
    F = G[1::2, 1::2]   face-odd, centre of four diagonal evens

Forward, per level from finest to coarsest:

    predict   H -= mean of its 2 evens, V likewise, F -= mean of its 4 evens
    update    E += 1/2 * mean of the details incident to it

The inverse undoes the two steps in reverse order, so reconstruction is exact
for any update weight. All functions accept arrays with any trailing channel
shape, which is how dense matrices and basis columns are built in batches.
"""

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

import config
from .errors import DimensionMismatchError
from .subdivision import SubdivisionHierarchy, grid_mesh

UPDATE_WEIGHT = 0.5

# coefficients of one level sharing a basis channel sit this many level
# spacings apart, farther than twice the support radius
_CHANNEL_PERIOD = 6


@dataclass
class WaveletCoefficients:
    """
    Wavelet coefficients in coefficient order (level-major, row-major).

    `coeffs[k]` is the 3-vector of coefficient k. Coefficients of level 0 are
    the scaling coefficients, all others are details.
    """

    coeffs: np.ndarray
    hierarchy: SubdivisionHierarchy

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float).reshape(-1, 3)
        if len(self.coeffs) != self.hierarchy.n:
            raise DimensionMismatchError(
                f"{len(self.coeffs)} coefficients for a hierarchy of {self.hierarchy.n} vertices")

    def level(self, k):
        return int(self.hierarchy.coefficient_levels[k])

    def kind(self, k):
        return "scaling" if self.level(k) == 0 else "detail"

    @property
    def scaling(self):
        return self.coeffs[self.hierarchy.level_slice(0)]

    def details(self, level):
        if level < 1:
            raise ValueError("details start at level 1")
        return self.coeffs[self.hierarchy.level_slice(level)]


# ---------------------------------------------------------------------------
# lifting steps
# ---------------------------------------------------------------------------

@lru_cache(maxsize=64)
def _incident_counts(rows, cols):
    """Number of details (edge and face) incident to each even of a rows x cols even grid."""
    ones_h = np.ones((rows, cols - 1))
    ones_v = np.ones((rows - 1, cols))
    ones_f = np.ones((rows - 1, cols - 1))
    count = _scatter_to_evens(np.zeros((rows, cols)), ones_h, ones_v, ones_f)
    count.setflags(write=False)
    return count


def _scatter_to_evens(S, H, V, F):
    S[:, 1:] += H
    S[:, :-1] += H
    S[1:, :] += V
    S[:-1, :] += V
    S[1:, 1:] += F
    S[1:, :-1] += F
    S[:-1, 1:] += F
    S[:-1, :-1] += F
    return S


def _predict(G, sign):
    E = G[0::2, 0::2]
    H = G[0::2, 1::2]
    V = G[1::2, 0::2]
    F = G[1::2, 1::2]
    H += sign * 0.5 * (E[:, :-1] + E[:, 1:])
    V += sign * 0.5 * (E[:-1] + E[1:])
    F += sign * 0.25 * (E[:-1, :-1] + E[:-1, 1:] + E[1:, :-1] + E[1:, 1:])


def _update(G, sign):
    E = G[0::2, 0::2]
    S = _scatter_to_evens(np.zeros_like(E), G[0::2, 1::2], G[1::2, 0::2], G[1::2, 1::2])
    count = _incident_counts(E.shape[0], E.shape[1])
    count = count.reshape(count.shape + (1,) * (E.ndim - 2))
    E += sign * UPDATE_WEIGHT * S / count


def lift_forward(X, levels):
    """In-place forward transform of a finest grid X with shape (rows, cols, ...)."""
    for j in range(levels, 0, -1):
        s = 2 ** (levels - j)
        G = X[::s, ::s]
        _predict(G, -1.0)
        _update(G, +1.0)
    return X


def lift_inverse(X, levels, start_level=1):
    """
    In-place inverse transform. Levels below `start_level` are skipped, which
    is exact when all coefficients of those levels are zero.
    """
    for j in range(max(start_level, 1), levels + 1):
        s = 2 ** (levels - j)
        G = X[::s, ::s]
        _update(G, -1.0)
        _predict(G, +1.0)
    return X


# ---------------------------------------------------------------------------
# public transform
# ---------------------------------------------------------------------------

def forward(grid, hierarchy):
    """
    Forward wavelet transform of a grid-structured shape.

    Args:
        grid: QuadMesh, (rows, cols, 3) array or (n, 3) row-major vertices
        hierarchy: SubdivisionHierarchy whose finest level matches the grid

    Returns:
        WaveletCoefficients
    """
    rows, cols = hierarchy.dims()
    verts = grid.vertices if hasattr(grid, "vertices") else grid
    verts = np.asarray(verts, dtype=float)
    if verts.size != rows * cols * 3:
        raise DimensionMismatchError(
            f"grid has {verts.size // 3} vertices, hierarchy expects {rows}x{cols}={rows * cols}")
    X = verts.reshape(rows, cols, 3).copy()
    lift_forward(X, hierarchy.levels)
    return WaveletCoefficients(X.reshape(-1, 3)[hierarchy.order], hierarchy)


def inverse(coeffs, hierarchy=None, up_to_level=None):
    """
    Inverse wavelet transform back to a grid QuadMesh.

    With `up_to_level = j < J` every detail above level j is treated as zero,
    which gives the smooth reconstruction from the coarse levels only.
    """
    if isinstance(coeffs, WaveletCoefficients):
        hierarchy = hierarchy or coeffs.hierarchy
        values = coeffs.coeffs
    else:
        values = np.asarray(coeffs, dtype=float).reshape(-1, 3)
    if hierarchy is None:
        raise ValueError("a hierarchy is required for raw coefficient arrays")
    return grid_mesh(inverse_vertices(values, hierarchy, up_to_level), hierarchy)


def inverse_vertices(values, hierarchy, up_to_level=None):
    """Inverse transform returning the (n, 3) row-major vertex array."""
    values = np.asarray(values, dtype=float).reshape(-1, 3)
    n = hierarchy.n
    if len(values) != n:
        raise DimensionMismatchError(f"{len(values)} coefficients for a hierarchy of {n} vertices")
    if up_to_level is not None and not 0 <= up_to_level <= hierarchy.levels:
        raise ValueError(f"up_to_level {up_to_level} outside [0, {hierarchy.levels}]")

    flat = np.empty((n, 3))
    flat[hierarchy.order] = values
    if up_to_level is not None and up_to_level < hierarchy.levels:
        flat[hierarchy.order[hierarchy.count_up_to(up_to_level):]] = 0.0
    rows, cols = hierarchy.dims()
    X = flat.reshape(rows, cols, 3)
    lift_inverse(X, hierarchy.levels)
    return X.reshape(n, 3)


# ---------------------------------------------------------------------------
# linear operator view
# ---------------------------------------------------------------------------

class WaveletOperator:
    """
    The inverse transform as a linear operator D^-1 from coefficients to
    vertices.

    Coordinates never mix, so D^-1 = M (x) I_3 for the scalar synthesis
    matrix M (n x n). Column k of M is the synthesis basis function of
    coefficient k; it is compactly supported around the coefficient's vertex.
    """

    def __init__(self, hierarchy):
        self.hierarchy = hierarchy

    def apply(self, coeffs):
        """D^-1 applied to coefficients given as (n, 3) or flat 3n arrays."""
        return inverse_vertices(coeffs, self.hierarchy)

    def support_radius(self, level):
        """Chebyshev radius (in finest grid steps) bounding a level's basis supports."""
        J = self.hierarchy.levels
        if level == 0:
            return 2 ** J - 1
        return 3 * 2 ** (J - level) - 1

    def support_bound(self, level):
        """Largest possible nonzero count of a basis column of `level`."""
        return (2 * self.support_radius(level) + 1) ** 2

    def scalar_matrix(self):
        """Dense scalar synthesis matrix M (n x n), columns in coefficient order."""
        self._check_dense()
        h = self.hierarchy
        n = h.n
        rows, cols = h.dims()
        M = np.empty((n, n))
        batch = 256
        for start in range(0, n, batch):
            ks = np.arange(start, min(start + batch, n))
            X = np.zeros((n, len(ks)))
            X[h.order[ks], np.arange(len(ks))] = 1.0
            X = X.reshape(rows, cols, len(ks))
            lift_inverse(X, h.levels)
            M[:, ks] = X.reshape(n, len(ks))
        return M

    def dense(self):
        """Dense D^-1 (3n x 3n) acting on flattened coefficient vectors."""
        return np.kron(self.scalar_matrix(), np.eye(3))

    def _check_dense(self):
        size = 3 * self.hierarchy.n
        if size > config.DENSE_OPERATOR_LIMIT:
            raise ValueError(
                f"dense operator of size {size} exceeds the limit {config.DENSE_OPERATOR_LIMIT}; "
                "use apply() instead")

    def level_basis(self, level):
        return LevelBasis(self, level)

    def basis_column(self, k):
        """Scalar synthesis function of coefficient k as a dense length-n vector."""
        level = int(self.hierarchy.coefficient_levels[k])
        idx, weights = self.level_basis(level).column(k)
        out = np.zeros(self.hierarchy.n)
        out[idx] = weights
        return out


class LevelBasis:
    """
    Basis columns of every coefficient of one level, synthesised together.

    Coefficients whose positions agree modulo a fixed period share one
    channel of a single batched inverse transform; their supports are
    disjoint, so each column is read back from a window around its vertex.
    """

    def __init__(self, operator, level):
        h = operator.hierarchy
        self.hierarchy = h
        self.level = int(level)
        self.radius = operator.support_radius(self.level)
        rows, cols = h.dims()
        self._step = 2 ** (h.levels - self.level)

        sl = h.level_slice(self.level)
        self._first = sl.start
        vertices = h.order[sl]
        r, c = np.divmod(vertices, cols)
        channels = self._channel(r, c)
        X = np.zeros((rows, cols, _CHANNEL_PERIOD ** 2))
        X[r, c, channels] = 1.0
        lift_inverse(X, h.levels, start_level=self.level)
        self._values = X

    def _channel(self, r, c):
        p = _CHANNEL_PERIOD
        return ((r // self._step) % p) * p + (c // self._step) % p

    def column(self, k):
        """
        (vertex_ids, weights) of the nonzero entries of coefficient k's basis
        function, vertex ids in row-major order.
        """
        h = self.hierarchy
        if int(h.coefficient_levels[k]) != self.level:
            raise ValueError(f"coefficient {k} is not on level {self.level}")
        rows, cols = h.dims()
        r, c = divmod(int(h.order[k]), cols)
        r0, r1 = max(r - self.radius, 0), min(r + self.radius + 1, rows)
        c0, c1 = max(c - self.radius, 0), min(c + self.radius + 1, cols)
        window = self._values[r0:r1, c0:c1, int(self._channel(r, c))]
        wr, wc = np.nonzero(window)
        ids = (wr + r0) * cols + (wc + c0)
        return ids.astype(np.int64), window[wr, wc].copy()
