"""
Shape Models - training, generation and projection

Both model families are generators F(s) = F_mean + Phi s over n vertices:

1. GlobalPcaModel: Phi is the leading eigenbasis of the training covariance.
   A parameter moves the whole surface.
2. LocalWaveletModel: every wavelet coefficient gets its own 3x3 PCA, and
   Phi = D^-1 U chains the per-coefficient rotations with the inverse lifting
   transform. A parameter moves only the support of its coefficient.

WHY TWO MODEL FAMILIES?
The global model is compact: a few parameters explain most of the variance,
which makes it a strong prior for fitting noisy data. The local model keeps
all 3n dimensions, so it can reproduce any grid shape exactly and an occluded
region cannot drag the rest of the surface along with it.

CONVENTIONS:
- Covariances use the 1/T normalisation.
- Each eigenvector is sign-fixed so its largest-magnitude entry is positive.
- Parameters are in model units: global s_i has stddev sigma_i, local r^k_j has
  stddev sigma^k_j.
"""

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional

import numpy as np

from .alignment import gpa
from .errors import DimensionMismatchError, UnalignedTrainingSetError
from .geometry import LandmarkSet, QuadMesh, TriangleMesh
from .logger import pipeline_logger
from .subdivision import SubdivisionHierarchy
from .wavelet import LevelBasis, WaveletOperator, forward, inverse_vertices


@dataclass
class TrainingSet:
    """T shapes in dense correspondence, plus where they came from."""

    shapes: np.ndarray
    subject_ids: Optional[List[str]] = None
    labels: Optional[List[str]] = None
    aligned: bool = False
    faces: Optional[np.ndarray] = None
    grid_dims: Optional[tuple] = None
    provenance: Dict = field(default_factory=dict)

    def __post_init__(self):
        try:
            data = np.asarray(self.shapes, dtype=float)
        except ValueError:
            raise DimensionMismatchError("training shapes have mismatched vertex counts")
        if data.ndim != 3 or data.shape[2] != 3:
            raise DimensionMismatchError(f"training shapes must be (T, n, 3), got {data.shape}")
        if len(data) < 2:
            raise DimensionMismatchError(f"a training set needs T >= 2 shapes, got {len(data)}")
        self.shapes = data
        if self.subject_ids is None:
            self.subject_ids = [f"subject_{i:03d}" for i in range(len(data))]
        self.subject_ids = [str(s) for s in self.subject_ids]
        if len(self.subject_ids) != len(data):
            raise DimensionMismatchError("one subject id per shape is required")
        if self.labels is not None:
            self.labels = [str(label) for label in self.labels]
            if len(self.labels) != len(data):
                raise DimensionMismatchError("one label per shape is required")

    @classmethod
    def from_meshes(cls, meshes, subject_ids=None, labels=None, provenance=None):
        meshes = list(meshes)
        counts = {m.n for m in meshes}
        if len(counts) != 1:
            raise DimensionMismatchError(f"meshes have mismatched vertex counts: {sorted(counts)}")
        first = meshes[0]
        return cls(np.stack([m.vertices for m in meshes]), subject_ids, labels,
                   faces=first.faces, grid_dims=getattr(first, "grid_dims", None),
                   provenance=dict(provenance or {}))

    @property
    def T(self):
        return len(self.shapes)

    @property
    def n(self):
        return self.shapes.shape[1]

    def subset(self, indices):
        indices = [int(i) for i in indices]
        return TrainingSet(
            self.shapes[indices],
            [self.subject_ids[i] for i in indices],
            [self.labels[i] for i in indices] if self.labels is not None else None,
            self.aligned, self.faces, self.grid_dims, dict(self.provenance),
        )

    def gpa_aligned(self, run_id="training_set"):
        """
        Return a GPA-aligned copy in millimeters.

        GPA fixes the mean to unit centroid-RMS; the aligned corpus is scaled
        back by the average centroid-RMS of the input shapes so that models,
        tau and every reported error stay in mm.
        """
        result = gpa(self.shapes, run_id=run_id)
        centred = self.shapes - self.shapes.mean(axis=1, keepdims=True)
        size = float(np.sqrt((centred ** 2).sum(axis=2).mean(axis=1)).mean())
        provenance = dict(self.provenance, gpa_iterations=result.iterations, gpa_scale_mm=size)
        return TrainingSet(result.aligned * size, list(self.subject_ids), self.labels,
                           True, self.faces, self.grid_dims, provenance)


@dataclass
class ShapeParameters:
    """Coordinates of a shape in a model: (d,) for global, (n, 3) for local."""

    kind: str
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.kind not in ("global", "local"):
            raise ValueError(f"unknown model kind {self.kind!r}")

    def to_dict(self):
        return {"kind": self.kind, "values": self.values.tolist()}


def _fix_signs(vectors):
    """Flip columns so each column's largest-magnitude entry is positive. Works on stacks."""
    idx = np.argmax(np.abs(vectors), axis=-2)
    pivot = np.take_along_axis(vectors, idx[..., None, :], axis=-2)
    return vectors * np.where(pivot < 0, -1.0, 1.0)


class _ModelBase:
    """Behaviour shared by both model families."""

    kind = ""

    def zero_parameters(self):
        raise NotImplementedError

    def _params(self, params):
        if isinstance(params, ShapeParameters):
            if params.kind != self.kind:
                raise DimensionMismatchError(f"{params.kind} parameters for a {self.kind} model")
            return params.values
        return np.asarray(params, dtype=float)

    def landmarks(self):
        """Landmark positions on the mean shape, from the stored vertex ids."""
        mean = self.mean_shape
        return LandmarkSet.from_positions(
            {label: mean[idx] for label, idx in sorted(self.landmark_ids.items(), key=lambda kv: kv[1])})

    def mesh(self, vertices, colors=None):
        """Wrap generated vertices with the model's connectivity."""
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 3)
        if self.grid_dims is not None:
            return QuadMesh.from_grid(vertices, *self.grid_dims, colors=colors)
        if self.faces is not None and self.faces.shape[1] == 4:
            return QuadMesh(vertices, self.faces, colors=colors)
        faces = self.faces if self.faces is not None else np.zeros((0, 3), dtype=np.int64)
        return TriangleMesh(vertices, faces, colors)


@dataclass
class GlobalPcaModel(_ModelBase):
    mean: np.ndarray                       # (n, 3)
    basis: np.ndarray                      # (3n, d), orthonormal columns
    eigenvalues: np.ndarray                # (d,), non-increasing
    spectrum: np.ndarray                   # every eigenvalue up to rank T-1
    faces: Optional[np.ndarray] = None
    grid_dims: Optional[tuple] = None
    landmark_ids: Dict[str, int] = field(default_factory=dict)

    kind = "global"

    @property
    def n(self):
        return len(self.mean)

    @property
    def d(self):
        return self.basis.shape[1]

    @property
    def stddevs(self):
        return np.sqrt(self.eigenvalues)

    @property
    def mean_shape(self):
        return self.mean

    def zero_parameters(self):
        return ShapeParameters("global", np.zeros(self.d))

    def generate(self, params):
        s = self._params(params).ravel()
        if s.size != self.d:
            raise DimensionMismatchError(f"global model has d={self.d}, got {s.size} parameters")
        return self.mean + (self.basis @ s).reshape(-1, 3)

    def project(self, shape):
        x = np.asarray(shape, dtype=float).reshape(-1, 3)
        if len(x) != self.n:
            raise DimensionMismatchError(f"shape has {len(x)} vertices, model has {self.n}")
        return ShapeParameters("global", self.basis.T @ (x - self.mean).ravel())


@dataclass
class LocalWaveletModel(_ModelBase):
    hierarchy: SubdivisionHierarchy
    means: np.ndarray                      # (n, 3) coefficient means, coefficient order
    rotations: np.ndarray                  # (n, 3, 3), columns = principal axes
    stddevs: np.ndarray                    # (n, 3) in the rotated frame
    landmark_ids: Dict[str, int] = field(default_factory=dict)

    kind = "local"
    faces = None

    @property
    def n(self):
        return self.hierarchy.n

    @property
    def d(self):
        return 3 * self.n

    @property
    def grid_dims(self):
        return self.hierarchy.dims()

    @cached_property
    def operator(self):
        return WaveletOperator(self.hierarchy)

    @cached_property
    def mean_shape(self):
        return inverse_vertices(self.means, self.hierarchy)

    def zero_parameters(self):
        return ShapeParameters("local", np.zeros((self.n, 3)))

    def coefficients(self, params):
        """Wavelet coefficients s^k = mean^k + U^k r^k."""
        r = self._params(params)
        if r.size != 3 * self.n:
            raise DimensionMismatchError(f"local model has {3 * self.n} parameters, got {r.size}")
        return self.means + np.einsum("kij,kj->ki", self.rotations, r.reshape(-1, 3))

    def generate(self, params):
        return inverse_vertices(self.coefficients(params), self.hierarchy)

    def project(self, shape):
        x = np.asarray(shape, dtype=float)
        if x.size != 3 * self.n:
            raise DimensionMismatchError(f"shape has {x.size // 3} vertices, model has {self.n}")
        coeffs = forward(x, self.hierarchy).coeffs
        return ShapeParameters("local", np.einsum("kji,kj->ki", self.rotations, coeffs - self.means))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _require_aligned(data):
    if not data.aligned:
        raise UnalignedTrainingSetError("training set must be GPA-aligned before training")


def train_global(data, d, landmark_ids=None, run_id="train_global"):
    """
    Train a global PCA model with d components.

    The eigenvalues of the 1/T covariance are the squared singular values of
    the centred data matrix scaled by 1/sqrt(T); the right singular vectors
    are the eigenvectors.
    """
    try:
        _require_aligned(data)
        T, n = data.T, data.n
        max_d = min(3 * n - 1, T - 1)
        if not 1 <= int(d) <= max_d:
            raise ValueError(f"d={d} outside [1, {max_d}] for T={T}, n={n}")
        d = int(d)

        X = data.shapes.reshape(T, 3 * n)
        mean = X.mean(axis=0)
        _, S, Vt = np.linalg.svd((X - mean) / np.sqrt(T), full_matrices=False)
        eigenvalues = S ** 2
        basis = _fix_signs(Vt[:d].T)

        if eigenvalues[d - 1] <= 1e-12 * max(eigenvalues[0], 1e-300):
            pipeline_logger.log_warning(run_id, "TRAIN_GLOBAL", "rank-deficient training data",
                                        {"d": d, "lambda_d": float(eigenvalues[d - 1])})

        model = GlobalPcaModel(
            mean=mean.reshape(n, 3),
            basis=basis,
            eigenvalues=eigenvalues[:d].copy(),
            spectrum=eigenvalues[:max_d].copy(),
            faces=data.faces,
            grid_dims=data.grid_dims,
            landmark_ids=dict(landmark_ids or {}),
        )
        total = eigenvalues[:max_d].sum()
        pipeline_logger.log_stage("TRAIN_GLOBAL", "SUCCESS", run_id, {
            "T": T, "n": n, "d": d,
            "explained": float(eigenvalues[:d].sum() / total) if total > 0 else 1.0,
        })
        return model
    except Exception as e:
        pipeline_logger.log_error(run_id, "TRAIN_GLOBAL", e)
        raise


def train_local(data, hierarchy, landmark_ids=None, run_id="train_local"):
    """
    Train a local wavelet model: per-coefficient 3x3 PCA over the corpus.

    All 3n dimensions are kept.
    """
    try:
        _require_aligned(data)
        if data.n != hierarchy.n:
            rows, cols = hierarchy.dims()
            raise DimensionMismatchError(
                f"shapes have {data.n} vertices, hierarchy grid is {rows}x{cols}={hierarchy.n}")

        coeffs = np.stack([forward(shape, hierarchy).coeffs for shape in data.shapes])
        means = coeffs.mean(axis=0)
        centred = coeffs - means
        cov = np.einsum("tki,tkj->kij", centred, centred) / data.T

        # eigh is ascending; flip to non-increasing
        w, U = np.linalg.eigh(cov)
        w = np.clip(w[:, ::-1], 0.0, None)
        U = _fix_signs(U[:, :, ::-1])

        model = LocalWaveletModel(hierarchy, means, U, np.sqrt(w), dict(landmark_ids or {}))
        pipeline_logger.log_stage("TRAIN_LOCAL", "SUCCESS", run_id, {
            "T": data.T, "n": hierarchy.n, "levels": hierarchy.levels,
            "zero_variance_parameters": int((w <= 0).sum()),
        })
        return model
    except Exception as e:
        pipeline_logger.log_error(run_id, "TRAIN_LOCAL", e)
        raise


def global_trainer(d, landmark_ids=None):
    """Trainer callable for the evaluation harness; d is capped by the subset's rank."""
    def train(data):
        cap = min(3 * data.n - 1, data.T - 1)
        return train_global(data, min(int(d), cap), landmark_ids, run_id="trainer_global")
    train.kind = "global"
    return train


def local_trainer(hierarchy, landmark_ids=None):
    def train(data):
        return train_local(data, hierarchy, landmark_ids, run_id="trainer_local")
    train.kind = "local"
    return train


# ---------------------------------------------------------------------------
# generation helpers
# ---------------------------------------------------------------------------

def generate(model, params):
    """F(params) as an (n, 3) vertex array."""
    return model.generate(params)


def project(model, shape):
    return model.project(shape)


def principal_sweep(model, component, multiples=(-3, -2, -1, 0, 1, 2, 3)):
    """Shapes along principal direction `component` at multiples of its stddev."""
    if not isinstance(model, GlobalPcaModel):
        raise TypeError("principal sweeps are defined for global models")
    if not 0 <= component < model.d:
        raise ValueError(f"component {component} outside [0, {model.d})")
    shapes = []
    for m in multiples:
        s = np.zeros(model.d)
        s[component] = m * model.stddevs[component]
        shapes.append(model.generate(s))
    return shapes


def level_variability(model, level):
    """
    Per-vertex stddev magnitude contributed by the coefficients of one level.

    Coordinates never mix under D^-1, so the vertex covariance contributed by
    coefficient k is b_k(v)^2 * Cov_k; its trace sums the coefficient's
    variances.
    """
    if not isinstance(model, LocalWaveletModel):
        raise TypeError("level variability is defined for local models")
    h = model.hierarchy
    if not 0 <= level <= h.levels:
        raise ValueError(f"level {level} outside [0, {h.levels}]")
    basis = LevelBasis(model.operator, level)
    variance = np.zeros(h.n)
    traces = (model.stddevs ** 2).sum(axis=1)
    sl = h.level_slice(level)
    for k in range(sl.start, sl.stop):
        if traces[k] == 0:
            continue
        idx, w = basis.column(k)
        variance[idx] += w ** 2 * traces[k]
    return np.sqrt(variance)
