"""
Similarity alignment and Generalized Procrustes Analysis.

A similarity transform maps x to s * R @ x + t with R a proper rotation and
s > 0. `align_corresponding` solves for it in closed form from the SVD of the
cross-covariance of two corresponding point sets, correcting the determinant
so reflections are never returned. `gpa` aligns a whole corpus to its
evolving mean.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

import config
from .errors import ConfigValidationError, DegenerateConfigurationError, DimensionMismatchError
from .logger import pipeline_logger


@dataclass(frozen=True)
class SimilarityTransform:
    """x -> scale * rotation @ x + translation."""

    rotation: np.ndarray
    translation: np.ndarray
    scale: float = 1.0
    residual: float = 0.0

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not self.scale > 0:
            raise ValueError(f"similarity scale must be positive, got {self.scale}")
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-10 or abs(np.linalg.det(R) - 1.0) > 1e-10:
            raise ValueError("rotation must be orthogonal with determinant +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "scale", float(self.scale))

    @classmethod
    def identity(cls):
        return cls(np.eye(3), np.zeros(3), 1.0)

    def apply(self, points):
        p = np.asarray(points, dtype=float).reshape(-1, 3)
        return self.scale * p @ self.rotation.T + self.translation

    def inverse(self):
        Rt = self.rotation.T
        return SimilarityTransform(Rt, -(Rt @ self.translation) / self.scale, 1.0 / self.scale)

    def compose(self, other):
        """self after other: x -> self(other(x))."""
        return SimilarityTransform(
            self.rotation @ other.rotation,
            self.scale * self.rotation @ other.translation + self.translation,
            self.scale * other.scale,
        )

    def as_matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M

    def to_dict(self):
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "scale": self.scale,
            "residual": self.residual,
        }


def align_corresponding(source, target, with_scale=True):
    """
    Least-squares similarity transform taking `source` onto `target`.

    Minimizes sum ||s R x_i + t - y_i||^2 over proper rotations R, s > 0 and t.
    The returned transform carries the RMS residual of the fit.

    Raises:
        DimensionMismatchError: lists of different length
        DegenerateConfigurationError: fewer than 3 points, or collinear /
            coincident configurations without a unique rotation
    """
    X = np.asarray(source, dtype=float).reshape(-1, 3)
    Y = np.asarray(target, dtype=float).reshape(-1, 3)
    if X.shape != Y.shape:
        raise DimensionMismatchError(f"source has {len(X)} points, target has {len(Y)}")
    k = len(X)
    if k < 3:
        raise DegenerateConfigurationError(f"need at least 3 corresponding points, got {k}")

    mx, my = X.mean(axis=0), Y.mean(axis=0)
    Xc, Yc = X - mx, Y - my
    _check_spread(Xc, "source")
    _check_spread(Yc, "target")

    var_x = (Xc ** 2).sum() / k
    H = Yc.T @ Xc / k
    U, D, Vt = np.linalg.svd(H)
    S = np.eye(3)
    if np.linalg.det(U) * np.linalg.det(Vt) < 0:
        S[2, 2] = -1.0
    R = U @ S @ Vt
    # re-orthonormalize away rounding so the transform validates at 1e-10
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    s = float(np.trace(np.diag(D) @ S) / var_x) if with_scale else 1.0
    if not s > 0:
        raise DegenerateConfigurationError("configuration admits no positive scale")
    t = my - s * R @ mx
    residual = float(np.sqrt(((s * X @ R.T + t - Y) ** 2).sum(axis=1).mean()))
    return SimilarityTransform(R, t, s, residual)


def _check_spread(centered, name):
    sv = np.linalg.svd(centered, compute_uv=False)
    if sv[0] <= 1e-12 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateConfigurationError(f"{name} points are coincident or collinear")


@dataclass
class GpaResult:
    aligned: np.ndarray      # (T, n, 3)
    mean: np.ndarray         # (n, 3), centroid 0, unit centroid-RMS
    iterations: int
    transforms: list


def normalize_shape(shape):
    """Translate to centroid 0 and scale to unit centroid-RMS."""
    c = shape - shape.mean(axis=0)
    rms = np.sqrt((c ** 2).sum(axis=1).mean())
    if rms <= 0:
        raise DegenerateConfigurationError("shape has zero extent")
    return c / rms


def gpa(shapes, tolerance=config.GPA_TOLERANCE, max_iterations=config.GPA_MAX_ITERATIONS,
        run_id="gpa"):
    """
    Generalized Procrustes Analysis over corresponded shapes.

    Each iteration aligns every shape to the current mean (similarity) and
    recomputes the mean, normalised to centroid 0 and unit centroid-RMS. Stops
    when the RMS displacement of the mean drops below `tolerance` or after
    `max_iterations`.

    Args:
        shapes: (T, n, 3) array or list of (n, 3) arrays, T >= 2

    Returns:
        GpaResult with the aligned shapes, the mean and the iteration count
    """
    try:
        if max_iterations < 1:
            raise ConfigValidationError(f"max_iterations must be >= 1, got {max_iterations}")
        sizes = {np.asarray(s).shape for s in shapes}
        if len(sizes) != 1:
            raise DimensionMismatchError(f"shapes have mismatched vertex counts: {sorted(sizes)}")
        data = np.asarray(shapes, dtype=float)
        if data.ndim != 3 or data.shape[2] != 3:
            raise DimensionMismatchError(f"shapes must be (T, n, 3), got {data.shape}")
        if len(data) < 2:
            raise DimensionMismatchError("GPA needs at least 2 shapes")

        mean = _initial_reference(data)
        aligned = data
        transforms = []
        iterations = 0
        shift = float("inf")
        for iterations in range(1, max_iterations + 1):
            transforms = [align_corresponding(shape, mean) for shape in data]
            aligned = np.stack([tf.apply(shape) for tf, shape in zip(transforms, data)])
            new_mean = normalize_shape(aligned.mean(axis=0))
            shift = float(np.sqrt(((new_mean - mean) ** 2).sum(axis=1).mean()))
            mean = new_mean
            if shift < tolerance:
                break
        else:
            pipeline_logger.log_warning(run_id, "GPA", "iteration cap reached",
                                        {"iterations": max_iterations, "shift": shift})

        pipeline_logger.log_stage("GPA", "SUCCESS", run_id,
                                  {"shapes": len(data), "n": data.shape[1], "iterations": iterations})
        return GpaResult(aligned, mean, iterations, transforms)
    except Exception as e:
        pipeline_logger.log_error(run_id, "GPA", e)
        raise


def _initial_reference(data):
    """
    Start from the normalised mean of the centred shapes; it does not depend
    on input order and is already the fixed point for an aligned corpus. If
    the shapes are so differently oriented that this mean collapses, start
    from the first shape instead.
    """
    centred = data - data.mean(axis=1, keepdims=True)
    avg = centred.mean(axis=0)
    avg_rms = np.sqrt((avg ** 2).sum(axis=1).mean())
    shape_rms = np.sqrt((centred ** 2).sum(axis=2).mean(axis=1)).mean()
    if avg_rms > 0.5 * shape_rms:
        return normalize_shape(avg)
    return normalize_shape(data[0])
