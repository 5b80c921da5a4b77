"""
Model Fitting - shape-space fits to point clouds

A fit has two stages:
1. Initial alignment: a similarity transform from the model's mean-shape
   landmarks onto the target landmarks. The target cloud is pulled back into
   model space with its inverse, so the learned space never moves.
2. Energy minimisation inside the hyper-box |s_i| <= c * sigma_i over the
   truncated nearest-neighbour energy

       E(s) = sum_i min(|f_i(s) - p_NN(i)|^2, tau^2)

WHY TWO OPTIMISERS?
The global model has few parameters and a smooth energy between
correspondence updates, so it is fitted with a bounded quasi-Newton method
(L-BFGS-B) inside an ICP-style loop: correspondences and truncation masks are
refreshed once per outer iteration and frozen while the optimiser runs.

The local model has 3n parameters, each acting on a small patch. It is fitted
by a coarse-to-fine sweep: every parameter is set to the best of t_L uniform
samples across its box, and only the vertices in the parameter's basis
support are re-evaluated.
"""

import time
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np
from scipy.optimize import minimize

import config
from .alignment import SimilarityTransform, align_corresponding
from .errors import ConfigValidationError, InsufficientLandmarksError
from .geometry import NearestNeighborIndex, PointCloud
from .logger import pipeline_logger
from .models import GlobalPcaModel, LocalWaveletModel, ShapeParameters
from .wavelet import LevelBasis

# query points per nearest-neighbour batch in the local sweep
_QUERY_BATCH = 200_000


@dataclass
class FitConfig:
    tau: float = config.DEFAULT_TAU
    c: float = config.DEFAULT_C
    max_iterations: int = config.DEFAULT_MAX_ITERATIONS
    samples_per_parameter: int = config.DEFAULT_SAMPLES_PER_PARAMETER
    max_level: Optional[int] = None
    tolerance: float = config.DEFAULT_TOLERANCE

    def __post_init__(self):
        if not self.tau > 0:
            raise ConfigValidationError(f"tau must be > 0, got {self.tau}")
        if not self.c >= 0:
            raise ConfigValidationError(f"c must be >= 0, got {self.c}")
        if int(self.samples_per_parameter) < 2:
            raise ConfigValidationError(
                f"samples_per_parameter must be >= 2, got {self.samples_per_parameter}")
        if int(self.max_iterations) < 1:
            raise ConfigValidationError(f"max_iterations must be >= 1, got {self.max_iterations}")
        if self.max_level is not None and int(self.max_level) < 0:
            raise ConfigValidationError(f"max_level must be >= 0, got {self.max_level}")
        if not self.tolerance >= 0:
            raise ConfigValidationError(f"tolerance must be >= 0, got {self.tolerance}")

    def to_dict(self):
        return {
            "tau": self.tau, "c": self.c, "max_iterations": self.max_iterations,
            "samples_per_parameter": self.samples_per_parameter,
            "max_level": self.max_level, "tolerance": self.tolerance,
        }


@dataclass
class FitResult:
    params: ShapeParameters
    init_transform: SimilarityTransform
    final_energy: float
    energy_trace: List[float]
    vertices: np.ndarray                  # fitted shape, model frame
    iterations: int = 0
    nn_queries: int = 0
    energy_evaluations: int = 0
    skipped_parameters: int = 0
    timings: Dict[str, float] = field(default_factory=dict)

    @property
    def target_vertices(self):
        """Fitted shape mapped back into the target's frame."""
        return self.init_transform.apply(self.vertices)

    def summary(self):
        """Deterministic summary (no timings)."""
        return {
            "kind": self.params.kind,
            "final_energy": self.final_energy,
            "initial_energy": self.energy_trace[0],
            "iterations": self.iterations,
            "nn_queries": self.nn_queries,
            "energy_evaluations": self.energy_evaluations,
            "skipped_parameters": self.skipped_parameters,
        }


def sample_lattice(width, samples):
    """The t_L values tried for a parameter of half-width `width`."""
    return np.linspace(-width, width, int(samples))


# ---------------------------------------------------------------------------
# initial alignment
# ---------------------------------------------------------------------------

def initial_align(model, target_landmarks, model_landmarks=None, run_id="align"):
    """
    Similarity transform taking the model's landmark frame onto the target.

    Landmarks are matched by label; only labels present in both sets count.
    """
    try:
        if model_landmarks is None:
            model_landmarks = model.landmarks()
        labels = model_landmarks.common_labels(target_landmarks)
        if len(labels) < 3:
            raise InsufficientLandmarksError(
                f"initial alignment needs 3 common landmarks, found {len(labels)}: {labels}")
        transform = align_corresponding(model_landmarks.positions(labels),
                                        target_landmarks.positions(labels))
        pipeline_logger.log_stage("ALIGN", "SUCCESS", run_id,
                                  {"landmarks": labels, "scale": transform.scale,
                                   "residual_mm": transform.residual})
        return transform
    except Exception as e:
        pipeline_logger.log_error(run_id, "ALIGN", e)
        raise


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def _as_index(target):
    if isinstance(target, NearestNeighborIndex):
        return target
    return NearestNeighborIndex(target)


def _truncated_terms(vertices, index, tau2):
    """Per-vertex truncated squared distances and the NN assignment."""
    idx, _ = index.query(vertices)
    d2 = ((vertices - index.points[idx]) ** 2).sum(axis=1)
    return np.minimum(d2, tau2), idx, d2


def energy(model, params, target_index, tau=config.DEFAULT_TAU):
    """Truncated nearest-neighbour energy of F(params) against the target."""
    index = _as_index(target_index)
    vertices = model.generate(params)
    terms, _, _ = _truncated_terms(vertices, index, tau * tau)
    return float(terms.sum())


def energy_gradient(model, params, target_index, tau=config.DEFAULT_TAU):
    """
    Gradient of the energy for a global model with NN assignments and
    truncation masks frozen at `params`: 2 * Phi^T r over untruncated terms.
    """
    if not isinstance(model, GlobalPcaModel):
        raise TypeError("energy gradients are defined for global models")
    index = _as_index(target_index)
    vertices = model.generate(params)
    _, idx, d2 = _truncated_terms(vertices, index, tau * tau)
    residual = (vertices - index.points[idx]) * (d2 < tau * tau)[:, None]
    return 2.0 * model.basis.T @ residual.ravel()


# ---------------------------------------------------------------------------
# global fit
# ---------------------------------------------------------------------------

def _model_frame(cloud, init):
    if not isinstance(cloud, PointCloud):
        cloud = PointCloud(cloud)
    init = init or SimilarityTransform.identity()
    return cloud.transformed(init.inverse()), init


def fit_global(model, cloud, fit_config=None, init=None, run_id="fit_global"):
    """
    Fit a global PCA model to a point cloud.

    Starts from the mean (s = 0). Each outer iteration refreshes the
    correspondences at the current parameters, then minimises the frozen
    quadratic energy with L-BFGS-B inside the box. A step is kept only if it
    does not raise the frozen energy, which bounds the true energy from above,
    so the true energy never increases across outer iterations.

    Args:
        model: GlobalPcaModel
        cloud: PointCloud in the target frame
        fit_config: FitConfig (defaults when None)
        init: SimilarityTransform model -> target (identity when None)

    Returns:
        FitResult with parameters inside the box
    """
    fit_config = fit_config or FitConfig()
    start = time.perf_counter()
    try:
        local_cloud, init = _model_frame(cloud, init)
        index = NearestNeighborIndex(local_cloud)
        tau2 = fit_config.tau ** 2
        bound = fit_config.c * model.stddevs
        s = np.zeros(model.d)
        n = model.n

        terms, idx, d2 = _truncated_terms(model.generate(s), index, tau2)
        nn_queries = n
        current = float(terms.sum())
        trace = [current]
        iterations = 0

        active = np.flatnonzero(bound > 0)
        if len(active) > 0:
            for iterations in range(1, int(fit_config.max_iterations) + 1):
                targets = index.points[idx]
                mask = d2 < tau2
                s_new, frozen_new, frozen_old = _descend_frozen(model, s, targets, mask, tau2, bound, active)
                if frozen_new <= frozen_old:
                    s = s_new

                terms, idx, d2 = _truncated_terms(model.generate(s), index, tau2)
                nn_queries += n
                previous, current = current, float(terms.sum())
                trace.append(current)
                if abs(previous - current) <= fit_config.tolerance * max(previous, 1e-300):
                    break
            else:
                pipeline_logger.log_warning(run_id, "FIT_GLOBAL", "iteration cap reached",
                                            {"max_iterations": fit_config.max_iterations})

        s = np.clip(s, -bound, bound)
        result = FitResult(
            params=ShapeParameters("global", s),
            init_transform=init,
            final_energy=current,
            energy_trace=trace,
            vertices=model.generate(s),
            iterations=iterations,
            nn_queries=nn_queries,
            timings={"fit_seconds": time.perf_counter() - start},
        )
        pipeline_logger.log_stage("FIT_GLOBAL", "SUCCESS", run_id, result.summary())
        return result
    except Exception as e:
        pipeline_logger.log_error(run_id, "FIT_GLOBAL", e)
        raise


def _descend_frozen(model, s0, targets, mask, tau2, bound, active):
    """L-BFGS-B on the quadratic energy with frozen correspondences and masks."""
    basis = model.basis[:, active]
    weights = mask.astype(float)[:, None]
    constant = tau2 * float((~mask).sum())
    fixed = model.mean - targets
    s_full = s0.copy()

    def frozen(x):
        s_full[active] = x
        residual = (fixed + (model.basis @ s_full).reshape(-1, 3)) * weights
        return float((residual ** 2).sum()) + constant, 2.0 * basis.T @ residual.ravel()

    x0 = s0[active]
    f0, _ = frozen(x0)
    res = minimize(frozen, x0, jac=True, method="L-BFGS-B",
                   bounds=list(zip(-bound[active], bound[active])),
                   options={"maxiter": 100, "ftol": 1e-14, "gtol": 1e-10})
    x = np.clip(res.x, -bound[active], bound[active])
    f1, _ = frozen(x)
    out = s0.copy()
    out[active] = x
    return out, f1, f0


# ---------------------------------------------------------------------------
# local fit
# ---------------------------------------------------------------------------

def fit_local(model, cloud, fit_config=None, init=None, run_id="fit_local"):
    """
    Fit a local wavelet model by a coarse-to-fine sampling sweep.

    Coefficients are visited level 0 -> max_level, row-major within a level,
    components 0, 1, 2 in turn. Each parameter is set to the sample with the
    lowest energy among t_L uniform samples over [-c sigma, +c sigma] and its
    current value; ties go to the value nearest 0. Parameters with sigma = 0
    are skipped, and coefficients above max_level stay at 0.
    """
    fit_config = fit_config or FitConfig()
    start = time.perf_counter()
    try:
        h = model.hierarchy
        max_level = h.levels if fit_config.max_level is None else int(fit_config.max_level)
        if max_level > h.levels:
            raise ConfigValidationError(f"max_level {max_level} exceeds the model's {h.levels} levels")

        local_cloud, init = _model_frame(cloud, init)
        index = NearestNeighborIndex(local_cloud)
        tau2 = fit_config.tau ** 2
        t_L = int(fit_config.samples_per_parameter)

        r = np.zeros((h.n, 3))
        vertices = model.generate(r)
        terms, _, _ = _truncated_terms(vertices, index, tau2)
        nn_queries = h.n
        current = float(terms.sum())
        trace = [current]
        evaluations = 0
        skipped = 0
        level_times = {}

        for level in range(max_level + 1):
            level_start = time.perf_counter()
            basis = LevelBasis(model.operator, level)
            sl = h.level_slice(level)
            for k in range(sl.start, sl.stop):
                support, weights = basis.column(k)
                for j in range(3):
                    width = fit_config.c * model.stddevs[k, j]
                    if width <= 0:
                        skipped += 1
                        continue
                    direction = model.rotations[k, :, j]
                    candidates = sample_lattice(width, t_L)
                    offsets = np.outer(weights, direction)
                    old_sum = float(terms[support].sum())
                    base = current - old_sum

                    new_terms = _candidate_terms(vertices[support], offsets, candidates - r[k, j],
                                                 index, tau2)
                    evaluations += t_L
                    nn_queries += t_L * len(support)
                    energies = base + new_terms.sum(axis=1)

                    choice = _pick(candidates, energies, r[k, j], current)
                    if choice is not None:
                        step = candidates[choice] - r[k, j]
                        vertices[support] += step * offsets
                        terms[support] = new_terms[choice]
                        r[k, j] = candidates[choice]
                        current = float(energies[choice])
                    trace.append(current)
            level_times[f"level_{level}_seconds"] = time.perf_counter() - level_start

        # full re-synthesis, free of incremental rounding
        vertices = model.generate(r)
        terms, _, _ = _truncated_terms(vertices, index, tau2)
        nn_queries += h.n

        result = FitResult(
            params=ShapeParameters("local", r),
            init_transform=init,
            final_energy=float(terms.sum()),
            energy_trace=trace,
            vertices=vertices,
            iterations=max_level + 1,
            nn_queries=nn_queries,
            energy_evaluations=evaluations,
            skipped_parameters=skipped,
            timings=dict(level_times, fit_seconds=time.perf_counter() - start),
        )
        pipeline_logger.log_stage("FIT_LOCAL", "SUCCESS", run_id,
                                  dict(result.summary(), max_level=max_level))
        return result
    except Exception as e:
        pipeline_logger.log_error(run_id, "FIT_LOCAL", e)
        raise


def _candidate_terms(support_vertices, offsets, steps, index, tau2):
    """Truncated squared distances of the support vertices for every candidate step."""
    m = len(support_vertices)
    out = np.empty((len(steps), m))
    per_batch = max(1, _QUERY_BATCH // max(m, 1))
    for lo in range(0, len(steps), per_batch):
        chunk = steps[lo:lo + per_batch]
        moved = support_vertices[None, :, :] + chunk[:, None, None] * offsets[None, :, :]
        terms, _, _ = _truncated_terms(moved.reshape(-1, 3), index, tau2)
        out[lo:lo + len(chunk)] = terms.reshape(len(chunk), m)
    return out


def _pick(candidates, energies, incumbent, incumbent_energy):
    """
    Index of the winning candidate, or None when the current value stays.

    Lowest energy wins; among equal energies the value nearest 0, then the
    smaller value.
    """
    best_key = (incumbent_energy, abs(incumbent), incumbent)
    best = None
    for i, (value, e) in enumerate(zip(candidates, energies)):
        key = (float(e), abs(float(value)), float(value))
        if key < best_key:
            best_key, best = key, i
    return best


def level_sweep(model, cloud, fit_config=None, init=None, levels=None, run_id="level_sweep"):
    """
    Local fits with increasing max_level: energy, mean surface distance and
    time per level, the accuracy/computation trade-off of the sweep.
    """
    fit_config = fit_config or FitConfig()
    levels = range(model.hierarchy.levels + 1) if levels is None else levels
    local_cloud, init = _model_frame(cloud, init)
    index = NearestNeighborIndex(local_cloud)
    rows = []
    for level in levels:
        cfg = FitConfig(fit_config.tau, fit_config.c, fit_config.max_iterations,
                        fit_config.samples_per_parameter, int(level), fit_config.tolerance)
        result = fit_local(model, local_cloud, cfg, None, run_id=f"{run_id}_L{level}")
        result.init_transform = init
        _, dist = index.query(result.vertices)
        rows.append({
            "max_level": int(level),
            "final_energy": result.final_energy,
            "mean_surface_mm": float(dist.mean()),
            "energy_evaluations": result.energy_evaluations,
            "seconds": result.timings["fit_seconds"],
            "result": result,
        })
    return rows
