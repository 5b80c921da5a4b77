"""
Evaluation - model quality and fitting quality

Model quality is measured with three numbers per model:
- Compactness: fraction of the training variance explained by d components.
- Generalization: leave-one-subject-out reconstruction error of unseen shapes.
- Specificity: distance from random model samples to the closest training shape.

Fitting quality is measured against ground truth:
- Landmark distance at named points.
- Surface distance from each fitted vertex to the nearest data point (a lower
  bound on the real error).
- Corresponding-vertex error in 10-fold cross-validation, summarised as a
  cumulative error curve.

All distances are in mm. Everything here is deterministic given the seed.
"""

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

import config
from .errors import DimensionMismatchError, InsufficientDataError, InsufficientLandmarksError
from .fitting import FitConfig, fit_global, fit_local, initial_align
from .geometry import LandmarkSet, NearestNeighborIndex, PointCloud
from .logger import pipeline_logger
from .models import GlobalPcaModel, LocalWaveletModel, global_trainer, train_global
from .synth import occlude
from .utils import summary_stats

CURVE_STEP_MM = 0.1


# ---------------------------------------------------------------------------
# model quality
# ---------------------------------------------------------------------------

def compactness(model, d):
    """
    Fraction of the total training variance captured by the first d
    components. The local model keeps every dimension, so it is always 1.
    """
    if isinstance(model, LocalWaveletModel):
        return 1.0
    spectrum = model.spectrum
    if not 1 <= int(d) <= len(spectrum):
        raise ValueError(f"d={d} outside [1, {len(spectrum)}]")
    total = spectrum.sum()
    if total <= 0:
        return 1.0
    return float(spectrum[:int(d)].sum() / total)


def compactness_curve(model, d_max=None):
    """C(d) for d = 1..d_max (default: the full spectrum)."""
    if isinstance(model, LocalWaveletModel):
        return np.ones(int(d_max or 1))
    d_max = len(model.spectrum) if d_max is None else int(d_max)
    return np.array([compactness(model, d) for d in range(1, d_max + 1)])


def mean_vertex_distance(a, b):
    """Average Euclidean distance between corresponding vertices."""
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    return float(np.linalg.norm(a - b, axis=1).mean())


def _subject_groups(data):
    groups = {}
    for i, subject in enumerate(data.subject_ids):
        groups.setdefault(subject, []).append(i)
    return groups


def generalization(data, trainer, run_id="generalization"):
    """
    Leave-one-subject-out reconstruction error.

    For every subject a model is trained on all other subjects, the held-out
    shapes are projected and reconstructed, and the mean vertex distance is
    recorded. Returns (mean, stddev) across subjects.
    """
    try:
        groups = _subject_groups(data)
        if len(groups) < 3:
            raise InsufficientDataError(f"generalization needs at least 3 subjects, got {len(groups)}")
        errors = []
        for subject, held_out in groups.items():
            keep = [i for i in range(data.T) if data.subject_ids[i] != subject]
            model = trainer(data.subset(keep))
            per_shape = [mean_vertex_distance(data.shapes[i], model.generate(model.project(data.shapes[i])))
                         for i in held_out]
            errors.append(float(np.mean(per_shape)))
        errors = np.array(errors)
        pipeline_logger.log_stage("EVALUATE", "SUCCESS", run_id,
                                  {"measure": "generalization", "subjects": len(errors),
                                   "mean_mm": float(errors.mean())})
        return float(errors.mean()), float(errors.std())
    except Exception as e:
        pipeline_logger.log_error(run_id, "EVALUATE", e)
        raise


def sample_parameters(model, rng):
    """One random parameter vector from the model's Gaussian."""
    if isinstance(model, GlobalPcaModel):
        return rng.standard_normal(model.d) * model.stddevs
    # independent per-component Gaussians in each coefficient's rotated frame
    return rng.standard_normal((model.n, 3)) * model.stddevs


def specificity(model, data, samples=config.DEFAULT_SPECIFICITY_SAMPLES, seed=config.DEFAULT_SEED,
                run_id="specificity"):
    """
    Mean and stddev over random model samples of the distance to the closest
    training shape (mean vertex distance).
    """
    try:
        if int(samples) < 1:
            raise ValueError(f"samples must be >= 1, got {samples}")
        if data.n != model.n:
            raise DimensionMismatchError(f"training shapes have {data.n} vertices, model has {model.n}")
        rng = np.random.default_rng(seed)
        training = data.shapes
        errors = np.empty(int(samples))
        for i in range(int(samples)):
            shape = model.generate(sample_parameters(model, rng))
            errors[i] = np.linalg.norm(training - shape[None], axis=2).mean(axis=1).min()
        pipeline_logger.log_stage("EVALUATE", "SUCCESS", run_id,
                                  {"measure": "specificity", "kind": model.kind, "samples": int(samples),
                                   "mean_mm": float(errors.mean())})
        return float(errors.mean()), float(errors.std())
    except Exception as e:
        pipeline_logger.log_error(run_id, "EVALUATE", e)
        raise


def model_quality_curves(data, d_values, samples=config.DEFAULT_SPECIFICITY_SAMPLES,
                         seed=config.DEFAULT_SEED, run_id="quality_curves"):
    """Compactness, generalization and specificity of global models as functions of d."""
    d_values = [int(d) for d in d_values]
    full = train_global(data, min(3 * data.n - 1, data.T - 1), run_id=run_id)
    rows = []
    for d in d_values:
        model = train_global(data, d, run_id=run_id)
        gen_mean, gen_std = generalization(data, global_trainer(d), run_id=run_id)
        spec_mean, spec_std = specificity(model, data, samples, seed, run_id=run_id)
        rows.append({
            "d": d,
            "compactness": compactness(full, d),
            "generalization_mean": gen_mean,
            "generalization_std": gen_std,
            "specificity_mean": spec_mean,
            "specificity_std": spec_std,
        })
    return rows


# ---------------------------------------------------------------------------
# fitting quality
# ---------------------------------------------------------------------------

def landmark_distance(fit_vertices, landmark_ids, target_landmarks):
    """
    Distance per label between the fitted landmark vertices and the target
    landmarks. Only labels present in the target are evaluated.
    """
    vertices = np.asarray(fit_vertices, dtype=float).reshape(-1, 3)
    present = set(target_landmarks.present_labels())
    labels = [label for label in landmark_ids if label in present]
    if not labels:
        raise InsufficientLandmarksError("no landmark present in both the model and the target")
    return {label: float(np.linalg.norm(vertices[landmark_ids[label]] - target_landmarks.position(label)))
            for label in labels}


def surface_distance(fit_vertices, target):
    """Per-vertex distance from the fitted surface to the nearest target point."""
    index = target if isinstance(target, NearestNeighborIndex) else NearestNeighborIndex(target)
    _, dist = index.query(np.asarray(fit_vertices, dtype=float).reshape(-1, 3))
    return dist


def cumulative_error_curve(errors, step=CURVE_STEP_MM):
    """
    Fraction of errors at or below each threshold, thresholds 0, step, 2*step
    ... up to the first one covering the largest error.
    """
    errors = np.sort(np.asarray(errors, dtype=float).ravel())
    if errors.size == 0:
        raise ValueError("no errors to summarise")
    count = max(int(math.ceil(errors[-1] / step)), 0)
    thresholds = np.arange(count + 1) * step
    if thresholds[-1] < errors[-1]:
        thresholds = np.append(thresholds, (count + 1) * step)
    fractions = np.searchsorted(errors, thresholds, side="right") / errors.size
    return thresholds, fractions


def error_at_fraction(errors, fraction):
    """Smallest error e such that at least `fraction` of the errors are <= e."""
    errors = np.sort(np.asarray(errors, dtype=float).ravel())
    k = max(int(math.ceil(fraction * errors.size)) - 1, 0)
    return float(errors[k])


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

def fold_assignment(data, folds=config.DEFAULT_FOLDS, seed=config.DEFAULT_SEED):
    """
    Fold index of every shape. Subjects (not scans) are dealt to folds after
    a seeded shuffle; with labels, each label group is dealt in turn so every
    fold gets a balanced share of each label.
    """
    groups = _subject_groups(data)
    subjects = list(groups)
    if len(subjects) < folds:
        raise InsufficientDataError(f"{folds}-fold cross-validation needs {folds} subjects, got {len(subjects)}")
    rng = np.random.default_rng(seed)

    if data.labels is not None:
        by_label = {}
        for subject in subjects:
            by_label.setdefault(data.labels[groups[subject][0]], []).append(subject)
        strata = [by_label[label] for label in sorted(by_label)]
    else:
        strata = [subjects]

    subject_fold = {}
    slot = 0
    for stratum in strata:
        for j in rng.permutation(len(stratum)):
            subject_fold[stratum[j]] = slot % folds
            slot += 1

    assignment = np.empty(data.T, dtype=np.int64)
    for subject, indices in groups.items():
        assignment[indices] = subject_fold[subject]
    return assignment


def map_jobs(fn, items, jobs):
    """`map` over a thread pool of `jobs` workers; results keep the input order."""
    if jobs <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def fit_model(model, cloud, fit_config, init=None, run_id="fit"):
    """Dispatch to the fitter of the model's kind."""
    if isinstance(model, GlobalPcaModel):
        return fit_global(model, cloud, fit_config, init, run_id=run_id)
    return fit_local(model, cloud, fit_config, init, run_id=run_id)


def _init_for(model, truth, target_landmarks, run_id):
    if target_landmarks is None:
        if not model.landmark_ids:
            return None
        target_landmarks = LandmarkSet.from_positions(
            {label: truth[idx] for label, idx in model.landmark_ids.items()})
    return initial_align(model, target_landmarks, run_id=run_id)


@dataclass
class CrossValidationResult:
    folds: np.ndarray
    errors: Dict[str, np.ndarray]               # per model, every held-out vertex error
    subject_errors: Dict[str, Dict[str, float]]

    def curves(self, step=CURVE_STEP_MM):
        return {name: cumulative_error_curve(err, step) for name, err in self.errors.items()}

    def to_dict(self):
        out = {"folds": self.folds.tolist(), "models": {}}
        for name, err in self.errors.items():
            out["models"][name] = {
                "summary": summary_stats(err),
                "error_at_80_percent": error_at_fraction(err, 0.8),
                "subjects": self.subject_errors[name],
            }
        return out


def cross_validate_10fold(data, trainers, fit_config=None, seed=config.DEFAULT_SEED,
                          folds=config.DEFAULT_FOLDS, jobs=1, run_id="cross_validation"):
    """
    k-fold cross-validation of one or more trainers.

    Each fold's models are trained on the other folds and fitted to every
    held-out shape (its vertices as the target cloud, initialised from the
    landmarks). The error is the distance between each fitted vertex and its
    corresponding ground-truth vertex.

    Args:
        data: GPA-aligned TrainingSet
        trainers: {name: trainer callable} (see models.global_trainer)
        fit_config: FitConfig shared by all fits
    """
    fit_config = fit_config or FitConfig()
    try:
        assignment = fold_assignment(data, folds, seed)
        errors = {name: [] for name in trainers}
        subject_errors = {name: {} for name in trainers}
        for fold in range(folds):
            held_out = np.flatnonzero(assignment == fold)
            train = data.subset(np.flatnonzero(assignment != fold))
            for name, trainer in trainers.items():
                model = trainer(train)

                def fit_one(i, model=model, name=name):
                    truth = data.shapes[i]
                    tag = f"{run_id}_{name}_{data.subject_ids[i]}"
                    init = _init_for(model, truth, None, tag)
                    result = fit_model(model, PointCloud(truth), fit_config, init, tag)
                    return i, np.linalg.norm(result.target_vertices - truth, axis=1)

                for i, err in map_jobs(fit_one, list(held_out), jobs):
                    errors[name].append(err)
                    subject_errors[name][data.subject_ids[i]] = float(err.mean())

        result = CrossValidationResult(
            assignment, {name: np.concatenate(err) for name, err in errors.items()}, subject_errors)
        pipeline_logger.log_stage("EVALUATE", "SUCCESS", run_id, {
            "measure": "cross_validation", "folds": folds,
            "error_at_80_percent": {name: error_at_fraction(e, 0.8) for name, e in result.errors.items()},
        })
        return result
    except Exception as e:
        pipeline_logger.log_error(run_id, "EVALUATE", e)
        raise


# ---------------------------------------------------------------------------
# occlusion study
# ---------------------------------------------------------------------------

def region_mask(vertices, region):
    """Vertices within a (center, radius) region."""
    center, radius = region
    return np.linalg.norm(np.asarray(vertices) - np.asarray(center, dtype=float), axis=1) <= radius


@dataclass
class OcclusionStudy:
    degradation: Dict[str, np.ndarray]          # per model, per target: occluded - clean control error
    clean_surface: Dict[str, List[np.ndarray]]  # per model, per target: surface distance of the clean fit

    def mean_degradation(self):
        return {name: float(v.mean()) for name, v in self.degradation.items()}

    def clean_surface_stats(self):
        return {name: summary_stats(np.concatenate(v)) for name, v in self.clean_surface.items()}

    def to_dict(self):
        return {
            "mean_control_degradation_mm": self.mean_degradation(),
            "clean_surface_distance_mm": self.clean_surface_stats(),
            "trials": len(next(iter(self.degradation.values()))) if self.degradation else 0,
        }


def occlusion_study(models, targets, region, control, fit_config=None, jobs=1, run_id="occlusion",
                    outliers=0):
    """
    Fit every model to each target twice, clean and with `region` deleted,
    and record how much the error inside `control` grows.

    Args:
        models: {name: model}
        targets: list of (truth_vertices, PointCloud) or
            (truth_vertices, PointCloud, LandmarkSet) tuples; with landmarks
            each fit starts from the landmark alignment, otherwise the target
            must already be in model space
        region: (center, radius) removed from the occluded cloud, or a
            callable truth -> (center, radius)
        control: (center, radius) or callable, where the error is measured
        outliers: points of a blob placed in front of the hole, like a hand
    """
    fit_config = fit_config or FitConfig()
    degradation = {name: [] for name in models}
    clean_surface = {name: [] for name in models}
    for t, target in enumerate(targets):
        truth, cloud = np.asarray(target[0], dtype=float).reshape(-1, 3), target[1]
        landmarks = target[2] if len(target) > 2 else None
        hole = region(truth) if callable(region) else region
        watch = control(truth) if callable(control) else control
        occluded = occlude(cloud, hole, outliers, seed=t)
        mask = region_mask(truth, watch)
        if not mask.any():
            raise ValueError("control region contains no vertices")

        def run(name):
            model = models[name]
            tag = f"{run_id}_{name}_{t}"
            init = initial_align(model, landmarks, run_id=tag) if landmarks is not None else None
            clean = fit_model(model, cloud, fit_config, init, f"{tag}_clean")
            hidden = fit_model(model, occluded, fit_config, init, f"{tag}_occluded")
            clean_err = np.linalg.norm(clean.target_vertices - truth, axis=1)[mask].mean()
            hidden_err = np.linalg.norm(hidden.target_vertices - truth, axis=1)[mask].mean()
            return name, hidden_err - clean_err, surface_distance(clean.target_vertices, cloud)

        for name, delta, surface in map_jobs(run, list(models), jobs):
            degradation[name].append(float(delta))
            clean_surface[name].append(surface)

    study = OcclusionStudy({name: np.array(v) for name, v in degradation.items()}, clean_surface)
    pipeline_logger.log_stage("EVALUATE", "SUCCESS", run_id,
                              {"measure": "occlusion", **study.mean_degradation()})
    return study


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class EvaluationReport:
    """Everything one `evaluate` run measures. `to_dict` is deterministic."""

    compactness_curve: Dict[str, List[float]] = field(default_factory=dict)
    generalization: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    specificity: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    per_vertex_error: Dict[str, np.ndarray] = field(default_factory=dict)
    landmark_errors: Dict[str, Dict[str, float]] = field(default_factory=dict)
    cumulative_error_curve: Dict[str, Tuple[np.ndarray, np.ndarray]] = field(default_factory=dict)
    extras: Dict = field(default_factory=dict)

    def to_dict(self):
        out = {
            "compactness_curve": {k: [float(x) for x in v] for k, v in self.compactness_curve.items()},
            "generalization_mm": {k: {"mean": m, "stddev": s} for k, (m, s) in self.generalization.items()},
            "specificity_mm": {k: {"mean": m, "stddev": s} for k, (m, s) in self.specificity.items()},
            "per_vertex_error_mm": {k: summary_stats(v) for k, v in self.per_vertex_error.items()},
            "landmark_errors_mm": {
                k: {"labels": v, "summary": summary_stats(list(v.values()))}
                for k, v in self.landmark_errors.items()
            },
            "cumulative_error_curve": {
                k: {"error_at_80_percent": float(t[np.searchsorted(f, 0.8)]),
                    "points": len(t)}
                for k, (t, f) in self.cumulative_error_curve.items()
            },
        }
        out.update(self.extras)
        return out

    def curves_frame(self):
        """Long-format table of every curve: curve, model, x, y."""
        rows = []
        for model, values in self.compactness_curve.items():
            rows.extend({"curve": "compactness", "model": model, "x": d + 1, "y": float(c)}
                        for d, c in enumerate(values))
        for model, (thresholds, fractions) in self.cumulative_error_curve.items():
            rows.extend({"curve": "cumulative_error", "model": model, "x": float(t), "y": float(f)}
                        for t, f in zip(thresholds, fractions))
        return pd.DataFrame(rows, columns=["curve", "model", "x", "y"])
