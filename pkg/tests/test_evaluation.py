"""Model-quality and fitting-quality measures."""

import numpy as np
import pytest

from shapespace.errors import DimensionMismatchError, InsufficientDataError, InsufficientLandmarksError
from shapespace.evaluation import (
    EvaluationReport, compactness, compactness_curve, cross_validate_10fold, cumulative_error_curve,
    error_at_fraction, fold_assignment, generalization, landmark_distance, map_jobs,
    model_quality_curves, occlusion_study, specificity, surface_distance,
)
from shapespace.fitting import FitConfig
from shapespace.geometry import LandmarkSet, PointCloud
from shapespace.models import TrainingSet, global_trainer, local_trainer, train_global, train_local
from shapespace.synth import BumpFactor, SynthSpec, densify_grid, generate_corpus, grid_index


def test_compactness(global_model, local_model):
    curve = compactness_curve(global_model)
    assert np.all(np.diff(curve) >= -1e-15)
    assert curve[-1] == pytest.approx(1.0)
    assert compactness(global_model, 1) == pytest.approx(
        global_model.spectrum[0] / global_model.spectrum.sum())
    assert compactness(local_model, 3) == 1.0
    with pytest.raises(ValueError):
        compactness(global_model, 0)


def test_cumulative_error_curve():
    thresholds, fractions = cumulative_error_curve([0.05, 0.15, 0.25])
    np.testing.assert_allclose(thresholds, [0.0, 0.1, 0.2, 0.3])
    np.testing.assert_allclose(fractions, [0.0, 1 / 3, 2 / 3, 1.0])
    assert error_at_fraction([5.0, 1.0, 4.0, 2.0, 3.0], 0.8) == 4.0
    with pytest.raises(ValueError):
        cumulative_error_curve([])


def test_generalization(aligned, corpus):
    mean, _ = generalization(aligned, local_trainer(corpus.hierarchy))
    assert mean == pytest.approx(0.0, abs=1e-8)
    g_mean, g_std = generalization(aligned, global_trainer(3))
    assert g_mean > 0 and g_std >= 0
    with pytest.raises(InsufficientDataError):
        generalization(aligned.subset([0, 1]), global_trainer(1))


def test_specificity_is_seeded(aligned, global_model):
    a = specificity(global_model, aligned, samples=30, seed=5)
    b = specificity(global_model, aligned, samples=30, seed=5)
    assert a == b
    assert a[0] > 0


def test_specificity_rejects_bad_input(aligned, global_model, caplog):
    with pytest.raises(ValueError):
        specificity(global_model, aligned, samples=0)
    with pytest.raises(DimensionMismatchError):
        specificity(global_model, TrainingSet(aligned.shapes[:, :-1]), samples=5, run_id="short")
    assert any("\"short\"" in r.message and "FAILURE" in r.message for r in caplog.records)


def test_quality_curves(aligned):
    rows = model_quality_curves(aligned, [1, 3], samples=10)
    assert [row["d"] for row in rows] == [1, 3]
    assert rows[0]["compactness"] < rows[1]["compactness"] <= 1.0


def test_landmark_and_surface_distance(global_model):
    mean = global_model.mean
    lms = LandmarkSet.from_positions({"center": mean[global_model.landmark_ids["center"]] + [3.0, 4.0, 0.0],
                                      "mid_top": None})
    assert landmark_distance(mean, global_model.landmark_ids, lms) == {"center": pytest.approx(5.0)}
    with pytest.raises(InsufficientLandmarksError):
        landmark_distance(mean, global_model.landmark_ids, LandmarkSet.from_positions({"mid_top": None}))
    np.testing.assert_array_equal(surface_distance(mean, PointCloud(mean)), 0.0)


def test_folds_balance_labels():
    shapes = np.random.default_rng(0).normal(size=(20, 4, 3))
    data = TrainingSet(shapes, labels=["A" if t % 2 == 0 else "B" for t in range(20)], aligned=True)
    folds = fold_assignment(data, folds=10, seed=3)
    for fold in range(10):
        members = np.flatnonzero(folds == fold)
        assert sorted(data.labels[i] for i in members) == ["A", "B"]
    np.testing.assert_array_equal(folds, fold_assignment(data, folds=10, seed=3))
    with pytest.raises(InsufficientDataError):
        fold_assignment(data.subset(range(5)), folds=10)


def test_folds_keep_subjects_together():
    data = TrainingSet(np.zeros((12, 4, 3)), subject_ids=[f"s{t // 2}" for t in range(12)], aligned=True)
    folds = fold_assignment(data, folds=3)
    for t in range(0, 12, 2):
        assert folds[t] == folds[t + 1]


def test_cross_validation(aligned, corpus):
    trainers = {"global": global_trainer(3, corpus.landmark_ids),
                "local": local_trainer(corpus.hierarchy, corpus.landmark_ids)}
    cv = cross_validate_10fold(aligned, trainers, FitConfig(samples_per_parameter=4, max_iterations=20), jobs=2)
    for name in trainers:
        assert cv.errors[name].shape == (aligned.T * aligned.n,)
        assert set(cv.subject_errors[name]) == set(aligned.subject_ids)
    report = cv.to_dict()
    assert report["models"]["global"]["error_at_80_percent"] >= 0
    thresholds, fractions = cv.curves()["local"]
    assert fractions[-1] == 1.0


def test_map_jobs_keeps_order():
    assert map_jobs(lambda x: x * x, list(range(20)), 4) == [x * x for x in range(20)]
    assert map_jobs(lambda x: -x, [1, 2], 1) == [-1, -2]


def test_report_is_deterministic(global_model):
    report = EvaluationReport()
    report.compactness_curve["global"] = compactness_curve(global_model).tolist()
    report.per_vertex_error["global"] = np.linspace(0.0, 1.0, 5)
    first = report.to_dict()
    assert first == report.to_dict()
    frame = report.curves_frame()
    assert len(frame) > 0


@pytest.mark.slow
def test_occlusion_damage_stays_local_for_the_local_model():
    factors = (
        BumpFactor((0.35, 0.25), 12.0, (-8.0, 8.0), mirrored=True),
        BumpFactor((0.5, 0.5), 14.0, (-8.0, 8.0)),
        BumpFactor((0.8, 0.5), 16.0, (-7.0, 7.0)),
        BumpFactor((0.15, 0.5), 20.0, (-5.0, 5.0)),
        BumpFactor((0.6, 0.15), 10.0, (-5.0, 5.0)),
    )
    spec = SynthSpec(base_dims=(5, 7), levels=2, T=70, factors=factors, noise_stddev=0.2, seed=11)
    corpus = generate_corpus(spec)
    h = corpus.hierarchy
    data = corpus.training.gpa_aligned()
    train = data.subset(range(50))
    models = {"global": train_global(train, 3, corpus.landmark_ids), "local": train_local(train, h)}
    targets = [(truth, PointCloud(densify_grid(truth, h.dims()))) for truth in data.shapes[50:]]
    hole = grid_index(h, (0.35, 0.25))
    watch = grid_index(h, (0.35, 0.75))
    study = occlusion_study(
        models, targets,
        region=lambda truth: (truth[hole], 25.0),
        control=lambda truth: (truth[watch], 25.0),
        fit_config=FitConfig(c=3.0, samples_per_parameter=16, max_iterations=50),
        outliers=200,
    )
    damage = study.mean_degradation()
    assert damage["local"] < damage["global"]
    surface = study.clean_surface_stats()
    assert surface["local"]["median"] < surface["global"]["median"]
    assert len(targets) == 20
    assert study.to_dict()["trials"] >= 20
