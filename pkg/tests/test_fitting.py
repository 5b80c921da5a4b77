"""Initial alignment, energies and both fitting procedures."""

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

from shapespace.alignment import SimilarityTransform
from shapespace.errors import ConfigValidationError, InsufficientLandmarksError
from shapespace.fitting import (
    FitConfig, _pick, energy, energy_gradient, fit_global, fit_local, initial_align, level_sweep,
    sample_lattice,
)
from shapespace.geometry import LandmarkSet, NearestNeighborIndex, PointCloud
from shapespace.models import LocalWaveletModel, generate
from shapespace.synth import SynthSpec, base_patch, densify_grid
from shapespace.wavelet import forward


def test_fit_config_validation():
    with pytest.raises(ConfigValidationError):
        FitConfig(tau=0.0)
    with pytest.raises(ConfigValidationError):
        FitConfig(c=-1.0)
    with pytest.raises(ConfigValidationError):
        FitConfig(samples_per_parameter=1)
    with pytest.raises(ConfigValidationError):
        FitConfig(max_level=-1)
    assert FitConfig().to_dict()["tau"] == 10.0


def test_sample_lattice_is_symmetric():
    values = sample_lattice(2.0, 9)
    np.testing.assert_array_equal(values, -values[::-1])
    assert values[0] == -2.0 and values[-1] == 2.0


def test_pick_tie_rules():
    # equal energies: the value nearest zero, then the smaller value
    assert _pick(np.array([-1.0, 0.0, 1.0]), np.array([5.0, 5.0, 5.0]), 0.5, 6.0) == 1
    assert _pick(np.array([-1.0, 1.0]), np.array([5.0, 5.0]), 0.5, 6.0) == 0
    # the incumbent keeps its value unless something is strictly better
    assert _pick(np.array([-1.0, 1.0]), np.array([5.0, 5.0]), 0.0, 5.0) is None
    assert _pick(np.array([-1.0, 1.0]), np.array([4.0, 5.0]), 0.0, 5.0) == 0


def test_initial_align_recovers_pose(global_model):
    truth = SimilarityTransform(Rotation.from_rotvec([0.1, -0.2, 0.3]).as_matrix(), [4.0, 5.0, -6.0], 1.1)
    target = global_model.landmarks().transformed(truth)
    tf = initial_align(global_model, target)
    np.testing.assert_allclose(tf.as_matrix(), truth.as_matrix(), atol=1e-9)


def test_initial_align_of_identical_landmarks_is_identity(global_model):
    tf = initial_align(global_model, global_model.landmarks())
    np.testing.assert_allclose(tf.as_matrix(), np.eye(4), atol=1e-9)
    assert tf.residual < 1e-9


def test_initial_align_residual_stays_within_jitter(global_model, rng):
    truth = SimilarityTransform(Rotation.from_rotvec([-0.2, 0.1, 0.05]).as_matrix(), [10.0, -3.0, 2.0], 0.95)
    clean = global_model.landmarks().transformed(truth)
    for _ in range(20):
        positions = {}
        shifts = []
        for label in clean.labels:
            direction = rng.normal(size=3)
            shift = rng.uniform(0.0, 10.0) * direction / np.linalg.norm(direction)
            positions[label] = clean.position(label) + shift
            shifts.append(shift)
        tf = initial_align(global_model, LandmarkSet.from_positions(positions))
        jitter_rms = np.sqrt((np.array(shifts) ** 2).sum(axis=1).mean())
        assert tf.residual <= jitter_rms + 1e-9
        assert tf.residual <= 10.0


def test_initial_align_needs_three_landmarks(global_model):
    lms = global_model.landmarks()
    few = LandmarkSet.from_positions({label: lms.position(label) for label in lms.labels[:2]})
    with pytest.raises(InsufficientLandmarksError):
        initial_align(global_model, few)


def _target(model, params, factor=2):
    return PointCloud(densify_grid(generate(model, params), model.grid_dims, factor))


def test_zero_box_returns_the_mean(global_model, corpus):
    cloud = PointCloud(corpus.training.shapes[0])
    result = fit_global(global_model, cloud, FitConfig(c=0.0))
    np.testing.assert_array_equal(result.vertices, global_model.mean)
    np.testing.assert_array_equal(result.params.values, 0.0)
    assert result.nn_queries == global_model.n


def test_global_fit_moves_towards_target(global_model, rng):
    truth = 0.5 * global_model.stddevs * rng.choice([-1.0, 1.0], size=global_model.d)
    target = generate(global_model, truth)
    result = fit_global(global_model, _target(global_model, truth), FitConfig(c=2.0))
    before = np.linalg.norm(global_model.mean - target, axis=1).mean()
    after = np.linalg.norm(result.vertices - target, axis=1).mean()
    assert after < 0.5 * before
    assert np.all(np.abs(result.params.values) <= 2.0 * global_model.stddevs)
    assert result.nn_queries == global_model.n * (1 + result.iterations)
    trace = np.array(result.energy_trace)
    assert np.all(np.diff(trace) <= 1e-9 * trace[0])
    assert result.final_energy == trace[-1]


def _assignment(model, params, index, tau2):
    vertices = model.generate(params)
    idx, _ = index.query(vertices)
    d2 = ((vertices - index.points[idx]) ** 2).sum(axis=1)
    return idx, d2 < tau2


def _stencil_is_stable(model, s, index, h, tau2):
    """True when no NN assignment or truncation flag changes across s +- h e_i."""
    idx, mask = _assignment(model, s, index, tau2)
    for e in np.eye(model.d):
        for step in (h * e, -h * e):
            other_idx, other_mask = _assignment(model, s + step, index, tau2)
            if not (np.array_equal(idx, other_idx) and np.array_equal(mask, other_mask)):
                return False
    return True


def test_gradient_matches_finite_differences(corpus, aligned, rng):
    from shapespace.models import train_global
    model = train_global(aligned, 10, corpus.landmark_ids)
    truth = 0.5 * model.stddevs * rng.choice([-1.0, 1.0], size=model.d)
    index = NearestNeighborIndex(_target(model, truth))
    tau = 10.0
    h = 1e-5
    checked = 0
    for _ in range(500):
        s = truth + 0.5 * model.stddevs * rng.normal(size=model.d)
        # the energy is only differentiable where the stencil keeps one assignment
        if not _stencil_is_stable(model, s, index, h, tau * tau):
            continue
        grad = energy_gradient(model, s, index, tau)
        fd = np.array([(energy(model, s + h * e, index, tau) - energy(model, s - h * e, index, tau)) / (2 * h)
                       for e in np.eye(model.d)])
        np.testing.assert_allclose(fd, grad, rtol=1e-5, atol=1e-5 * np.linalg.norm(grad))
        checked += 1
        if checked == 50:
            break
    assert checked == 50


def test_gradient_is_global_only(local_model, corpus):
    with pytest.raises(TypeError):
        energy_gradient(local_model, local_model.zero_parameters(), PointCloud(corpus.training.shapes[0]))


def _three_parameter_model():
    """Local model over a 17x25 grid where only three parameters can move."""
    spec = SynthSpec(base_dims=(5, 7), levels=2)
    h = spec.hierarchy
    base, _ = base_patch(spec)
    stddevs = np.zeros((h.n, 3))
    # level 0 at (0, 0), level 1 at (0, 22), level 2 at (15, 23): disjoint supports
    cols = h.dims()[1]
    picks = [h.inverse_order[r * cols + c] for r, c in ((0, 0), (0, 22), (15, 23))]
    for k, j in zip(picks, (0, 1, 2)):
        stddevs[k, j] = 2.0
    rotations = np.broadcast_to(np.eye(3), (h.n, 3, 3)).copy()
    model = LocalWaveletModel(h, forward(base, h).coeffs, rotations, stddevs)
    return model, picks


def test_local_fit_recovers_lattice_parameters():
    model, picks = _three_parameter_model()
    truth = np.zeros((model.n, 3))
    for k, j, value in zip(picks, (0, 1, 2), (1.0, -1.5, 0.5)):
        truth[k, j] = value
    target = PointCloud(generate(model, truth))
    config = FitConfig(c=1.0, samples_per_parameter=9)
    result = fit_local(model, target, config)
    np.testing.assert_array_equal(result.params.values, truth)
    np.testing.assert_array_equal(result.vertices, target.points)
    assert result.final_energy == 0.0
    assert result.skipped_parameters == 3 * model.n - 3
    assert result.energy_evaluations == 3 * 9


def test_local_fit_stops_at_max_level():
    model, picks = _three_parameter_model()
    truth = np.zeros((model.n, 3))
    truth[picks[0], 0] = 1.0
    truth[picks[2], 2] = 0.5
    result = fit_local(model, PointCloud(generate(model, truth)), FitConfig(c=1.0, samples_per_parameter=9,
                                                                            max_level=0))
    assert result.params.values[picks[0], 0] == 1.0
    assert result.params.values[picks[2], 2] == 0.0
    assert result.energy_evaluations == 9
    with pytest.raises(ConfigValidationError):
        fit_local(model, PointCloud(generate(model, truth)), FitConfig(max_level=3))


def test_local_fit_on_noisy_target(local_model, aligned, rng):
    cloud = PointCloud(aligned.shapes[0] + rng.normal(0.0, 0.3, size=aligned.shapes[0].shape))
    config = FitConfig(c=2.0, samples_per_parameter=8)
    result = fit_local(local_model, cloud, config)
    assert np.all(np.abs(result.params.values) <= 2.0 * local_model.stddevs + 1e-12)
    trace = np.array(result.energy_trace)
    assert np.all(np.diff(trace) <= 1e-9 * trace[0])
    assert result.final_energy <= trace[0]
    skipped = int((local_model.stddevs == 0).sum())
    assert result.skipped_parameters == skipped
    assert result.energy_evaluations == 8 * (3 * local_model.n - skipped)
    assert len(trace) == 1 + 3 * local_model.n - skipped


def test_level_sweep_trades_time_for_accuracy(local_model, aligned):
    cloud = PointCloud(densify_grid(aligned.shapes[1], local_model.grid_dims))
    config = FitConfig(c=2.0, samples_per_parameter=6)
    rows = level_sweep(local_model, cloud, config)
    h = local_model.hierarchy
    assert [row["max_level"] for row in rows] == list(range(h.levels + 1))
    zero = local_model.stddevs == 0
    for row in rows:
        upto = h.count_up_to(row["max_level"])
        assert row["energy_evaluations"] == 6 * (3 * upto - int(zero[:upto].sum()))
    energies = [row["final_energy"] for row in rows]
    for coarse, fine in zip(energies, energies[1:]):
        assert fine <= coarse * (1 + 1e-9) + 1e-9


def test_local_zero_box_returns_the_mean(local_model, corpus):
    result = fit_local(local_model, PointCloud(corpus.training.shapes[0]), FitConfig(c=0.0))
    np.testing.assert_array_equal(result.vertices, local_model.mean_shape)
    np.testing.assert_array_equal(result.params.values, 0.0)
    assert result.skipped_parameters == 3 * local_model.n
    assert result.energy_evaluations == 0


def test_global_fit_recovers_dense_self_consistent_targets(global_model, rng):
    for _ in range(5):
        truth = np.clip(0.7 * global_model.stddevs * rng.normal(size=global_model.d),
                        -2.0 * global_model.stddevs, 2.0 * global_model.stddevs)
        cloud = _target(global_model, truth, factor=3)
        assert cloud.m >= 4 * global_model.n
        config = FitConfig(c=3.0, max_iterations=200, tolerance=1e-12)
        result = fit_global(global_model, cloud, config)
        _, dist = NearestNeighborIndex(cloud).query(result.vertices)
        assert np.sqrt((dist ** 2).mean()) < 0.5


@pytest.mark.slow
def test_randomized_fits_stay_inside_the_box(global_model, local_model, rng):
    """Targets are drawn well outside the box so the bounds actually bind."""
    violations = 0
    for trial in range(100):
        model = global_model if trial % 2 == 0 else local_model
        c = float(rng.uniform(0.5, 3.0))
        if model is global_model:
            params = 4.0 * model.stddevs * rng.normal(size=model.d)
            config = FitConfig(c=c, max_iterations=30)
            fit = fit_global
        else:
            params = 4.0 * model.stddevs * rng.normal(size=(model.n, 3))
            config = FitConfig(c=c, samples_per_parameter=4, max_level=1)
            fit = fit_local
        shape = generate(model, params)
        cloud = PointCloud(shape + rng.normal(0.0, 0.5, size=shape.shape))
        result = fit(model, cloud, config)
        violations += int((np.abs(result.params.values) > c * model.stddevs).sum())
    assert violations == 0
