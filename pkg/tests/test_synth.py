"""Synthetic corpus and point-cloud corruptions."""

import numpy as np
import pytest

from shapespace.errors import EmptyPointCloudError
from shapespace.geometry import PointCloud
from shapespace.synth import (
    BumpFactor, OCCLUSION_PRESETS, SynthSpec, add_noise, bump_fields, densify_grid,
    generate_corpus, grid_index, load_corpus, occlude, occlusion_region, write_corpus,
)


def test_corpus_is_deterministic():
    spec = SynthSpec(base_dims=(5, 7), levels=1, T=6, noise_stddev=0.1, pose_jitter=0.05, seed=9)
    a = generate_corpus(spec)
    b = generate_corpus(spec)
    np.testing.assert_array_equal(a.training.shapes, b.training.shapes)
    np.testing.assert_array_equal(a.latents, b.latents)
    c = generate_corpus(SynthSpec(base_dims=(5, 7), levels=1, T=6, noise_stddev=0.1, pose_jitter=0.05, seed=10))
    assert not np.array_equal(a.training.shapes, c.training.shapes)


def test_labels_stratify_the_first_factor(corpus):
    lo, hi = corpus.spec.factors[0].amplitude
    mid = 0.5 * (lo + hi)
    labels = np.array(corpus.training.labels)
    assert list(labels[:4]) == ["A", "B", "A", "B"]
    assert np.all(corpus.latents[labels == "A", 0] <= mid)
    assert np.all(corpus.latents[labels == "B", 0] >= mid)


def test_landmarks_sit_on_their_vertices(corpus):
    for shape, lms in zip(corpus.training.shapes, corpus.landmarks):
        for label, idx in corpus.landmark_ids.items():
            np.testing.assert_array_equal(lms.position(label), shape[idx])


def test_mirrored_factor_is_symmetric():
    spec = SynthSpec(base_dims=(5, 7), levels=2, factors=(BumpFactor((0.35, 0.25), 12.0, (-8.0, 8.0), mirrored=True),))
    rows, cols = spec.hierarchy.dims()
    field = bump_fields(spec)[0].reshape(rows, cols)
    np.testing.assert_allclose(field, field[:, ::-1], atol=1e-12)
    assert field.max() > 0.9


def test_spec_validation():
    with pytest.raises(ValueError):
        SynthSpec(T=1)
    with pytest.raises(ValueError):
        SynthSpec(factors=(BumpFactor((0.5, 1.5), 10.0, (-1.0, 1.0)),))
    with pytest.raises(ValueError):
        SynthSpec(factors=(BumpFactor((0.5, 0.5), 10.0, (1.0, -1.0)),))
    spec = SynthSpec(factors=[{"center_uv": [0.5, 0.5], "radius": 10.0, "amplitude": [-1.0, 1.0]}])
    assert spec.factors[0] == BumpFactor((0.5, 0.5), 10.0, (-1.0, 1.0))


def test_corpus_files_round_trip(tmp_path, corpus):
    manifest = write_corpus(corpus, tmp_path / "corpus")
    meshes, landmark_sets, data = load_corpus(manifest)
    assert len(meshes) == corpus.training.T
    for mesh, shape in zip(meshes, corpus.training.shapes):
        np.testing.assert_allclose(mesh.vertices, shape, rtol=1e-6, atol=1e-6)
    assert landmark_sets[0].labels == corpus.landmarks[0].labels
    np.testing.assert_array_equal(np.array([e["latents"] for e in data["shapes"]]), corpus.latents)
    assert data["landmark_ids"] == corpus.landmark_ids


def test_densify_keeps_the_grid_vertices(corpus):
    rows, cols = corpus.hierarchy.dims()
    dense = densify_grid(corpus.training.shapes[0], (rows, cols), factor=3)
    assert len(dense) == (3 * (rows - 1) + 1) * (3 * (cols - 1) + 1)
    grid = dense.reshape(3 * (rows - 1) + 1, 3 * (cols - 1) + 1, 3)[::3, ::3]
    np.testing.assert_array_equal(grid.reshape(-1, 3), corpus.training.shapes[0])


def test_occlusion_removes_and_replaces(corpus):
    shape = corpus.training.shapes[0]
    cloud = PointCloud(shape)
    center, radius = occlusion_region("left_eye_hand", shape, corpus.hierarchy)
    np.testing.assert_array_equal(center, shape[grid_index(corpus.hierarchy, (0.35, 0.25))])
    removed = int((np.linalg.norm(shape - center, axis=1) < radius).sum())
    out = occlude(cloud, (center, radius), outliers=50, seed=1)
    assert out.m == cloud.m - removed + 50
    assert out.outlier_mask.sum() == 50
    blob = out.points[out.outlier_mask]
    assert np.all(np.linalg.norm(blob - (center + [0.0, 0.0, 0.5 * radius]), axis=1) <= 0.5 * radius + 1e-9)
    np.testing.assert_array_equal(occlude(cloud, (center, radius), 50, seed=1).points, out.points)
    assert out.metadata["occlusions"][0]["removed"] == removed
    with pytest.raises(EmptyPointCloudError):
        occlude(cloud, (center, 1e6))


def test_noise_and_outliers(corpus):
    cloud = PointCloud(corpus.training.shapes[0])
    noisy = add_noise(cloud, 0.5, outlier_fraction=0.1, seed=4)
    extra = int(round(0.1 * cloud.m))
    assert noisy.m == cloud.m + extra
    assert noisy.outlier_mask.sum() == extra
    moved = np.linalg.norm(noisy.points[:cloud.m] - cloud.points, axis=1)
    assert 0.3 < moved.mean() < 1.2
    with pytest.raises(ValueError):
        add_noise(cloud, -1.0)
    assert set(OCCLUSION_PRESETS) == {"left_eye_hand", "mouth_hand", "hair"}
