"""Containers and nearest-neighbor search."""

import itertools

import numpy as np
import pytest

from shapespace.errors import DimensionMismatchError, EmptyPointCloudError, MeshFormatError
from shapespace.geometry import (
    LandmarkSet, NearestNeighborIndex, PointCloud, QuadMesh, TriangleMesh, as_points,
    brute_force_nearest, grid_faces,
)


def test_as_points_rejects_wrong_shape():
    with pytest.raises(DimensionMismatchError):
        as_points(np.zeros((4, 2)))
    with pytest.raises(ValueError):
        as_points([[0.0, np.nan, 1.0]])
    assert as_points([1, 2, 3]).shape == (1, 3)


def test_empty_point_cloud_is_an_error():
    with pytest.raises(EmptyPointCloudError):
        PointCloud(np.zeros((0, 3)))
    with pytest.raises(EmptyPointCloudError):
        NearestNeighborIndex(np.zeros((0, 3)))


def test_mesh_rejects_bad_faces():
    verts = np.eye(3)
    with pytest.raises(MeshFormatError):
        TriangleMesh(verts, [[0, 1, 3]])
    with pytest.raises(MeshFormatError):
        TriangleMesh(verts, [[0, 1, 1]])


def test_grid_mesh_dims_must_match():
    with pytest.raises(DimensionMismatchError):
        QuadMesh(np.zeros((6, 3)), grid_faces(2, 3), grid_dims=(3, 3))
    mesh = QuadMesh.from_grid(np.arange(18.0).reshape(6, 3), 2, 3)
    assert mesh.grid().shape == (2, 3, 3)
    assert len(mesh.triangulated().faces) == 2 * len(mesh.faces)


def test_landmark_set_labels():
    lms = LandmarkSet.from_positions({"a": [0, 0, 0], "b": None, "c": [1, 2, 3]})
    assert lms.labels == ["a", "b", "c"]
    assert lms.present_labels() == ["a", "c"]
    with pytest.raises(KeyError):
        lms.position("b")
    with pytest.raises(ValueError):
        lms.add("a", [1, 1, 1])
    other = LandmarkSet.from_positions({"c": [0, 0, 0], "a": [0, 0, 0], "b": [0, 0, 0]})
    assert lms.common_labels(other) == ["a", "c"]
    assert lms.subset(["c", "missing"]).labels == ["c"]


def test_nearest_matches_brute_force(rng):
    points = rng.normal(size=(500, 3)) * 20.0
    queries = rng.normal(size=(200, 3)) * 25.0
    index = NearestNeighborIndex(PointCloud(points))
    idx, dist = index.query(queries)
    ref_idx, ref_dist = brute_force_nearest(points, queries)
    np.testing.assert_array_equal(idx, ref_idx)
    np.testing.assert_allclose(dist, ref_dist, rtol=0, atol=1e-12)


def _sphere_of_ties():
    """Thirty integer points, all exactly 3 from the origin."""
    axis = [tuple(s * 3 * np.eye(3)[i]) for i in range(3) for s in (1, -1)]
    diag = set()
    for base in itertools.permutations((1, 2, 2)):
        for signs in itertools.product((1, -1), repeat=3):
            diag.add(tuple(float(b * s) for b, s in zip(base, signs)))
    pts = np.array(axis + sorted(diag), dtype=float)
    assert len(pts) == 30
    return pts


def test_exact_ties_pick_smallest_index(rng):
    pts = _sphere_of_ties()
    pts = pts[rng.permutation(len(pts))]
    index = NearestNeighborIndex(pts)
    i, d = index.nearest([0.0, 0.0, 0.0])
    assert i == 0
    assert d == 3.0
    ref_idx, _ = brute_force_nearest(pts, np.zeros((1, 3)))
    assert i == ref_idx[0]


def test_index_is_read_only():
    index = NearestNeighborIndex(np.eye(3))
    with pytest.raises(ValueError):
        index.points[0, 0] = 5.0
    assert index.query(np.zeros((0, 3)))[0].size == 0
