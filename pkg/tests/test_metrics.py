import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sketch2mesh.geometry import VoxelGrid
from sketch2mesh.metrics import (chamfer_brute_force, chamfer_mesh, chamfer_point_cloud, nearest_sq_dist,
                                 voxel_iou)
from sketch2mesh.shapes import Box, Sphere

coords = st.floats(-1, 1, allow_nan=False, width=64)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=coords),
       arrays(np.float64, st.tuples(st.integers(1, 30), st.just(3)), elements=coords))
def test_tree_chamfer_equals_brute_force(a, b):
    assert chamfer_point_cloud(a, b) == chamfer_brute_force(a, b)
    assert chamfer_point_cloud(a, b) == chamfer_point_cloud(b, a)


def test_duplicate_and_grid_points_tie_exactly():
    g = np.stack(np.meshgrid(*[np.arange(4.0)] * 3, indexing="ij"), -1).reshape(-1, 3) / 4
    q = g[:20] + 0.125                       # equidistant from several grid points
    assert chamfer_point_cloud(q, g) == chamfer_brute_force(q, g)


def test_identity_is_zero_and_shift_is_exact():
    a = np.random.default_rng(0).random((50, 3))
    assert chamfer_point_cloud(a, a) == 0.0
    # a single point against a translated copy
    assert chamfer_point_cloud([[0, 0, 0]], [[0.1, 0, 0]]) == pytest.approx(0.02, abs=1e-15)
    assert chamfer_point_cloud([[0, 0, 0]], [[0.3, 0.4, 0]]) == pytest.approx(0.5, abs=1e-15)


def test_nearest_sq_dist_single_reference():
    d = nearest_sq_dist(np.array([[1.0, 0, 0], [0, 2.0, 0]]), np.zeros((1, 3)))
    assert d.tolist() == [1.0, 4.0]


def test_empty_cloud_raises():
    with pytest.raises(ValueError):
        chamfer_point_cloud(np.zeros((0, 3)), np.zeros((3, 3)))


def test_mesh_chamfer_report(tmp_path):
    report = chamfer_mesh(Sphere(radius=0.3).mesh(), Sphere(radius=0.3).mesh(), samples=500, seed=2)
    assert report.value == 0.0 and report.samples == 500 and report.seed == 2
    report.write_record(tmp_path / "r.json")
    rec = json.loads((tmp_path / "r.json").read_text())
    assert rec["metric"] == "mesh_chamfer" and "formula" in rec and "units" in rec
    shifted = chamfer_mesh(Box().mesh(), Box().mesh().transformed(offset=(0.01, 0, 0)), 4000, 0).value
    assert 0 < shifted < 2 * 0.01 ** 2 + 1e-4


def test_iou_hand_counts():
    a = np.zeros((2, 2, 2), bool)
    b = np.zeros((2, 2, 2), bool)
    a[0, 0, 0] = a[0, 0, 1] = a[1, 1, 1] = True
    b[0, 0, 1] = b[1, 1, 1] = b[1, 0, 0] = b[0, 1, 0] = True
    assert voxel_iou(a, b) == 2 / 5
    assert voxel_iou(VoxelGrid(a), VoxelGrid(a)) == 1.0
    assert voxel_iou(a, ~a) == 0.0
    assert voxel_iou(np.zeros((3, 3, 3)), np.zeros((3, 3, 3))) == 1.0


def test_iou_shape_mismatch():
    with pytest.raises(ValueError):
        voxel_iou(np.zeros((2, 2, 2)), np.zeros((3, 3, 3)))
