import logging

import numpy as np
import pytest

from sketch2mesh.geometry import VoxelGrid, voxelize_predicate
from sketch2mesh.implicit import (ImplicitDecoder, ImplicitDecoderConfig, ImplicitTrainConfig, PointValueSet,
                                  ViewEncoder, ViewEncoderConfig, ViewTrainConfig, VoxelEncoder,
                                  VoxelEncoderConfig, boundary_mask, evaluate_grid, extract_mesh, grid_at,
                                  implicit_forward, implicit_loss, pretrain_autoencoder, resample_grid,
                                  sample_point_values, train_singleview_encoder)
from sketch2mesh.nn import Graph
from sketch2mesh.shapes import Box, Sphere


def brute_force_boundary(occ):
    n = occ.shape[0]
    out = np.zeros_like(occ)
    for i, j, k in np.ndindex(occ.shape):
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = i + d[0], j + d[1], k + d[2]
            if 0 <= a < n and 0 <= b < n and 0 <= c < n and occ[a, b, c] != occ[i, j, k]:
                out[i, j, k] = True
    return out


# ---------------------------------------------------------------- point-value sampling

def test_point_values_at_closed_form_centers():
    grid = voxelize_predicate(Sphere(radius=0.3).contains, 8)
    pvs = sample_point_values(grid)
    i, j, k = np.unravel_index(np.arange(512), (8, 8, 8))
    assert np.array_equal(pvs.points, np.stack([(i + 0.5) / 8, (j + 0.5) / 8, (k + 0.5) / 8], axis=1))
    assert np.array_equal(pvs.labels, grid.occupancy.ravel().astype(float))


def test_boundary_weights_match_brute_force_on_box():
    grid = voxelize_predicate(Box((0.2, 0.3, 0.1), (0.7, 0.9, 0.6)).contains, 10)
    pvs = sample_point_values(grid, w_surf=4.0)
    expect = np.where(brute_force_boundary(grid.occupancy), 4.0, 1.0).ravel()
    assert np.array_equal(pvs.weights, expect)
    assert (pvs.weights == 4.0).sum() > 0


def test_empty_grid_and_inverted_labels():
    empty = sample_point_values(VoxelGrid(np.zeros((4, 4, 4), bool)))
    assert np.all(empty.labels == 0) and np.all(empty.weights == 1)
    grid = VoxelGrid(np.random.default_rng(0).random((5, 5, 5)) > 0.5)
    a, b = sample_point_values(grid), sample_point_values(grid, invert_labels=True)
    assert np.array_equal(a.labels, 1 - b.labels) and np.array_equal(a.weights, b.weights)


def test_point_value_set_validation():
    with pytest.raises(ValueError):
        PointValueSet(np.zeros((2, 3)), [0, 1], [1.0, 0.0], 2)
    with pytest.raises(ValueError):
        sample_point_values(VoxelGrid(np.zeros((2, 2, 2), bool)), w_surf=0)


def test_resampling_keeps_nearest_voxels():
    grid = voxelize_predicate(Sphere(radius=0.3).contains, 16)
    assert resample_grid(grid, 16) is grid
    down = resample_grid(grid, 8)
    assert np.array_equal(down.occupancy, grid.occupancy[1::2, 1::2, 1::2])
    assert grid_at({16: grid}, 16) is grid and grid_at({16: grid}, 8).n == 8


# ---------------------------------------------------------------- loss

def _loss(pred, labels, weights):
    return implicit_loss(Graph().input(np.asarray(pred, dtype=np.float64)), labels, weights).item()


def test_loss_hand_values():
    assert abs(_loss([0.2, 0.6], [0, 1], [1, 3]) - 0.13) < 1e-12
    rng = np.random.default_rng(1)
    labels = (rng.random(50) > 0.5).astype(float)
    assert _loss(np.full(50, 0.5), labels, rng.uniform(0.1, 5, 50)) == 0.25
    assert _loss(labels, labels, rng.uniform(0.1, 5, 50)) == 0.0


def test_loss_is_invariant_to_weight_scale():
    rng = np.random.default_rng(2)
    pred, labels, w = rng.random(200), (rng.random(200) > 0.5).astype(float), rng.uniform(0.5, 4, 200)
    base = _loss(pred, labels, w)
    for c in (2.0, 0.25, 1024.0):
        assert _loss(pred, labels, c * w) == base
    for c in rng.uniform(0.01, 100, 20):
        assert abs(_loss(pred, labels, c * w) - base) <= 1e-15 * base


def test_loss_bounds_and_empty_input():
    rng = np.random.default_rng(3)
    for _ in range(20):
        v = _loss(rng.random(30), (rng.random(30) > 0.5).astype(float), rng.uniform(0.1, 4, 30))
        assert 0 <= v < 1
    with pytest.raises(ValueError):
        _loss(np.zeros(0), np.zeros(0), np.zeros(0))


# ---------------------------------------------------------------- decoder

def test_decoder_widths_and_ablation_parameter_counts():
    five = ImplicitDecoder(ImplicitDecoderConfig(5))
    six = ImplicitDecoder(ImplicitDecoderConfig(6))
    assert five.config.widths == (131, 512, 512, 256, 128, 1)
    assert six.config.widths == (131, 512, 512, 512, 256, 128, 1)
    assert (five.num_layers, six.num_layers) == (5, 6)
    assert six.num_parameters() - five.num_parameters() == 512 * 512 + 512
    with pytest.raises(ValueError):
        ImplicitDecoderConfig(5, hidden=(8, 8))


def test_forward_matches_batched_numpy_path_and_is_order_free():
    dec = ImplicitDecoder(ImplicitDecoderConfig(5, hidden=(32, 32, 16, 8), seed=1))
    rng = np.random.default_rng(4)
    z, pts = rng.standard_normal(128), rng.random((1000, 3))
    batch = implicit_forward(dec, z, pts)
    single = np.concatenate([implicit_forward(dec, z, p[None]) for p in pts])
    assert np.array_equal(batch, single)
    assert np.all((batch > 0) & (batch < 1))
    g = Graph(dec.store, train=False)
    tape = dec.forward(g, g.constant(z[None]), pts[None]).data[0]
    np.testing.assert_allclose(tape, batch, rtol=1e-12)


def test_forward_clamps_points_with_warning(caplog):
    dec = ImplicitDecoder(ImplicitDecoderConfig(3, hidden=(8, 8)))
    z = np.zeros(128)
    with caplog.at_level(logging.WARNING):
        out = implicit_forward(dec, z, [[1.5, -0.2, 0.5]])
    assert "clamping" in caplog.text
    assert out[0] == implicit_forward(dec, z, [[1.0, 0.0, 0.5]])[0]


def test_forward_rejects_wrong_latent():
    dec = ImplicitDecoder(ImplicitDecoderConfig(3, hidden=(8, 8)))
    with pytest.raises(ValueError):
        implicit_forward(dec, np.zeros(64), np.zeros((1, 3)))


def test_untrained_field_is_finite_and_open():
    dec = ImplicitDecoder()
    field = evaluate_grid(dec, np.random.default_rng(5).standard_normal(128), 8)
    assert field.shape == (8, 8, 8) and np.all((field > 0) & (field < 1))
    with pytest.raises(ValueError):
        evaluate_grid(dec, np.zeros(128), 1)


def test_extract_mesh_from_constant_field_is_empty(caplog):
    dec = ImplicitDecoder(ImplicitDecoderConfig(3, hidden=(4, 4)))
    for k in dec.store.params:
        dec.store.params[k][...] = 0.0
    dec.store.params["dec.fc2.b"][...] = -5.0        # sigmoid(-5) everywhere
    with caplog.at_level(logging.WARNING):
        mesh = extract_mesh(dec, np.zeros(128), 8)
    assert mesh.is_empty and mesh.metadata == {"resolution": 8, "threshold": 0.5}


# ---------------------------------------------------------------- encoders and training

def test_voxel_encoder_config_and_shape():
    with pytest.raises(ValueError):
        VoxelEncoderConfig(input_resolution=16, channels=(8, 8, 8, 8))
    enc = VoxelEncoder(VoxelEncoderConfig(input_resolution=8, channels=(4, 8)))
    assert enc.encode(np.zeros((3, 8, 8, 8))).shape == (3, 128)


def test_curriculum_schedule():
    cfg = ImplicitTrainConfig(resolutions=(16, 32), steps=(3, 2))
    assert [cfg.resolution_at(s) for s in range(6)] == [16, 16, 16, 32, 32, 32]
    with pytest.raises(ValueError):
        ImplicitTrainConfig(resolutions=(16,), steps=(1, 2))


def test_lr_anneals_from_base_to_floor():
    cfg = ImplicitTrainConfig(resolutions=(16, 32), steps=(30, 20), lr=2e-4, lr_floor=0.1)
    lrs = np.array([cfg.lr_at(s) for s in range(cfg.total_steps)])
    assert lrs[0] == 2e-4 and lrs[-1] == pytest.approx(2e-5, rel=1e-12)
    assert (np.diff(lrs) < 0).all()
    flat = ImplicitTrainConfig(lr_floor=1.0)
    assert {flat.lr_at(s) for s in range(0, flat.total_steps, 7)} == {flat.lr}
    with pytest.raises(ValueError):
        ImplicitTrainConfig(lr_floor=1.5)


def test_autoencoder_separates_two_shapes_and_resumes():
    shapes = [voxelize_predicate(Sphere(radius=0.3).contains, 8),
              voxelize_predicate(Box((0.2, 0.2, 0.3), (0.8, 0.6, 0.7)).contains, 8)]
    cfg = ImplicitTrainConfig(resolutions=(8,), steps=(20,), lr=1e-3)

    def models():
        return (VoxelEncoder(VoxelEncoderConfig(input_resolution=8, channels=(4, 8))),
                ImplicitDecoder(ImplicitDecoderConfig(3, hidden=(32, 16))))

    enc, dec = models()
    full = pretrain_autoencoder(shapes, enc, dec, cfg)
    assert np.linalg.norm(full.latents[0] - full.latents[1]) > 1e-3
    assert full.trace[-1]["loss"] < full.trace[0]["loss"]
    enc2, dec2 = models()
    half = pretrain_autoencoder(shapes, enc2, dec2, cfg, stop_step=10)
    rest = pretrain_autoencoder(shapes, enc2, dec2, cfg, start_step=10, trace=half.trace)
    assert np.array_equal(rest.latents, full.latents)
    assert [t["loss"] for t in rest.trace] == [t["loss"] for t in full.trace]


def test_view_encoder_fits_latents_and_leaves_decoder_alone():
    rng = np.random.default_rng(0)
    images, targets = rng.random((4, 5, 16, 16)), rng.standard_normal((4, 128)) * 0.5
    dec = ImplicitDecoder(ImplicitDecoderConfig(3, hidden=(8, 8)))
    before = {k: v.copy() for k, v in dec.store.params.items()}
    enc = ViewEncoder(ViewEncoderConfig(image_size=16, channels=(8, 16)))
    trace = train_singleview_encoder(enc, images, targets, ViewTrainConfig(steps=100, lr=1e-3))
    assert trace[-1]["loss"] < 0.1 * trace[0]["loss"]
    assert enc.encode(images).shape == (4, 128)
    assert all(np.array_equal(before[k], dec.store.params[k]) for k in before)
    with pytest.raises(ValueError, match="target latents"):
        train_singleview_encoder(enc, images, None)


def test_view_encoder_accepts_sketches():
    enc = ViewEncoder(ViewEncoderConfig(image_size=16, in_channels=1, channels=(4, 8)))
    assert enc.encode(np.zeros((2, 1, 16, 16))).shape == (2, 128)
    with pytest.raises(ValueError):
        ViewEncoderConfig(in_channels=3)
