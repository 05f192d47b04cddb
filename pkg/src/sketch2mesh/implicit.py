"""Latent-conditioned occupancy decoder and its training stages.

Supervision comes from voxel grids: every voxel center becomes a point with a
binary label (1 inside by default) and a weight that is larger next to the
surface. The decoder maps ``(latent, point)`` to an occupancy probability and
is trained with the weighted squared error

    L = sum_p w_p (f(p) - F(p))^2 / sum_p w_p

Three networks share this module: a 3D conv encoder used while pretraining
the autoencoder, the fully connected decoder, and a residual 2D encoder that
regresses latents from a single 2.5D view.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence, Union

import numpy as np

from . import marching
from .geometry import TriMesh, VoxelGrid, normalize_mesh, voxel_centers
from .nn import Graph, ParamStore, Tensor, adam_step
from .nn import ops

log = logging.getLogger(__name__)

LATENT_DIM = 128
# rows per evaluation chunk; every chunk is padded to this size so a point's
# value does not depend on how many other points are evaluated with it
EVAL_CHUNK = 256


# ---------------------------------------------------------------- point-value sets

@dataclass
class PointValueSet:
    points: np.ndarray      # (N, 3)
    labels: np.ndarray      # (N,) in {0, 1}
    weights: np.ndarray     # (N,) > 0
    resolution: int

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.labels = np.asarray(self.labels, dtype=np.float64).ravel()
        self.weights = np.asarray(self.weights, dtype=np.float64).ravel()
        if not (len(self.points) == len(self.labels) == len(self.weights)):
            raise ValueError("points, labels and weights must have equal length")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights <= 0):
            raise ValueError("weights must be finite and positive")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx: np.ndarray) -> "PointValueSet":
        return PointValueSet(self.points[idx], self.labels[idx], self.weights[idx], self.resolution)


def boundary_mask(occupancy: np.ndarray) -> np.ndarray:
    """True where any of the 6 face neighbours has a different label.

    Outside the grid a voxel is its own neighbour, so the domain edge alone
    never marks a boundary.
    """
    occ = np.asarray(occupancy, dtype=bool)
    p = np.pad(occ, 1, mode="edge")
    n = occ.shape[0]
    out = np.zeros_like(occ)
    for axis in range(3):
        for shift in (0, 2):
            sl = [slice(1, n + 1)] * 3
            sl[axis] = slice(shift, shift + n)
            out |= p[tuple(sl)] != occ
    return out


def sample_point_values(grid: VoxelGrid, w_surf: float = 4.0, invert_labels: bool = False) -> PointValueSet:
    """One point per voxel center, in C order over ``[i, j, k]``."""
    if w_surf <= 0:
        raise ValueError(f"w_surf must be positive, got {w_surf}")
    occ = grid.occupancy
    labels = (~occ if invert_labels else occ).astype(np.float64)
    weights = np.where(boundary_mask(occ), w_surf, 1.0)
    return PointValueSet(grid.centers().reshape(-1, 3), labels.ravel(), weights.ravel(), grid.n)


def resample_grid(grid: VoxelGrid, n: int) -> VoxelGrid:
    """Nearest-center resampling to resolution ``n``."""
    if grid.n == n:
        return grid
    idx = np.minimum(((np.arange(n) + 0.5) * grid.n / n).astype(np.int64), grid.n - 1)
    return VoxelGrid(grid.occupancy[np.ix_(idx, idx, idx)])


ShapeGrids = Union[VoxelGrid, Mapping[int, VoxelGrid]]


def grid_at(shape: ShapeGrids, n: int) -> VoxelGrid:
    """The grid of ``shape`` at resolution ``n``, resampled from the finest one if absent."""
    if isinstance(shape, VoxelGrid):
        return resample_grid(shape, n)
    if n in shape:
        return shape[n]
    return resample_grid(shape[max(shape)], n)


# ---------------------------------------------------------------- decoder

@dataclass
class ImplicitDecoderConfig:
    num_fc_layers: int = 5
    hidden: tuple[int, ...] = ()
    latent_dim: int = LATENT_DIM
    slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.num_fc_layers < 2:
            raise ValueError(f"decoder needs at least 2 layers, got {self.num_fc_layers}")
        if not self.hidden:
            base = (512, 512, 256, 128)
            extra = self.num_fc_layers - 1 - len(base)
            self.hidden = (512,) * max(extra, 0) + base[max(-extra, 0):]
        self.hidden = tuple(int(h) for h in self.hidden)
        if len(self.hidden) != self.num_fc_layers - 1:
            raise ValueError(f"{self.num_fc_layers} layers need {self.num_fc_layers - 1} hidden widths, "
                             f"got {self.hidden}")
        if min(self.hidden) <= 0 or self.latent_dim <= 0:
            raise ValueError("layer widths must be positive")

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.latent_dim + 3,) + self.hidden + (1,)


class ImplicitDecoder:
    """Fully connected occupancy network; the latent enters at the first layer only."""

    def __init__(self, config: ImplicitDecoderConfig = ImplicitDecoderConfig()):
        self.config = config
        self.store = ParamStore("dec")
        rng = np.random.default_rng([config.seed, 2])
        w = config.widths
        for i in range(len(w) - 1):
            ops.init_dense(self.store, f"dec.fc{i}", w[i], w[i + 1], rng)

    @property
    def num_layers(self) -> int:
        return len(self.config.widths) - 1

    def num_parameters(self) -> int:
        return self.store.num_parameters()

    def forward(self, g: Graph, z: Tensor, points: np.ndarray) -> Tensor:
        """Occupancy for ``points`` shaped ``B x P x 3`` under latents ``z`` (``B x L``); returns ``B x P``."""
        points = np.asarray(points, dtype=np.float64)
        B, P = points.shape[:2]
        if z.shape != (B, self.config.latent_dim):
            raise ops.DimensionError(f"latent shape {z.shape} does not match {B} point sets "
                                     f"of latent size {self.config.latent_dim}")
        h = _latent_point_layer(z, points, g.param("dec.fc0.w"), g.param("dec.fc0.b"))
        h = ops.leaky_relu(h.reshape(B * P, -1), self.config.slope)
        for i in range(1, self.num_layers):
            h = ops.dense(h, f"dec.fc{i}")
            if i < self.num_layers - 1:
                h = ops.leaky_relu(h, self.config.slope)
        return ops.sigmoid(h).reshape(B, P)

    def _eval_chunk(self, z: np.ndarray, pts: np.ndarray) -> np.ndarray:
        prm = self.store.params
        L = self.config.latent_dim
        w0 = prm["dec.fc0.w"]
        h = (z @ w0[:L])[None, :] + pts @ w0[L:] + prm["dec.fc0.b"]
        for i in range(1, self.num_layers):
            h = np.where(h >= 0, h, self.config.slope * h)
            h = h @ prm[f"dec.fc{i}.w"] + prm[f"dec.fc{i}.b"]
        e = np.exp(-np.abs(h[:, 0]))
        return np.where(h[:, 0] >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def _latent_point_layer(z: Tensor, points: np.ndarray, w: Tensor, b: Tensor) -> Tensor:
    """``z @ W[:L] + p @ W[L:] + b`` broadcast over the points of each latent; ``B x P x H``."""
    L = z.shape[1]
    wz, wp = w.data[:L], w.data[L:]
    zd = z.data
    y = (zd @ wz)[:, None, :] + points @ wp + b.data

    def backward(gr):
        gsum = gr.sum(axis=1)
        gw = np.concatenate([zd.T @ gsum, points.reshape(-1, 3).T @ gr.reshape(-1, gr.shape[-1])])
        return gsum @ wz.T, gw, gr.sum(axis=(0, 1))

    return z.graph.record(y, (z, w, b), backward)


def implicit_forward(decoder: ImplicitDecoder, z: np.ndarray, points: np.ndarray,
                     chunk: int = EVAL_CHUNK) -> np.ndarray:
    """Occupancy at ``points`` (``N x 3``) for one latent.

    Points outside ``[0,1]^3`` are clamped. Evaluation runs in zero-padded
    chunks of fixed size, so batched and one-at-a-time results are bit-identical.
    """
    z = np.asarray(z, dtype=np.float64).ravel()
    if z.shape != (decoder.config.latent_dim,):
        raise ValueError(f"latent must have {decoder.config.latent_dim} entries, got {z.shape}")
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if np.any((pts < 0) | (pts > 1)):
        log.warning("clamping %d coordinates outside [0,1]^3", int(np.count_nonzero((pts < 0) | (pts > 1))))
        pts = np.clip(pts, 0.0, 1.0)
    out = np.empty(len(pts))
    buf = np.zeros((chunk, 3))
    for start in range(0, len(pts), chunk):
        part = pts[start:start + chunk]
        buf[:] = 0.0
        buf[:len(part)] = part
        out[start:start + len(part)] = decoder._eval_chunk(z, buf)[:len(part)]
    return out


def implicit_loss(pred: Tensor, labels: np.ndarray, weights: np.ndarray) -> Tensor:
    """Weighted mean squared error; ``labels`` and ``weights`` broadcast to ``pred``."""
    if pred.data.size == 0:
        raise ValueError("implicit loss needs at least one point")
    labels = np.broadcast_to(np.asarray(labels, dtype=np.float64), pred.shape)
    weights = np.broadcast_to(np.asarray(weights, dtype=np.float64), pred.shape)
    return ((pred - labels).square() * weights).sum() * (1.0 / weights.sum())


def evaluate_grid(decoder: ImplicitDecoder, z: np.ndarray, n: int) -> np.ndarray:
    """Field sampled at the ``n^3`` voxel centers, indexed ``[i, j, k]``."""
    if n < 2:
        raise ValueError(f"grid resolution must be >= 2, got {n}")
    return implicit_forward(decoder, z, voxel_centers(n).reshape(-1, 3)).reshape(n, n, n)


def extract_mesh(decoder: ImplicitDecoder, z: np.ndarray, resolution: int = 32, threshold: float = 0.5,
                 smooth_iterations: int = 0, normalize: bool = True) -> TriMesh:
    """Evaluate the field, run marching cubes and normalize into the unit cube.

    An empty surface is returned as an empty mesh with a warning.
    """
    field = evaluate_grid(decoder, z, resolution)
    mesh = marching.marching_cubes(marching.ScalarField(field, threshold))
    meta = {"resolution": resolution, "threshold": threshold}
    if mesh.is_empty:
        log.warning("field has no %.3g crossing at resolution %d; mesh is empty", threshold, resolution)
        return TriMesh(mesh.vertices, mesh.faces, meta)
    if smooth_iterations:
        mesh = marching.laplacian_smooth(mesh, smooth_iterations)
    if normalize:
        mesh = normalize_mesh(mesh)
    return TriMesh(mesh.vertices, mesh.faces, meta)


# ---------------------------------------------------------------- 3D encoder

@dataclass
class VoxelEncoderConfig:
    input_resolution: int = 32
    channels: tuple[int, ...] = (16, 32, 64, 128)
    latent_dim: int = LATENT_DIM
    slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        n = self.input_resolution
        if n < 4 or n & (n - 1):
            raise ValueError(f"encoder input resolution must be a power of two >= 4, got {n}")
        if n >> len(self.channels) != 2:
            raise ValueError(f"{len(self.channels)} stride-2 layers cannot reduce {n}^3 to 2^3")


class VoxelEncoder:
    """Stride-2 3D convolutions down to ``2^3``, then a dense layer to the latent."""

    def __init__(self, config: VoxelEncoderConfig = VoxelEncoderConfig()):
        self.config = config
        self.store = ParamStore("enc3d")
        rng = np.random.default_rng([config.seed, 3])
        prev = 1
        for i, c in enumerate(config.channels):
            ops.init_conv(self.store, f"enc3d.conv{i}", prev, c, 4, rng, dims=3)
            prev = c
        ops.init_dense(self.store, "enc3d.fc", prev * 8, config.latent_dim, rng)

    def forward(self, g: Graph, grids: np.ndarray) -> Tensor:
        grids = np.asarray(grids, dtype=np.float64)
        n = self.config.input_resolution
        if grids.shape[1:] != (n, n, n):
            raise ops.DimensionError(f"voxel encoder expects B x {n}^3 grids, got {grids.shape}")
        h = g.constant(grids[:, None])
        for i in range(len(self.config.channels)):
            h = ops.leaky_relu(ops.conv3d(h, f"enc3d.conv{i}", stride=2, pad=1), self.config.slope)
        return ops.dense(ops.flatten(h), "enc3d.fc")

    def encode(self, grids: np.ndarray) -> np.ndarray:
        g = Graph(self.store, train=False)
        z = self.forward(g, grids).data
        g.release()
        return z

    def input_for(self, shape: ShapeGrids) -> np.ndarray:
        return grid_at(shape, self.config.input_resolution).occupancy.astype(np.float64)


# ---------------------------------------------------------------- autoencoder pretraining

@dataclass
class ImplicitTrainConfig:
    resolutions: tuple[int, ...] = (16, 32)
    steps: tuple[int, ...] = (300, 100)
    points_per_shape: int = 4096
    batch_shapes: int = 4
    lr: float = 2e-4
    lr_floor: float = 0.1           # cosine decay from lr to lr * lr_floor over total_steps
    beta1: float = 0.9
    beta2: float = 0.999
    w_surf: float = 4.0
    invert_labels: bool = False
    seed: int = 0

    def __post_init__(self):
        self.resolutions = tuple(int(r) for r in self.resolutions)
        self.steps = tuple(int(s) for s in self.steps)
        if len(self.resolutions) != len(self.steps) or not self.resolutions:
            raise ValueError("resolutions and steps must be non-empty and of equal length")
        if min(self.resolutions) < 2 or min(self.steps) < 0:
            raise ValueError("resolutions must be >= 2 and step counts >= 0")
        if self.points_per_shape < 1 or self.batch_shapes < 1:
            raise ValueError("points_per_shape and batch_shapes must be positive")
        if not 0.0 <= self.lr_floor <= 1.0:
            raise ValueError(f"lr_floor must be in [0, 1], got {self.lr_floor}")

    @property
    def total_steps(self) -> int:
        return sum(self.steps)

    def lr_at(self, step: int) -> float:
        """Learning rate for the 0-based ``step``.

        Constant-rate Adam keeps jumping between near-perfect and visibly worse
        fields late in training, so the rate is annealed to let it settle.
        """
        t = step / max(self.total_steps - 1, 1)
        return self.lr * (self.lr_floor + (1.0 - self.lr_floor) * 0.5 * (1.0 + np.cos(np.pi * t)))

    def resolution_at(self, step: int) -> int:
        """Curriculum resolution for the 0-based ``step``."""
        for r, end in zip(self.resolutions, np.cumsum(self.steps)):
            if step < end:
                return r
        return self.resolutions[-1]


@dataclass
class AutoencoderResult:
    latents: np.ndarray                 # T x L
    trace: list[dict] = field(default_factory=list)
    step: int = 0


def _batch_indices(count: int, batch: int, step: int, seed: int) -> np.ndarray:
    if count <= batch:
        return np.arange(count)
    per_epoch = count // batch
    epoch, k = divmod(step, per_epoch)
    perm = np.random.default_rng([seed, epoch, 7]).permutation(count)
    return np.sort(perm[k * batch:(k + 1) * batch])


def _point_subset(pvs: PointValueSet, count: int, seed: int, step: int, shape: int) -> PointValueSet:
    if len(pvs) <= count:
        return pvs
    idx = np.random.default_rng([seed, step, shape, 11]).choice(len(pvs), count, replace=False)
    return pvs.subset(np.sort(idx))


def pretrain_autoencoder(shapes: Sequence[ShapeGrids], encoder: VoxelEncoder, decoder: ImplicitDecoder,
                         config: ImplicitTrainConfig = ImplicitTrainConfig(), start_step: int = 0,
                         trace: Optional[list[dict]] = None, stop_step: Optional[int] = None) -> AutoencoderResult:
    """Train encoder and decoder jointly over the resolution curriculum.

    Each step draws up to ``batch_shapes`` shapes and, when the grid has more
    voxel centers than ``points_per_shape``, a seeded random subset of them.
    ``stop_step`` ends the run early without changing the schedule.
    """
    if not shapes:
        raise ValueError("need at least one voxel grid")
    inputs = np.stack([encoder.input_for(s) for s in shapes])
    cache: dict[int, list[PointValueSet]] = {}
    result = AutoencoderResult(latents=np.zeros((0, decoder.config.latent_dim)),
                               trace=list(trace or []), step=start_step)
    end = config.total_steps if stop_step is None else min(stop_step, config.total_steps)
    for step in range(start_step, end):
        n = config.resolution_at(step)
        if n not in cache:
            cache[n] = [sample_point_values(grid_at(s, n), config.w_surf, config.invert_labels) for s in shapes]
        idx = _batch_indices(len(shapes), config.batch_shapes, step, config.seed)
        sets = [_point_subset(cache[n][i], config.points_per_shape, config.seed, step, int(i)) for i in idx]
        g = Graph(encoder.store, decoder.store)
        z = encoder.forward(g, inputs[idx])
        pred = decoder.forward(g, z, np.stack([s.points for s in sets]))
        loss = implicit_loss(pred, np.stack([s.labels for s in sets]), np.stack([s.weights for s in sets]))
        g.backward(loss)
        lr = config.lr_at(step)
        adam_step(encoder.store, lr, config.beta1, config.beta2)
        adam_step(decoder.store, lr, config.beta1, config.beta2)
        result.trace.append({"step": step + 1, "resolution": n, "loss": loss.item()})
        result.step = step + 1
        if result.step % 50 == 0:
            log.info("autoencoder step %d res %d loss %.5f", result.step, n, loss.item())
    result.latents = encoder.encode(inputs)
    return result


def field_iou(field: np.ndarray, grid: VoxelGrid, threshold: float = 0.5) -> float:
    from .metrics import voxel_iou
    return voxel_iou(np.asarray(field) > threshold, grid)


# ---------------------------------------------------------------- auto-decoding

def optimize_latent(decoder: ImplicitDecoder, pvs: PointValueSet, steps: int = 300, lr: float = 1e-2,
                    init: Optional[np.ndarray] = None) -> tuple[np.ndarray, list[float]]:
    """Fit a latent to ``pvs`` with the decoder frozen; returns the latent and the loss trace."""
    latent = ParamStore("latent")
    latent.register("z", np.zeros(decoder.config.latent_dim) if init is None else np.asarray(init, dtype=np.float64))
    losses = []
    for _ in range(steps):
        g = Graph(decoder.store, latent)
        pred = decoder.forward(g, g.param("z").reshape(1, -1), pvs.points[None])
        loss = implicit_loss(pred, pvs.labels[None], pvs.weights[None])
        g.backward(loss)
        adam_step(latent, lr)
        losses.append(loss.item())
    return latent.params["z"].copy(), losses


# ---------------------------------------------------------------- single-view encoder

@dataclass
class ViewEncoderConfig:
    image_size: int = 64
    in_channels: int = 5
    channels: tuple[int, ...] = (16, 32, 64, 128)
    latent_dim: int = LATENT_DIM
    slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.in_channels not in (1, 5):
            raise ValueError(f"view encoder takes a 5-channel map or a 1-channel sketch, got {self.in_channels}")
        if self.image_size % (1 << len(self.channels)):
            raise ValueError(f"image size {self.image_size} is not divisible by 2^{len(self.channels)}")


class ViewEncoder:
    """Strided stem followed by residual blocks, each halving the resolution.

    A block computes ``lrelu(conv3x3(lrelu(conv3x3_s2(x))) + conv1x1_s2(x))``.
    """

    def __init__(self, config: ViewEncoderConfig = ViewEncoderConfig()):
        self.config = config
        self.store = ParamStore("view")
        rng = np.random.default_rng([config.seed, 4])
        ch = config.channels
        ops.init_conv(self.store, "view.stem", config.in_channels, ch[0], 4, rng)
        for i in range(1, len(ch)):
            ops.init_conv(self.store, f"view.block{i}.a", ch[i - 1], ch[i], 3, rng)
            ops.init_conv(self.store, f"view.block{i}.b", ch[i], ch[i], 3, rng)
            ops.init_conv(self.store, f"view.block{i}.skip", ch[i - 1], ch[i], 1, rng)
        side = config.image_size >> len(ch)
        ops.init_dense(self.store, "view.fc", ch[-1] * side * side, config.latent_dim, rng)

    def forward(self, g: Graph, images: np.ndarray) -> Tensor:
        images = np.asarray(images, dtype=np.float64)
        c, s = self.config.in_channels, self.config.image_size
        if images.shape[1:] != (c, s, s):
            raise ops.DimensionError(f"view encoder expects B x {c} x {s} x {s}, got {images.shape}")
        slope = self.config.slope
        h = ops.leaky_relu(ops.conv2d(g.constant(images), "view.stem", stride=2, pad=1), slope)
        for i in range(1, len(self.config.channels)):
            a = ops.leaky_relu(ops.conv2d(h, f"view.block{i}.a", stride=2, pad=1), slope)
            b = ops.conv2d(a, f"view.block{i}.b", stride=1, pad=1)
            h = ops.leaky_relu(b + ops.conv2d(h, f"view.block{i}.skip", stride=2), slope)
        return ops.dense(ops.flatten(h), "view.fc")

    def encode(self, images: np.ndarray) -> np.ndarray:
        g = Graph(self.store, train=False)
        z = self.forward(g, images).data
        g.release()
        return z


@dataclass
class ViewTrainConfig:
    steps: int = 300
    batch_size: int = 4
    lr: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    seed: int = 0


def train_singleview_encoder(encoder: ViewEncoder, images: np.ndarray, targets: Optional[np.ndarray],
                             config: ViewTrainConfig = ViewTrainConfig(), start_step: int = 0,
                             trace: Optional[list[dict]] = None) -> list[dict]:
    """Regress target latents from single views with a mean squared error.

    Only the encoder's parameters change; the decoder is not involved.
    """
    if targets is None:
        raise ValueError("single-view training needs target latents from the autoencoder")
    images = np.asarray(images, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(images) != len(targets) or len(images) == 0:
        raise ValueError(f"got {len(images)} views for {len(targets)} latents")
    trace = list(trace or [])
    for step in range(start_step, config.steps):
        idx = _batch_indices(len(images), config.batch_size, step, config.seed)
        g = Graph(encoder.store)
        z = encoder.forward(g, images[idx])
        loss = (z - targets[idx]).square().mean()
        g.backward(loss)
        adam_step(encoder.store, config.lr, config.beta1, config.beta2)
        trace.append({"step": step + 1, "loss": loss.item()})
        if (step + 1) % 50 == 0:
            log.info("view encoder step %d mse %.5g", step + 1, loss.item())
    return trace
