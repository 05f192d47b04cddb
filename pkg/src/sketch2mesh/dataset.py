"""Synthetic dataset generation and reading.

Layout under the root directory::

    manifest.txt                one shape id per line
    <id>/mesh.obj               normalized ground-truth mesh
    <id>/voxels_<n>.s2mvox      occupancy grid per resolution
    <id>/view_<v>.s2m25d        rendered 2.5D map per viewpoint
    <id>/sketch_<v>.s2mskt      line-drawing proxy per viewpoint
    <id>/cloud.xyz              fixed surface sample for point-cloud chamfer
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Sequence

import numpy as np

from . import camera
from .geometry import (PointCloud, TriMesh, VoxelGrid, load_obj, load_points, load_voxels, normalize_mesh,
                       sample_surface, save_obj, save_points, save_voxels, voxelize)
from .shapes import random_shape

log = logging.getLogger(__name__)

MANIFEST = "manifest.txt"


def generate_synthetic(root: str | Path, shapes: Sequence[str], num_views: int = 12, image_size: int = 64,
                       half_extent: float = 0.8, resolutions: Sequence[int] = (16, 32),
                       cloud_points: int = 10_000, seed: int = 0) -> list[str]:
    """Write one sample per entry of ``shapes``; returns the shape ids.

    Every shape draws its parameters from ``default_rng([seed, index])``, so
    the output is byte-identical for a given seed.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    vps = camera.views_for_count(num_views, image_size, half_extent)
    ids = []
    for i, kind in enumerate(shapes):
        sid = f"{i:03d}_{kind}"
        out = root / sid
        out.mkdir(exist_ok=True)
        prim = random_shape(kind, np.random.default_rng([seed, i]))
        mesh = normalize_mesh(prim.mesh())
        save_obj(mesh, out / "mesh.obj")
        for n in sorted(set(resolutions)):
            save_voxels(voxelize(mesh, n), out / f"voxels_{n}.s2mvox")
        for v, vp in enumerate(vps):
            view = camera.render_view25d(mesh, vp)
            view.validate()
            camera.save_view_map(view, out / f"view_{v}.s2m25d")
            camera.save_sketch(camera.render_sketch_proxy(view), out / f"sketch_{v}.s2mskt")
        save_points(sample_surface(mesh, cloud_points, seed), out / "cloud.xyz")
        ids.append(sid)
        log.info("wrote %s", sid)
    (root / MANIFEST).write_text("".join(f"{s}\n" for s in ids))
    return ids


@dataclass
class ShapeRecord:
    root: Path
    shape_id: str

    @property
    def path(self) -> Path:
        return self.root / self.shape_id

    @cached_property
    def mesh(self) -> TriMesh:
        return load_obj(self.path / "mesh.obj")

    @cached_property
    def grids(self) -> dict[int, VoxelGrid]:
        out = {}
        for p in sorted(self.path.glob("voxels_*.s2mvox")):
            g = load_voxels(p)
            out[g.n] = g
        return out

    @cached_property
    def cloud(self) -> PointCloud:
        return load_points(self.path / "cloud.xyz")

    def num_views(self) -> int:
        return len(list(self.path.glob("view_*.s2m25d")))

    def view(self, v: int) -> camera.ViewMap25D:
        return camera.load_view_map(self.path / f"view_{v}.s2m25d")

    def views(self) -> np.ndarray:
        """All 2.5D maps stacked as ``V x 5 x S x S``."""
        return np.stack([self.view(v).to_channels() for v in range(self.num_views())])

    def sketch(self, v: int) -> np.ndarray:
        return camera.load_sketch(self.path / f"sketch_{v}.s2mskt")


def load_dataset(root: str | Path) -> list[ShapeRecord]:
    root = Path(root)
    manifest = root / MANIFEST
    if not manifest.is_file():
        raise FileNotFoundError(f"no {MANIFEST} in {root}")
    ids = [line.strip() for line in manifest.read_text().splitlines() if line.strip()]
    missing = [s for s in ids if not (root / s).is_dir()]
    if missing:
        raise FileNotFoundError(f"shape directories missing under {root}: {missing}")
    return [ShapeRecord(root, s) for s in ids]
