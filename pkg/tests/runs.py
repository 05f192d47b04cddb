"""Training runs shared by the acceptance tests and the derived decoder checks."""
from __future__ import annotations

import json
import os
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from sketch2mesh.geometry import TriMesh, VoxelGrid, normalize_mesh, sample_surface, save_obj, voxelize
from sketch2mesh.implicit import (ImplicitDecoder, ImplicitDecoderConfig, ImplicitTrainConfig, VoxelEncoder,
                                  VoxelEncoderConfig, evaluate_grid, extract_mesh, field_iou,
                                  pretrain_autoencoder)
from sketch2mesh.metrics import chamfer_point_cloud
from sketch2mesh.nn import write_checkpoint
from sketch2mesh.shapes import Sphere

ROOT = Path(__file__).resolve().parents[1]

# budget fixed by a pilot run (scripts/overfit_sphere.py)
SPHERE_STEPS = 400
SPHERE_LR = 2e-4
SPHERE_RES = 16
CHAMFER_BOUND = 4 * (1 / 32) ** 2


@dataclass
class SphereRun:
    grid: VoxelGrid
    gt_mesh: TriMesh
    decoder: ImplicitDecoder
    latent: np.ndarray
    iou: float
    chamfer: float
    mesh: TriMesh
    parameters: int
    seconds: float
    checkpoint: bytes
    obj: bytes


def sphere_setup():
    mesh = normalize_mesh(Sphere().mesh())
    return mesh, voxelize(mesh, SPHERE_RES)


def train_sphere(workdir: Path, layers: int = 5, seed: int = 0) -> SphereRun:
    """Overfit the autoencoder to one sphere grid and extract its mesh at 32^3."""
    gt_mesh, grid = sphere_setup()
    encoder = VoxelEncoder(VoxelEncoderConfig(input_resolution=SPHERE_RES, channels=(16, 32, 64), seed=seed))
    decoder = ImplicitDecoder(ImplicitDecoderConfig(layers, seed=seed))
    cfg = ImplicitTrainConfig(resolutions=(SPHERE_RES,), steps=(SPHERE_STEPS,), lr=SPHERE_LR, seed=seed)
    t = time.perf_counter()
    with threadpool_limits(limits=1):
        res = pretrain_autoencoder([grid], encoder, decoder, cfg)
        latent = res.latents[0]
        iou = field_iou(evaluate_grid(decoder, latent, SPHERE_RES), grid)
        mesh = extract_mesh(decoder, latent, 32)
    seconds = time.perf_counter() - t
    chamfer = chamfer_point_cloud(sample_surface(mesh, 10_000, 0), sample_surface(gt_mesh, 10_000, 0))
    workdir.mkdir(parents=True, exist_ok=True)
    ckpt, obj = workdir / f"sphere_{layers}.ckpt", workdir / f"sphere_{layers}.obj"
    entries = {**encoder.store.to_entries(), **decoder.store.to_entries(), "latent": latent}
    write_checkpoint(ckpt, entries)
    save_obj(mesh, obj)
    return SphereRun(grid, gt_mesh, decoder, latent, iou, chamfer, mesh, decoder.num_parameters(), seconds,
                     ckpt.read_bytes(), obj.read_bytes())


@dataclass
class PipelineRun:
    work: Path
    chamfer: float
    seconds: dict

    def file(self, name: str) -> bytes:
        return (self.work / name).read_bytes()


def run_pipeline(work: Path, config: Path = ROOT / "configs" / "overfit.cfg") -> PipelineRun:
    """Run scripts/run_pipeline.py in a fresh process with single-threaded BLAS."""
    env = dict(os.environ, OMP_NUM_THREADS="1", OPENBLAS_NUM_THREADS="1", MKL_NUM_THREADS="1")
    subprocess.run([sys.executable, str(ROOT / "scripts" / "run_pipeline.py"), "--work", str(work),
                    "--config", str(config)], check=True, env=env, cwd=ROOT, stdout=subprocess.DEVNULL)
    summary = json.loads((work / "summary.json").read_text())
    return PipelineRun(work, summary["chamfer"], summary["seconds"])
