#!/usr/bin/env python3
"""Overfit the voxel autoencoder to a single sphere and log IoU along the way.

    python scripts/overfit_sphere.py --steps 400 --lr 2e-4 --every 50
    python scripts/overfit_sphere.py --layers 6

This is the pilot that fixed the learning rate and step budget used by the
single-shape tests. Training runs in chunks of ``--every`` steps (resume is
bit-exact, so chunking does not change the result) and the field IoU at the
training resolution is printed after each chunk.
"""
from __future__ import annotations

import argparse
import time

from threadpoolctl import threadpool_limits

from sketch2mesh.geometry import normalize_mesh, sample_surface, voxelize
from sketch2mesh.implicit import (ImplicitDecoder, ImplicitDecoderConfig, ImplicitTrainConfig, VoxelEncoder,
                                  VoxelEncoderConfig, evaluate_grid, extract_mesh, field_iou,
                                  pretrain_autoencoder)
from sketch2mesh.metrics import chamfer_point_cloud
from sketch2mesh.shapes import Sphere


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--layers", type=int, default=5, choices=(5, 6))
    ap.add_argument("--steps", type=int, default=400)
    ap.add_argument("--lr", type=float, default=2e-4)
    ap.add_argument("--lr-floor", type=float, default=0.1, help="final lr as a fraction of --lr")
    ap.add_argument("--resolution", type=int, default=16)
    ap.add_argument("--every", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    gt = normalize_mesh(Sphere().mesh())
    grid = voxelize(gt, args.resolution)
    encoder = VoxelEncoder(VoxelEncoderConfig(input_resolution=args.resolution, channels=(16, 32, 64),
                                              seed=args.seed))
    decoder = ImplicitDecoder(ImplicitDecoderConfig(args.layers, seed=args.seed))
    cfg = ImplicitTrainConfig(resolutions=(args.resolution,), steps=(args.steps,), lr=args.lr,
                              lr_floor=args.lr_floor, seed=args.seed)
    print(f"decoder layers={args.layers} parameters={decoder.num_parameters()}")

    trace: list[dict] = []
    t = time.perf_counter()
    with threadpool_limits(limits=1):
        for start in range(0, args.steps, args.every):
            stop = min(start + args.every, args.steps)
            res = pretrain_autoencoder([grid], encoder, decoder, cfg, start_step=start, trace=trace, stop_step=stop)
            trace = res.trace
            iou = field_iou(evaluate_grid(decoder, res.latents[0], args.resolution), grid)
            print(f"step={stop} loss={trace[-1]['loss']:.5f} iou={iou:.4f} t={time.perf_counter() - t:.0f}s")
        mesh = extract_mesh(decoder, res.latents[0], 32)
    if len(mesh.faces) == 0:
        raise SystemExit("extracted surface is empty; train longer")
    chamfer = chamfer_point_cloud(sample_surface(mesh, 10_000, 0), sample_surface(gt, 10_000, 0))
    print(f"chamfer={chamfer:.3e} bound={4 / 32 ** 2:.3e} seconds={time.perf_counter() - t:.0f}")


if __name__ == "__main__":
    main()
