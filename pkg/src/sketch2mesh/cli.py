"""``s2m`` command line: gen-synth, train-25d, train-implicit, infer, eval.

Exit codes: 0 success, 1 runtime error, 2 usage error, 3 empty surface.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import camera
from .config import ConfigError, PipelineConfig, load_config
from .dataset import generate_synthetic, load_dataset
from .geometry import load_obj, load_points, sample_surface, save_obj, voxelize
from .implicit import (ImplicitDecoder, ViewEncoder, VoxelEncoder, extract_mesh, pretrain_autoencoder,
                       train_singleview_encoder)
from .metrics import EvalReport, chamfer_mesh, chamfer_mesh_to_cloud, voxel_iou
from .nn.checkpoint import config_entry, config_hash_of, read_checkpoint, write_checkpoint
from .sketch25d import Sketch25DModel, save_stage1, train_25d, write_trace

log = logging.getLogger("s2m")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_EMPTY = 0, 1, 2, 3
METRICS = ("mesh_chamfer", "pointcloud_chamfer", "voxel_iou")


class UsageError(Exception):
    pass


class CheckpointMismatch(RuntimeError):
    pass


# ---------------------------------------------------------------- helpers

def _thread_count(arg: Optional[int], config: PipelineConfig) -> int:
    if arg is not None:
        return arg
    env = os.environ.get("S2M_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"S2M_THREADS must be an integer, got {env!r}") from None
    return config.run.threads


def _load_checkpoint(path: Path, expected_hash: str, kind: str) -> dict[str, np.ndarray]:
    entries = read_checkpoint(path)
    found = config_hash_of(entries)
    if found != expected_hash:
        raise CheckpointMismatch(f"{path}: {kind} checkpoint was written under config hash {found}, "
                                 f"the current config has {expected_hash}")
    return entries


def _trace_path(ckpt: Path) -> Path:
    return ckpt.with_name(ckpt.name + ".trace.jsonl")


def _read_trace(ckpt: Path) -> list[dict]:
    p = _trace_path(ckpt)
    if not p.is_file():
        return []
    return [json.loads(line) for line in p.read_text().splitlines() if line.strip()]


def _untag(record: dict) -> dict:
    return {k: v for k, v in record.items() if k != "phase"}


def view_index(config: PipelineConfig) -> int:
    if config.view.view_index >= 0:
        return config.view.view_index
    vps = camera.views_for_count(config.data.num_views, config.data.image_size, config.data.half_extent)
    return camera.slanted_front_index(vps)


def stage1_inputs(records, config: PipelineConfig) -> tuple[np.ndarray, np.ndarray]:
    v = view_index(config)
    sketches = np.stack([r.sketch(v) for r in records])
    maps = np.stack([r.views() for r in records])
    return sketches, maps


def view_inputs(records, config: PipelineConfig) -> np.ndarray:
    v = view_index(config)
    if config.view.input == "sketch":
        return np.stack([r.sketch(v)[None] for r in records])
    return np.stack([r.view(v).to_channels() for r in records])


# ---------------------------------------------------------------- commands

def cmd_gen_synth(args, config: PipelineConfig) -> int:
    d = config.data
    shapes = tuple(s.strip() for s in args.shapes.split(",")) if args.shapes else d.shapes
    if args.shapes:
        config.data.shapes = shapes
        config.validate()
    resolutions = sorted(set(d.voxel_resolutions) | {config.implicit.encoder_resolution})
    ids = generate_synthetic(args.out, shapes, d.num_views, d.image_size, d.half_extent, resolutions,
                             d.cloud_points, config.run.seed)
    print(f"wrote {len(ids)} shapes to {args.out}")
    return EXIT_OK


def cmd_train_25d(args, config: PipelineConfig) -> int:
    records = load_dataset(args.data)
    sketches, maps = stage1_inputs(records, config)
    model = Sketch25DModel(config.sketch25d())
    chash = config.stage1_hash()
    train = config.train25d()
    if args.steps is not None:
        train.steps = args.steps
    start, trace = 0, []
    if args.resume:
        entries = _load_checkpoint(Path(args.resume), chash, "stage-1")
        model.load_entries(entries)
        start = int(entries["__step"][0])
        trace = _read_trace(Path(args.resume))[:start]
        log.info("resuming stage 1 from step %d", start)
    log.info("stage 1 parameters: generator %d, discriminator %d",
             model.gen.num_parameters(), model.disc.num_parameters())
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    res = train_25d(model, sketches, maps, train, start_step=start, checkpoint_dir=out.parent,
                    config_hash=chash, trace=trace)
    save_stage1(model, out, res.step, chash)
    write_trace(res.trace, _trace_path(out))
    print(f"stage 1 trained to step {res.step}; checkpoint {out}")
    return EXIT_OK


def cmd_train_implicit(args, config: PipelineConfig) -> int:
    if args.layers is not None:
        config.implicit.num_fc_layers = args.layers
        config.implicit.hidden = ()
        config.validate()
    records = load_dataset(args.data)
    encoder = VoxelEncoder(config.voxel_encoder())
    decoder = ImplicitDecoder(config.decoder())
    view_enc = ViewEncoder(config.view_encoder())
    ae_cfg, view_cfg = config.implicit_train(), config.view_train()
    chash = config.stage2_hash()
    log.info("implicit decoder: %d layers, %d parameters", decoder.num_layers, decoder.num_parameters())
    print(f"decoder_layers={decoder.num_layers} decoder_parameters={decoder.num_parameters()}")
    step, prior, latents = 0, [], None
    if args.resume:
        entries = _load_checkpoint(Path(args.resume), chash, "stage-2")
        for store in (encoder.store, decoder.store, view_enc.store):
            store.load_entries(entries)
        step = int(entries["__step"][0])
        prior = _read_trace(Path(args.resume))[:step]
        if step >= ae_cfg.total_steps:
            latents = np.stack([entries[f"latent/{r.shape_id}"] for r in records])
        log.info("resuming stage 2 from step %d", step)
    ae_total = ae_cfg.total_steps
    ae_trace = [_untag(t) for t in prior if t["phase"] == "ae"]
    view_trace = [_untag(t) for t in prior if t["phase"] == "view"]
    if latents is None:
        res = pretrain_autoencoder([r.grids for r in records], encoder, decoder, ae_cfg,
                                   start_step=step, trace=ae_trace)
        ae_trace, latents = res.trace, res.latents
    view_trace = train_singleview_encoder(view_enc, view_inputs(records, config), latents, view_cfg,
                                          start_step=max(step - ae_total, 0), trace=view_trace)
    trace = [dict(t, phase="ae") for t in ae_trace] + [dict(t, phase="view") for t in view_trace]
    entries = {}
    for store in (encoder.store, decoder.store, view_enc.store):
        entries.update(store.to_entries())
    for r, z in zip(records, latents):
        entries[f"latent/{r.shape_id}"] = z
    total = ae_total + view_cfg.steps
    entries["__step"] = np.array([float(total)])
    entries.update(config_entry(chash))
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_checkpoint(out, entries)
    write_trace(trace, _trace_path(out))
    print(f"stage 2 trained to step {total}; checkpoint {out}")
    return EXIT_OK


def cmd_infer(args, config: PipelineConfig) -> int:
    sketch = camera.load_sketch(args.sketch)
    s = config.data.image_size
    if sketch.shape != (s, s):
        raise ValueError(f"sketch is {sketch.shape[1]}x{sketch.shape[0]} but the model expects {s}x{s}")
    model = Sketch25DModel(config.sketch25d())
    model.load_entries(_load_checkpoint(Path(args.ckpt_25d), config.stage1_hash(), "stage-1"))
    stage2 = _load_checkpoint(Path(args.ckpt_3d), config.stage2_hash(), "stage-2")
    decoder = ImplicitDecoder(config.decoder())
    decoder.store.load_entries(stage2)
    view_enc = ViewEncoder(config.view_encoder())
    view_enc.store.load_entries(stage2)

    v = args.view_index if args.view_index is not None else view_index(config)
    if not 0 <= v < config.data.num_views:
        raise UsageError(f"view index {v} out of range for {config.data.num_views} views")
    maps = model.predict(sketch[None])[0]
    selected = camera.ViewMap25D.from_channels(maps[v]).canonical()
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    camera.save_view_map(selected, args.map_out or out.with_suffix(".s2m25d"))
    image = sketch[None] if config.view.input == "sketch" else selected.to_channels()
    z = view_enc.encode(image[None])[0]
    resolution = args.resolution or config.infer.resolution
    mesh = extract_mesh(decoder, z, resolution, config.infer.threshold, config.infer.smooth_iterations)
    save_obj(mesh, out)
    if mesh.is_empty:
        print(f"warning: empty surface; wrote empty mesh to {out}", file=sys.stderr)
        return EXIT_EMPTY
    print(f"wrote {out} ({len(mesh.vertices)} vertices, {len(mesh.faces)} faces)")
    return EXIT_OK


def cmd_eval(args, config: PipelineConfig) -> int:
    pred = load_obj(args.pred)
    seed = config.run.seed
    if args.metric == "mesh_chamfer":
        report = chamfer_mesh(pred, load_obj(args.gt), args.samples, seed)
    elif args.metric == "pointcloud_chamfer":
        if args.gt.endswith(".xyz"):
            gt = load_points(args.gt)
        else:
            gt = sample_surface(load_obj(args.gt), args.samples, seed)
        report = chamfer_mesh_to_cloud(pred, gt, args.samples, seed)
    else:
        n = args.resolution
        value = voxel_iou(voxelize(pred, n), voxelize(load_obj(args.gt), n))
        report = EvalReport("voxel_iou", float(value), n ** 3, seed, units="dimensionless", formula="|A&B|/|A|B|")
    print(report.line())
    if args.record:
        report.write_record(args.record)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="pipeline config file")
    common.add_argument("--seed", type=int, help="overrides run.seed")
    common.add_argument("--threads", type=int, help="BLAS threads (default: S2M_THREADS, then run.threads)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="s2m", description="Sketch to 2.5D maps to implicit field to mesh.")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", parents=[common], help="write a synthetic primitive dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--shapes", help="comma-separated kinds (default: data.shapes)")
    g.set_defaults(func=cmd_gen_synth)

    t = sub.add_parser("train-25d", parents=[common], help="train the sketch-to-2.5D network")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--steps", type=int, help="total step count (overrides stage1.steps)")
    t.set_defaults(func=cmd_train_25d)

    t = sub.add_parser("train-implicit", parents=[common], help="pretrain the autoencoder and view encoder")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--resume", help="continue from this checkpoint")
    t.add_argument("--layers", type=int, choices=(5, 6), help="decoder depth (overrides implicit.num_fc_layers)")
    t.set_defaults(func=cmd_train_implicit)

    i = sub.add_parser("infer", parents=[common], help="sketch to mesh")
    i.add_argument("--sketch", required=True)
    i.add_argument("--ckpt-25d", required=True)
    i.add_argument("--ckpt-3d", required=True)
    i.add_argument("--out", required=True, help="output OBJ")
    i.add_argument("--view-index", type=int)
    i.add_argument("--resolution", type=int)
    i.add_argument("--map-out", help="where to write the selected 2.5D map (default: next to the OBJ)")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", parents=[common], help="compare a predicted mesh with ground truth")
    e.add_argument("--pred", required=True)
    e.add_argument("--gt", required=True, help="OBJ mesh, or .xyz cloud for pointcloud_chamfer")
    e.add_argument("--metric", default="mesh_chamfer", choices=METRICS)
    e.add_argument("--samples", type=int, default=10_000)
    e.add_argument("--resolution", type=int, default=32, help="grid size for voxel_iou")
    e.add_argument("--record", help="write a JSON record of the report here")
    e.set_defaults(func=cmd_eval)
    return p


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config.run.seed = args.seed
        threads = _thread_count(args.threads, config)
        if threads < 1:
            raise UsageError("--threads must be >= 1")
        with threadpool_limits(limits=threads):
            return args.func(args, config)
    except (UsageError, ConfigError) as exc:
        print(f"s2m: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - reported and mapped to the runtime exit code
        print(f"s2m: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
