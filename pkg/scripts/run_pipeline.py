#!/usr/bin/env python3
"""Run the full sketch-to-mesh pipeline through the CLI and report timings.

    python scripts/run_pipeline.py --work runs/overfit --config configs/overfit.cfg

Steps: gen-synth, train-25d, train-implicit, then infer on the selected-view
sketch of every training shape and eval against its ground-truth mesh. Prints
the chamfer values and a sha256 of every artifact so reruns can be compared
byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

from sketch2mesh.cli import main as s2m
from sketch2mesh.config import load_config
from sketch2mesh.cli import view_index


def run(argv: list[str]) -> float:
    t = time.perf_counter()
    code = s2m(argv)
    if code != 0:
        sys.exit(f"s2m {' '.join(argv)} exited with {code}")
    return time.perf_counter() - t


def sha(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()[:16]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--work", required=True, help="output directory")
    ap.add_argument("--config", default="configs/overfit.cfg")
    ap.add_argument("--shape", type=int, default=0, help="index of the shape whose chamfer is the headline value")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    work = Path(args.work)
    common = ["--config", args.config, "--seed", str(args.seed), "--threads", "1"]
    data, ck1, ck2 = work / "data", work / "stage1.ckpt", work / "stage2.ckpt"
    times = {"gen-synth": run(["gen-synth", "--out", str(data), *common])}
    times["train-25d"] = run(["train-25d", "--data", str(data), "--out", str(ck1), *common])
    times["train-implicit"] = run(["train-implicit", "--data", str(data), "--out", str(ck2), *common])

    v = view_index(load_config(args.config))
    chamfers, objs = {}, []
    for shape_dir in sorted(p for p in data.iterdir() if p.is_dir()):
        obj, record = work / f"{shape_dir.name}.obj", work / f"{shape_dir.name}.eval.json"
        times[f"infer {shape_dir.name}"] = run(["infer", "--sketch", str(shape_dir / f"sketch_{v}.s2mskt"),
                                                "--ckpt-25d", str(ck1), "--ckpt-3d", str(ck2), "--out", str(obj),
                                                *common])
        run(["eval", "--pred", str(obj), "--gt", str(shape_dir / "mesh.obj"), "--metric", "mesh_chamfer",
             "--record", str(record), *common])
        chamfers[shape_dir.name] = json.loads(record.read_text())["value"]
        objs.append(obj)
    summary = {
        "chamfer": chamfers[sorted(chamfers)[args.shape]],
        "chamfer_per_shape": chamfers,
        "seconds": {k: round(t, 1) for k, t in times.items()},
        "sha256": {p.name: sha(p) for p in (ck1, ck2, *objs)},
    }
    print(json.dumps(summary, indent=2))
    (work / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")


if __name__ == "__main__":
    main()
