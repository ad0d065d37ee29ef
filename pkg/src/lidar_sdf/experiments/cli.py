"""Command line entry point: ``lidar-sdf <stage> [options]``.

Every stage writes its artifacts plus ``manifest.json`` into ``--out``.  The
manifest stores the resolved configuration and a hash of every input, and
``lidar-sdf rerun --manifest M --out D`` replays the stage from it.

Exit status: 0 on success, 1 on invalid input or configuration, 2 when a
stage fails at run time.
"""

from __future__ import annotations

import argparse
import datetime as dt
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .. import __version__
from ..augment import load_dataset, save_dataset
from ..model import load_checkpoint, save_checkpoint, write_loss_csv
from ..pointcloud import (PointCloudError, directed_hausdorff, filter_classes, ground_filter,
                          load_ascii_xyz, load_bin_records, write_ascii_xyz)
from ..reconstruct import marching_cubes, sample_grid, write_obj, write_pgm, write_ply, write_slice_csv
from ..synthetic import load_scene, scene_from_dict, simulate_scan
from . import harness
from .config import ConfigError, config_from_dict, load_config

log = logging.getLogger("lidar_sdf")

MANIFEST = "manifest.json"
MANIFEST_VERSION = 1
STAGES = ("simulate", "ingest", "augment", "train", "eval", "extract", "slice",
          "sweep-depth", "compare-augment", "compare-encoder")


class ValidationError(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ValidationError(message)


def _now() -> str:
    return dt.datetime.now(dt.timezone.utc).isoformat(timespec="seconds")


def _file_hash(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _require(path, what: str) -> Path:
    if path is None:
        raise ValidationError(f"missing input: --{what} is required for this stage")
    p = Path(path)
    if not p.is_file():
        raise ValidationError(f"missing input: {what} file {p} does not exist")
    return p


def _load_cloud(path: Path, labels=None):
    if path.suffix == ".bin":
        return load_bin_records(path, class_file=labels)
    return load_ascii_xyz(path)


# --- stages -------------------------------------------------------------------
# Each stage takes (cfg, inputs, out, options) and returns (artifact paths, extra manifest data).

def stage_simulate(cfg, inputs, out, options):
    scene = load_scene(inputs["scene"])
    cloud = simulate_scan(scene, cfg.scan.build())
    write_ascii_xyz(cloud, out / "cloud.xyz")
    return [out / "cloud.xyz"], {"points": len(cloud)}


def stage_ingest(cfg, inputs, out, options):
    cloud = _load_cloud(inputs["cloud"], inputs.get("labels"))
    fc = cfg.filter.build()
    extra = {}
    # the change gate runs on the raw scans, before ground removal
    if "prev" in inputs:
        prev = _load_cloud(inputs["prev"])
        extra["hausdorff"] = directed_hausdorff(cloud, prev)
        extra["changed"] = extra["hausdorff"] > fc.hausdorff_threshold
    if cloud.class_ids is not None or fc.drop_class_ids:
        cloud = filter_classes(cloud, fc)
    kept, floor = ground_filter(cloud, fc)
    write_ascii_xyz(kept, out / "obstacles.xyz")
    paths = [out / "obstacles.xyz"]
    if len(floor):
        write_ascii_xyz(floor, out / "floor.xyz")
        paths.append(out / "floor.xyz")
    extra.update(obstacles=len(kept), floor=len(floor))
    return paths, extra


def stage_augment(cfg, inputs, out, options):
    cloud = _load_cloud(inputs["cloud"])
    data = harness.make_dataset(cloud, cfg, options.get("method"))
    save_dataset(data, out / "dataset.txt")
    return [out / "dataset.txt"], {"samples": len(data), "dataset_digest": data.digest()}


def stage_train(cfg, inputs, out, options):
    data = load_dataset(inputs["dataset"])
    model, history = harness.fit(data, cfg.model, cfg.train)
    save_checkpoint(model, out / "model.ckpt")
    write_loss_csv(history, out / "loss.csv")
    return [out / "model.ckpt", out / "loss.csv"], {"final_loss": history[-1] if history else None,
                                                     "dataset_digest": data.digest()}


def stage_eval(cfg, inputs, out, options):
    model = load_checkpoint(inputs["checkpoint"])
    scene = load_scene(inputs["scene"])
    returns = (_load_cloud(inputs["cloud"]).positions if "cloud" in inputs
               else simulate_scan(scene, cfg.scan.build()).positions)
    metrics = harness.shell_metrics(model, scene, returns, cfg)
    _, components = harness.slice_components(model, cfg)
    metrics["negative_components"] = components
    path = out / "metrics.csv"
    path.write_text("metric,value\n" + "".join(f"{k},{v!r}\n" for k, v in metrics.items()))
    return [path], metrics


def stage_extract(cfg, inputs, out, options):
    model = load_checkpoint(inputs["checkpoint"])
    g = cfg.grid
    mesh = marching_cubes(sample_grid(model, g.bounds, g.resolution), g.iso)
    write_obj(mesh, out / "mesh.obj")
    write_ply(mesh, out / "mesh.ply")
    summary = out / "mesh_summary.csv"
    summary.write_text("vertices,triangles,dropped_degenerate\n"
                       f"{len(mesh.vertices)},{len(mesh.triangles)},{mesh.dropped_degenerate}\n")
    return [out / "mesh.obj", out / "mesh.ply", summary], {"triangles": len(mesh)}


def stage_slice(cfg, inputs, out, options):
    model = load_checkpoint(inputs["checkpoint"])
    sl, components = harness.slice_components(model, cfg)
    write_pgm(sl.image, out / "slice.pgm")
    write_slice_csv(sl, out / "slice.csv")
    return [out / "slice.pgm", out / "slice.csv"], {"negative_components": components}


def _experiment_cloud(cfg, inputs):
    if "scene" in inputs and "cloud" in inputs:
        raise ValidationError("give either --scene or --cloud, not both")
    if "scene" in inputs:
        return harness.scan_or_cloud(cfg, scene=load_scene(inputs["scene"]))
    if "cloud" in inputs:
        return harness.scan_or_cloud(cfg, cloud=_load_cloud(inputs["cloud"], inputs.get("labels")))
    raise ValidationError("missing input: --scene or --cloud is required for this stage")


def _experiment_extra(result, cloud):
    return {"cloud_digest": harness.cloud_digest(cloud), "dataset_digests": result["digests"]}


def stage_sweep_depth(cfg, inputs, out, options):
    cloud = _experiment_cloud(cfg, inputs)
    result = harness.sweep_depth(cloud, cfg, out, options.get("threads", 1))
    best = min(result["rows"], key=lambda r: r[3])
    extra = _experiment_extra(result, cloud)
    extra["best"] = {"layers": best[0], "skip": best[1], "final_test_loss": best[3]}
    return result["artifacts"], extra


def stage_compare_augment(cfg, inputs, out, options):
    cloud = _experiment_cloud(cfg, inputs)
    result = harness.compare_augmentation(cloud, cfg, out)
    extra = _experiment_extra(result, cloud)
    extra.update(loss=result["loss"], negative_conf_below_zero=result["negative_conf_below_zero"])
    return result["artifacts"], extra


def stage_compare_encoder(cfg, inputs, out, options):
    cloud = _experiment_cloud(cfg, inputs)
    result = harness.compare_encoder(cloud, cfg, out)
    return result["artifacts"], _experiment_extra(result, cloud)


STAGE_FUNCS = {
    "simulate": stage_simulate, "ingest": stage_ingest, "augment": stage_augment,
    "train": stage_train, "eval": stage_eval, "extract": stage_extract, "slice": stage_slice,
    "sweep-depth": stage_sweep_depth, "compare-augment": stage_compare_augment,
    "compare-encoder": stage_compare_encoder,
}

STAGE_INPUTS = {
    "simulate": {"scene": True},
    "ingest": {"cloud": True, "labels": False, "prev": False},
    "augment": {"cloud": True},
    "train": {"dataset": True},
    "eval": {"checkpoint": True, "scene": True, "cloud": False},
    "extract": {"checkpoint": True},
    "slice": {"checkpoint": True},
    "sweep-depth": {"scene": False, "cloud": False, "labels": False},
    "compare-augment": {"scene": False, "cloud": False, "labels": False},
    "compare-encoder": {"scene": False, "cloud": False, "labels": False},
}


def _seeds(cfg) -> dict:
    return {"sampling": cfg.sampling.seed, "model": cfg.model.seed, "encoder": cfg.model.encoder_seed,
            "train": cfg.train.seed, "split": cfg.evaluation.split_seed, "shell": cfg.evaluation.shell_seed}


def run_stage(stage: str, cfg, inputs: dict, out: Path, options: dict) -> dict:
    """Run one stage and write its manifest; returns the manifest."""
    out.mkdir(parents=True, exist_ok=True)
    for name, path in inputs.items():
        if not Path(path).is_file():
            raise ValidationError(f"missing input: {name} file {path} does not exist")
    recorded = {name: {"path": str(Path(p).resolve()), "sha256": _file_hash(p)} for name, p in inputs.items()}
    if "scene" in inputs:
        recorded["scene"]["content"] = load_scene(inputs["scene"]).to_dict()
    started = _now()
    artifacts, extra = STAGE_FUNCS[stage](cfg, {k: Path(v) for k, v in inputs.items()}, out, options)
    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "experiment_id": f"{stage}-{hashlib.sha256(json.dumps([cfg.to_dict(), recorded, options], sort_keys=True).encode()).hexdigest()[:12]}",
        "stage": stage,
        "code_version": __version__,
        "config": cfg.to_dict(),
        "seeds": _seeds(cfg),
        "options": options,
        "inputs": recorded,
        "artifacts": {Path(p).name: _file_hash(p) for p in artifacts},
        "results": extra,
        "started": started,
        "finished": _now(),
    }
    (out / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True, default=_json_default) + "\n")
    return manifest


def _json_default(value):
    if isinstance(value, (np.integer, np.bool_)):
        return value.item()
    if isinstance(value, np.floating):
        return float(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def rerun(manifest_path: Path, out: Path, threads: int = 1) -> dict:
    """Replay a stage from its manifest, checking the inputs have not changed."""
    try:
        doc = json.loads(Path(manifest_path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read manifest {manifest_path}: {exc}") from exc
    if doc.get("manifest_version") != MANIFEST_VERSION or doc.get("stage") not in STAGE_FUNCS:
        raise ValidationError(f"{manifest_path}: not a recognised manifest")
    cfg = config_from_dict(doc["config"])
    inputs = {}
    for name, rec in doc["inputs"].items():
        path = Path(rec["path"])
        if name == "scene" and not path.is_file():
            # the scene is stored inline, so it can be restored
            out.mkdir(parents=True, exist_ok=True)
            path = out / "scene.json"
            path.write_text(json.dumps(rec["content"], indent=2) + "\n")
            scene_from_dict(rec["content"])
        elif not path.is_file():
            raise ValidationError(f"missing input: {name} file {path} does not exist")
        elif _file_hash(path) != rec["sha256"]:
            raise ValidationError(f"input {name} ({path}) changed since the manifest was written")
        inputs[name] = path
    options = dict(doc.get("options") or {})
    if "threads" in options:
        options["threads"] = threads
    return run_stage(doc["stage"], cfg, inputs, out, options)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="lidar-sdf", description="LiDAR signed distance reconstruction pipeline")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="stage", required=True, parser_class=_Parser)
    for stage in STAGES:
        p = sub.add_parser(stage)
        p.add_argument("--out", required=True, type=Path)
        p.add_argument("--config", type=Path)
        p.add_argument("--seed", type=int, help="reseed every random stream")
        for name in STAGE_INPUTS[stage]:
            p.add_argument(f"--{name}", type=Path)
        if stage == "augment":
            p.add_argument("--method", choices=("uniform", "gaussian"))
        if stage == "sweep-depth":
            p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("rerun", help="replay a stage from its manifest")
    p.add_argument("--manifest", required=True, type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--threads", type=int, default=1)
    return parser


def _dispatch(argv) -> dict:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.stage == "rerun":
        return rerun(args.manifest, args.out, args.threads)
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    inputs = {}
    for name, required in STAGE_INPUTS[args.stage].items():
        value = getattr(args, name)
        if required:
            inputs[name] = _require(value, name)
        elif value is not None:
            inputs[name] = _require(value, name)
    options = {}
    if getattr(args, "method", None):
        options["method"] = args.method
    if args.stage == "sweep-depth":
        if args.threads < 1:
            raise ValidationError("--threads must be >= 1")
        options["threads"] = args.threads
    return run_stage(args.stage, cfg, inputs, args.out, options)


def main(argv=None) -> int:
    try:
        manifest = _dispatch(sys.argv[1:] if argv is None else argv)
    except (ValidationError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (PointCloudError, ValueError) as exc:
        print(f"error: invalid input: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - any other failure is a run-time failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps({"stage": manifest["stage"], "artifacts": sorted(manifest["artifacts"])}))
    return 0
