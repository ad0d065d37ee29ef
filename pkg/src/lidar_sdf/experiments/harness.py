"""Experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import dataclasses
import hashlib
import logging
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional

import numpy as np

from ..augment import Dataset, build_dataset
from ..model import MlpConfig, SdfModel, TrainConfig, batch_loss, parameter_count, train
from ..pointcloud import PointCloud, filter_classes, ground_filter
from ..reconstruct import birds_eye_slice
from ..spatial import default_leaf_capacity
from ..synthetic import Scene, observed_shell, simulate_scan
from . import plots
from .config import RunConfig

log = logging.getLogger(__name__)

INVALID_CONF_TOL = 1e-6
ENCODER_ROWS = (("ANN", "UNIFORM", False, "uniform"),
                ("ANN", "GAUSSIAN", False, "gaussian"),
                ("ANN + FF ENCODER", "GAUSSIAN", True, "gaussian"))


def fmt(x: float) -> str:
    return repr(float(x))


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def cloud_digest(cloud: PointCloud) -> str:
    h = hashlib.sha256(np.ascontiguousarray(cloud.positions, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(cloud.sensor_origin, dtype="<f8").tobytes())
    return h.hexdigest()


def obstacles(cfg: RunConfig, cloud: PointCloud) -> PointCloud:
    """Class filter then ground filter; returns the obstacle points."""
    fc = cfg.filter.build()
    if cloud.class_ids is not None or fc.drop_class_ids:
        cloud = filter_classes(cloud, fc)
    kept, _ = ground_filter(cloud, fc)
    return kept


def scan_or_cloud(cfg: RunConfig, scene: Optional[Scene] = None,
                  cloud: Optional[PointCloud] = None) -> PointCloud:
    if (scene is None) == (cloud is None):
        raise ValueError("provide exactly one of a scene or a point cloud")
    if scene is not None:
        return simulate_scan(scene, cfg.scan.build())
    return obstacles(cfg, cloud)


def make_dataset(cloud: PointCloud, cfg: RunConfig, method: Optional[str] = None,
                 seed: Optional[int] = None) -> Dataset:
    spec = cfg.sample_spec()
    if seed is not None:
        spec = dataclasses.replace(spec, seed=seed)
    leaf = default_leaf_capacity(len(cloud), cfg.sampling.leaf_count)
    return build_dataset(cloud, spec, method or cfg.sampling.method,
                         cfg.confidence.build(spec), leaf_capacity=leaf)


def fit(dataset: Dataset, mc: MlpConfig, tc: TrainConfig):
    log.info("training %d samples: %d x %d %s, skip=%s, encoder=%s, %d epochs",
             len(dataset), mc.hidden_layers, mc.hidden_width, mc.activation,
             mc.skip_connections, mc.use_encoder, tc.epochs)
    return train(dataset, mc, tc)


def held_out_loss(model: SdfModel, test: Dataset, tc: TrainConfig) -> float:
    return batch_loss(model, test.batch(), tc)


# --- reconstruction quality -------------------------------------------------

def shell_metrics(field, scene: Scene, returns: np.ndarray, cfg: RunConfig) -> dict:
    """Sign agreement and mean absolute error on the observed surface shell."""
    ev = cfg.evaluation
    pts, true = observed_shell(scene, cfg.scan.build(), ev.shell_samples, ev.shell_half_width,
                               seed=ev.shell_seed, returns=returns, coverage_radius=ev.coverage_radius)
    pred, _ = field.predict(pts)
    return {
        "n_points": len(pts),
        "sign_agreement": float(np.mean(np.sign(pred) == np.sign(true))),
        "mean_abs_error": float(np.mean(np.abs(pred - true))),
    }


def slice_components(field, cfg: RunConfig):
    sc = cfg.slice
    sl = birds_eye_slice(field, sc.z, sc.bounds, sc.resolution, sc.band)
    return sl, sl.negative_components()


# --- augmentation comparison ------------------------------------------------

def _arm_configs(cfg: RunConfig, use_encoder: bool, epochs: int):
    mc = dataclasses.replace(cfg.model, use_encoder=use_encoder)
    tc = dataclasses.replace(cfg.train, epochs=epochs)
    return mc, tc


def compare_augmentation(cloud: PointCloud, cfg: RunConfig, out: Path) -> dict:
    """Train one model per augmentation method and score both on one shared set.

    The shared evaluation set is drawn with the uniform sampler and the next
    sampling seed, so it covers free space and the whole truncation band.
    """
    out = Path(out)
    ex, ev = cfg.experiments, cfg.evaluation
    mc, tc = _arm_configs(cfg, ex.augment_use_encoder, ex.compare_epochs)
    evaluation = make_dataset(cloud, cfg, "uniform", seed=cfg.sampling.seed + 1)
    summary, scatter, digests = [], [], {"evaluation": evaluation.digest()}
    for method in ("uniform", "gaussian"):
        data = make_dataset(cloud, cfg, method)
        digests[method] = data.digest()
        tr, te = data.split(ev.test_fraction, ev.split_seed)
        model, _ = fit(tr, mc, tc)
        sdf_pred, conf_pred = model.predict(evaluation.positions)
        valid = (conf_pred >= 0) & (conf_pred <= 1 + INVALID_CONF_TOL)
        negative_invalid = int(np.count_nonzero((evaluation.sdf < 0) & (conf_pred < 0)))
        summary.append((method, held_out_loss(model, te, tc), int((~valid).sum()), negative_invalid))
        for k in range(len(evaluation)):
            scatter.append((method, k, evaluation.sdf[k], sdf_pred[k], conf_pred[k], int(valid[k])))

    loss_csv, scatter_csv = out / "augmentation_loss.csv", out / "augmentation_scatter.csv"
    lines = ["method,final_huber_loss,invalid_confidence,negative_sdf_conf_below_zero"]
    lines += [f"{m},{fmt(loss)},{bad},{neg}" for m, loss, bad, neg in summary]
    loss_csv.write_text("\n".join(lines) + "\n")
    lines = ["method,index,sdf_label,sdf_pred,conf_pred,valid_flag"]
    lines += [f"{m},{k},{fmt(a)},{fmt(b)},{fmt(c)},{v}" for m, k, a, b, c, v in scatter]
    scatter_csv.write_text("\n".join(lines) + "\n")
    plots.plot_confidence_scatter(scatter_csv, out / "augmentation_scatter.svg")
    plots.plot_bars(loss_csv, out / "augmentation_loss.svg", ("method",), "final_huber_loss",
                    "Final Huber loss by augmentation")
    return {
        "loss": {m: loss for m, loss, _, _ in summary},
        "negative_conf_below_zero": sum(neg for *_, neg in summary),
        "digests": digests,
        "artifacts": [loss_csv, scatter_csv, out / "augmentation_scatter.svg", out / "augmentation_loss.svg"],
    }


# --- encoder comparison -----------------------------------------------------

def compare_encoder(cloud: PointCloud, cfg: RunConfig, out: Path) -> dict:
    out = Path(out)
    ex, ev = cfg.experiments, cfg.evaluation
    rows, digests = [], {}
    for model_name, aug_name, use_encoder, method in ENCODER_ROWS:
        data = make_dataset(cloud, cfg, method)
        digests[f"{model_name}/{aug_name}"] = data.digest()
        tr, te = data.split(ev.test_fraction, ev.split_seed)
        mc, tc = _arm_configs(cfg, use_encoder, ex.compare_epochs)
        model, _ = fit(tr, mc, tc)
        rows.append((model_name, aug_name, held_out_loss(model, te, tc)))
    csv_path = out / "encoder_comparison.csv"
    lines = ["model,augmentation,final_huber_loss"] + [f"{m},{a},{fmt(v)}" for m, a, v in rows]
    csv_path.write_text("\n".join(lines) + "\n")
    plots.plot_bars(csv_path, out / "encoder_comparison.svg", ("model", "augmentation"),
                    "final_huber_loss", "Final Huber loss by model")
    return {"rows": rows, "digests": digests, "artifacts": [csv_path, out / "encoder_comparison.svg"]}


# --- depth sweep ------------------------------------------------------------

def _sweep_job(args):
    layers, skip, tr, te, mc, tc = args
    mc = dataclasses.replace(mc, hidden_layers=layers, skip_connections=skip)
    model, _ = fit(tr, mc, tc)
    return layers, skip, model.n_parameters(), held_out_loss(model, te, tc)


def sweep_configs(cfg: RunConfig) -> tuple[MlpConfig, TrainConfig]:
    ex = cfg.experiments
    mc = dataclasses.replace(cfg.model, activation="relu", hidden_width=64, use_encoder=ex.sweep_use_encoder)
    tc = dataclasses.replace(cfg.train, epochs=ex.sweep_epochs)
    return mc, tc


def sweep_depth(cloud: PointCloud, cfg: RunConfig, out: Path, threads: int = 1) -> dict:
    """Every depth with and without skip connections on one dataset and split."""
    out = Path(out)
    mc, tc = sweep_configs(cfg)
    data = make_dataset(cloud, cfg)
    tr, te = data.split(cfg.evaluation.test_fraction, cfg.evaluation.split_seed)
    jobs = [(layers, skip, tr, te, mc, tc) for skip in (False, True)
            for layers in cfg.experiments.sweep_layers]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    for layers, skip, n_params, _ in results:
        expected = parameter_count(layers, mc.hidden_width, mc.input_dim)
        if n_params != expected:
            raise RuntimeError(f"parameter count {n_params} != formula {expected} at {layers} layers")
    csv_path = out / "depth_sweep.csv"
    lines = ["layers,skip,params,final_test_loss"]
    lines += [f"{layers},{int(skip)},{n},{fmt(loss)}" for layers, skip, n, loss in results]
    csv_path.write_text("\n".join(lines) + "\n")
    plots.plot_depth_sweep(csv_path, out / "depth_sweep.svg")
    return {"rows": results, "digests": {"dataset": data.digest()},
            "artifacts": [csv_path, out / "depth_sweep.svg"]}
