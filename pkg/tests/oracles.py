"""Independent reference implementations used as test oracles."""

import numpy as np

from lidar_sdf.model import SdfModel, TrainConfig, batch_loss, loss_and_gradients


def numeric_gradients(model: SdfModel, batch, tc: TrainConfig, h: float = 1e-6) -> list:
    """Central finite differences of the batch loss, one parameter at a time."""
    grads = []
    for p in model.params:
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = batch_loss(model, batch, tc)
            flat[i] = keep - h
            down = batch_loss(model, batch, tc)
            flat[i] = keep
            gflat[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def gradient_relative_error(model: SdfModel, batch, tc: TrainConfig) -> float:
    """Largest per-block ||analytic - numeric|| / (||analytic|| + ||numeric||)."""
    _, analytic = loss_and_gradients(model, batch, tc)
    numeric = numeric_gradients(model, batch, tc)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        denom = np.linalg.norm(a) + np.linalg.norm(n)
        if denom > 0:
            worst = max(worst, float(np.linalg.norm(a - n) / denom))
    return worst


def sphere_mesh_checks(mesh, center, radius, spacing):
    """(max vertex distance to the sphere, cell diagonal, edge use counts)."""
    dist = np.abs(np.linalg.norm(mesh.vertices - center, axis=1) - radius)
    tri = mesh.triangles
    edges = np.sort(np.concatenate([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]]), axis=1)
    _, counts = np.unique(edges, axis=0, return_counts=True)
    return float(dist.max()), float(np.linalg.norm(spacing)), counts
