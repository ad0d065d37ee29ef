"""Analytic obstacle scenes and a simulated spinning LiDAR.

Scenes are unions of spheres, boxes and vertical cylinders with closed-form
signed distances.  ``simulate_scan`` sphere-traces every beam of a scanner
against the scene, which gives point clouds whose ground truth is known
exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .augment import Dataset, SampleSpec, build_dataset
from .confidence import ConfidenceParams
from .pointcloud import PointCloud
from .spatial import build_index, default_leaf_capacity, nearest_many

PRIMITIVE_KINDS = ("sphere", "box", "cylinder")


class SceneError(ValueError):
    pass


def _vec3(value, name):
    v = np.asarray(value, dtype=np.float64).reshape(-1)
    if v.shape != (3,) or not np.all(np.isfinite(v)):
        raise SceneError(f"{name} must be three finite numbers")
    return v


@dataclass(frozen=True, eq=False)
class Primitive:
    kind: str
    center: np.ndarray
    radius: float = 0.0
    half_extents: Optional[np.ndarray] = None
    half_height: float = 0.0

    def __post_init__(self):
        if self.kind not in PRIMITIVE_KINDS:
            raise SceneError(f"unknown primitive kind {self.kind!r}")
        object.__setattr__(self, "center", _vec3(self.center, "center"))
        if self.kind == "box":
            half = _vec3(self.half_extents, "half_extents")
            if np.any(half <= 0):
                raise SceneError("box half_extents must be > 0")
            object.__setattr__(self, "half_extents", half)
        elif not self.radius > 0:
            raise SceneError(f"{self.kind} radius must be > 0")
        if self.kind == "cylinder" and not self.half_height > 0:
            raise SceneError("cylinder half_height must be > 0")

    def sdf(self, p: np.ndarray) -> np.ndarray:
        q = np.asarray(p, dtype=np.float64) - self.center
        if self.kind == "sphere":
            return np.linalg.norm(q, axis=-1) - self.radius
        if self.kind == "box":
            d = np.abs(q) - self.half_extents
            outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
            return outside + np.minimum(d.max(axis=-1), 0.0)
        radial = np.hypot(q[..., 0], q[..., 1]) - self.radius
        vertical = np.abs(q[..., 2]) - self.half_height
        d = np.stack([radial, vertical], axis=-1)
        return np.linalg.norm(np.maximum(d, 0.0), axis=-1) + np.minimum(d.max(axis=-1), 0.0)

    def bounds(self):
        if self.kind == "sphere":
            half = np.full(3, self.radius)
        elif self.kind == "box":
            half = self.half_extents
        else:
            half = np.array([self.radius, self.radius, self.half_height])
        return self.center - half, self.center + half

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "center": self.center.tolist()}
        if self.kind == "box":
            out["half_extents"] = self.half_extents.tolist()
        else:
            out["radius"] = self.radius
        if self.kind == "cylinder":
            out["half_height"] = self.half_height
        return out

    def translated(self, offset) -> "Primitive":
        return Primitive(self.kind, self.center + np.asarray(offset, dtype=np.float64),
                         self.radius, self.half_extents, self.half_height)


def sphere(center, radius) -> Primitive:
    return Primitive("sphere", center, radius=radius)


def box(center, half_extents) -> Primitive:
    return Primitive("box", center, half_extents=half_extents)


def cylinder(center, radius, half_height) -> Primitive:
    return Primitive("cylinder", center, radius=radius, half_height=half_height)


@dataclass(frozen=True)
class Scene:
    primitives: tuple

    def __post_init__(self):
        prims = tuple(self.primitives)
        if not prims:
            raise SceneError("a scene needs at least one primitive")
        object.__setattr__(self, "primitives", prims)

    def sdf(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        return np.min([prim.sdf(p) for prim in self.primitives], axis=0)

    def bounds(self):
        lows, highs = zip(*(prim.bounds() for prim in self.primitives))
        return np.min(lows, axis=0), np.max(highs, axis=0)

    def translated(self, offset) -> "Scene":
        return Scene(tuple(p.translated(offset) for p in self.primitives))

    def to_dict(self) -> dict:
        return {"primitives": [p.to_dict() for p in self.primitives]}


def analytic_sdf(scene: Scene, p):
    value = scene.sdf(p)
    return float(value) if np.ndim(value) == 0 else value


class AnalyticField:
    """Wraps a scene in the ``predict(points) -> (sdf, confidence)`` interface."""

    def __init__(self, scene: Scene):
        self.scene = scene

    def predict(self, points):
        sdf = self.scene.sdf(np.asarray(points, dtype=np.float64).reshape(-1, 3))
        return sdf, np.ones_like(sdf)

    __call__ = predict


_PRIMITIVE_KEYS = {
    "sphere": {"kind", "center", "radius"},
    "box": {"kind", "center", "half_extents"},
    "cylinder": {"kind", "center", "radius", "half_height"},
}


def scene_from_dict(doc: dict) -> Scene:
    if not isinstance(doc, dict) or set(doc) != {"primitives"}:
        raise SceneError("scene document must have exactly one key, 'primitives'")
    prims = []
    for i, item in enumerate(doc["primitives"]):
        kind = item.get("kind")
        if kind not in _PRIMITIVE_KEYS:
            raise SceneError(f"primitives[{i}]: unknown kind {kind!r}")
        keys = set(item)
        if keys != _PRIMITIVE_KEYS[kind]:
            extra, missing = keys - _PRIMITIVE_KEYS[kind], _PRIMITIVE_KEYS[kind] - keys
            raise SceneError(f"primitives[{i}]: unexpected {sorted(extra)} missing {sorted(missing)}")
        params = {k: v for k, v in item.items() if k != "kind"}
        try:
            prims.append(Primitive(kind, **params))
        except (TypeError, ValueError) as exc:
            raise SceneError(f"primitives[{i}]: {exc}") from exc
    return Scene(tuple(prims))


def load_scene(path) -> Scene:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneError(f"cannot read scene {path}: {exc}") from exc
    return scene_from_dict(doc)


def save_scene(scene: Scene, path) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2) + "\n")


def street_scene() -> Scene:
    """Benchmark scene: a sphere and a box on either side of the road."""
    return Scene((sphere((6.0, 2.0, 0.0), 1.0), box((8.0, -3.0, 0.0), (2.0, 1.0, 1.0))))


@dataclass(frozen=True)
class ScanConfig:
    azimuth_steps: int = 128
    elevations: tuple = field(default_factory=lambda: tuple(np.deg2rad(np.linspace(-12.0, 12.0, 16)).tolist()))
    max_range: float = 50.0
    origin: tuple = (0.0, 0.0, 0.0)
    surface_eps: float = 1e-4
    max_steps: int = 2000

    def __post_init__(self):
        if self.azimuth_steps < 1:
            raise SceneError("azimuth_steps must be >= 1")
        if not self.max_range > 0:
            raise SceneError("max_range must be > 0")
        object.__setattr__(self, "elevations", tuple(float(e) for e in self.elevations))
        object.__setattr__(self, "origin", tuple(_vec3(self.origin, "origin").tolist()))

    def directions(self) -> np.ndarray:
        """Unit beam directions ordered by (elevation index, azimuth index)."""
        az = 2.0 * np.pi * np.arange(self.azimuth_steps) / self.azimuth_steps
        el = np.asarray(self.elevations, dtype=np.float64)
        if el.size == 0:
            return np.zeros((0, 3))
        E, A = np.meshgrid(el, az, indexing="ij")
        d = np.stack([np.cos(E) * np.cos(A), np.cos(E) * np.sin(A), np.sin(E)], axis=-1)
        return d.reshape(-1, 3)


def sphere_trace(scene: Scene, origin, directions, max_range: float, surface_eps: float = 1e-4,
                 max_steps: int = 2000, trace_log: Optional[list] = None):
    """March every ray by the local distance value.

    Returns ``(hit, t)``; ``t`` is the marched distance for hits and ``inf``
    otherwise.  ``trace_log``, if given, collects the sdf at every visited
    point of every still-active ray.
    """
    origin = np.asarray(origin, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    t = np.zeros(len(directions))
    active = np.ones(len(directions), dtype=bool)
    hit = np.zeros(len(directions), dtype=bool)
    for _ in range(max_steps):
        if not active.any():
            break
        ids = np.flatnonzero(active)
        d = scene.sdf(origin + t[ids, None] * directions[ids])
        if trace_log is not None:
            trace_log.append(d.copy())
        done = d < surface_eps
        hit[ids[done]] = True
        active[ids[done]] = False
        go = ids[~done]
        t[go] += d[~done]
        escaped = t[go] > max_range
        active[go[escaped]] = False
    t = np.where(hit, t, np.inf)
    return hit, t


def simulate_scan(scene: Scene, config: ScanConfig) -> PointCloud:
    origin = np.asarray(config.origin, dtype=np.float64)
    if analytic_sdf(scene, origin) <= 0:
        raise SceneError("sensor origin lies inside an obstacle")
    directions = config.directions()
    hit, t = sphere_trace(scene, origin, directions, config.max_range,
                          config.surface_eps, config.max_steps)
    points = origin + t[hit, None] * directions[hit]
    ring = np.repeat(np.arange(len(config.elevations)), config.azimuth_steps)[hit] if len(directions) else np.zeros(0, int)
    return PointCloud(positions=points.reshape(-1, 3), sensor_origin=origin, ring=ring)


@dataclass(frozen=True, eq=False)
class OracleDataset:
    dataset: Dataset
    true_sdf: np.ndarray
    cloud: PointCloud


def oracle_dataset(scene: Scene, config: ScanConfig, spec: SampleSpec, method: str = "gaussian",
                   conf_params: Optional[ConfidenceParams] = None) -> OracleDataset:
    """Run scan + augmentation and keep the analytic sdf of every sample alongside."""
    cloud = simulate_scan(scene, config)
    dataset = build_dataset(cloud, spec, method, conf_params)
    return OracleDataset(dataset, scene.sdf(dataset.positions), cloud)


def surface_normals(scene: Scene, points, h: float = 1e-5) -> np.ndarray:
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    grad = np.empty_like(p)
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        grad[:, axis] = (scene.sdf(p + step) - scene.sdf(p - step)) / (2 * h)
    norm = np.linalg.norm(grad, axis=1, keepdims=True)
    return grad / np.where(norm > 0, norm, 1.0)


def observed_shell(scene: Scene, config: ScanConfig, n: int, half_width: float = 0.5,
                   seed: int = 0, visibility_tol: float = 1e-2, returns=None,
                   coverage_radius: float = 0.3) -> tuple[np.ndarray, np.ndarray]:
    """Random points within ``half_width`` of a surface the scanner can see.

    A point qualifies when its closest surface point is the first return along
    the beam from the sensor and that beam lies inside the scanner's
    elevation fan.  When ``returns`` (an array of scan points) is given, the
    closest surface point must also lie within ``coverage_radius`` of one of
    them, which drops surface patches that fell between beams.
    Returns ``(points, true_sdf)``.
    """
    index = None
    if returns is not None:
        returns = np.asarray(returns, dtype=np.float64).reshape(-1, 3)
        if len(returns) == 0:
            raise SceneError("no scan returns to measure coverage against")
        index = build_index(returns, default_leaf_capacity(len(returns)))
    rng = np.random.default_rng(seed)
    lo, hi = scene.bounds()
    lo, hi = lo - half_width, hi + half_width
    origin = np.asarray(config.origin, dtype=np.float64)
    el = np.asarray(config.elevations)
    el_lo, el_hi = (el.min(), el.max()) if el.size else (0.0, 0.0)
    kept, values = [], []
    count = 0
    while count < n:
        p = rng.uniform(lo, hi, (4 * n, 3))
        s = scene.sdf(p)
        p, s = p[np.abs(s) <= half_width], s[np.abs(s) <= half_width]
        if len(p) == 0:
            continue
        foot = p - s[:, None] * surface_normals(scene, p)
        offset = foot - origin
        dist = np.linalg.norm(offset, axis=1)
        direction = offset / dist[:, None]
        elevation = np.arcsin(np.clip(direction[:, 2], -1.0, 1.0))
        in_fan = (elevation >= el_lo) & (elevation <= el_hi)
        _, t = sphere_trace(scene, origin, direction, dist.max() + 1.0, config.surface_eps, config.max_steps)
        visible = in_fan & (t >= dist - visibility_tol)
        if index is not None and visible.any():
            _, gap = nearest_many(index, foot[visible])
            visible[np.flatnonzero(visible)[gap > coverage_radius]] = False
        kept.append(p[visible])
        values.append(s[visible])
        count += int(visible.sum())
    return np.concatenate(kept)[:n], np.concatenate(values)[:n]
