"""Ray-based training sample generation.

Every obstacle point defines a ray from the sensor origin.  Samples drawn
before the return (``t < t_hit``) are free space and get a positive signed
distance; samples past it get a negative one, truncated at
``truncation_dmax`` beyond the return.  The magnitude always comes from the
nearest obstacle point, the sign only from the side of the return the sample
was drawn on.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from .confidence import ConfidenceParams, confidence_value, dmax_from_dataset
from .pointcloud import PointCloud
from .spatial import SurfaceIndex, build_index, default_leaf_capacity, nearest_many

METHODS = ("uniform", "gaussian")

TAG_SURFACE, TAG_POSITIVE, TAG_NEGATIVE = 0, 1, -1


@dataclass(frozen=True)
class SampleSpec:
    n_positive: int = 4
    n_negative: int = 4
    truncation_dmax: float = 3.0
    gaussian_sigma: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if self.n_positive < 0 or self.n_negative < 0:
            raise ValueError("sample counts must be >= 0")
        if not self.truncation_dmax > 0:
            raise ValueError("truncation_dmax must be > 0")
        if not self.gaussian_sigma > 0:
            raise ValueError("gaussian_sigma must be > 0")


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_hit: float

    def at(self, t):
        t = np.asarray(t, dtype=np.float64)
        return self.origin + t[..., None] * self.direction


@dataclass(frozen=True, eq=False)
class Rays:
    """All rays of one scan; they share the sensor origin."""

    origin: np.ndarray
    directions: np.ndarray
    t_hit: np.ndarray

    def __len__(self):
        return len(self.t_hit)

    def __getitem__(self, i) -> Ray:
        return Ray(self.origin, self.directions[i], float(self.t_hit[i]))

    def __iter__(self) -> Iterator[Ray]:
        return (self[i] for i in range(len(self)))


@dataclass(frozen=True, eq=False)
class TaggedPoints:
    positions: np.ndarray
    t: np.ndarray
    positive: np.ndarray  # True where drawn before the return
    source_ray: np.ndarray

    def __len__(self):
        return len(self.t)

    @classmethod
    def concat(cls, parts) -> "TaggedPoints":
        parts = list(parts)
        if not parts:
            return cls(np.zeros((0, 3)), np.zeros(0), np.zeros(0, bool), np.zeros(0, np.int64))
        return cls(
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.t for p in parts]),
            np.concatenate([p.positive for p in parts]),
            np.concatenate([p.source_ray for p in parts]),
        )


@dataclass(frozen=True)
class LabeledSample:
    position: np.ndarray
    sdf: float
    confidence: float
    source_ray: int


@dataclass(frozen=True, eq=False)
class Batch:
    positions: np.ndarray
    sdf: np.ndarray
    confidence: np.ndarray

    def __len__(self):
        return len(self.sdf)


@dataclass(frozen=True, eq=False)
class Dataset:
    positions: np.ndarray
    sdf: np.ndarray
    confidence: np.ndarray
    source_ray: np.ndarray
    tag: np.ndarray
    spec: SampleSpec
    method: str
    surface_count: int
    conf_params: Optional[ConfidenceParams] = None
    depth: Optional[np.ndarray] = field(default=None)

    def __len__(self):
        return len(self.sdf)

    def __getitem__(self, i) -> LabeledSample:
        return LabeledSample(self.positions[i].copy(), float(self.sdf[i]),
                             float(self.confidence[i]), int(self.source_ray[i]))

    def batch(self, index=None) -> Batch:
        if index is None:
            return Batch(self.positions, self.sdf, self.confidence)
        return Batch(self.positions[index], self.sdf[index], self.confidence[index])

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            positions=self.positions[index],
            sdf=self.sdf[index],
            confidence=self.confidence[index],
            source_ray=self.source_ray[index],
            tag=self.tag[index],
            spec=self.spec,
            method=self.method,
            surface_count=int(np.count_nonzero(self.tag[index] == TAG_SURFACE)),
            conf_params=self.conf_params,
            depth=None if self.depth is None else self.depth[index],
        )

    def split(self, test_fraction: float, seed: int) -> tuple["Dataset", "Dataset"]:
        """Seeded shuffle split into ``(train, test)``."""
        perm = np.random.default_rng(seed).permutation(len(self))
        n_test = int(round(test_fraction * len(self)))
        return self.subset(np.sort(perm[n_test:])), self.subset(np.sort(perm[:n_test]))

    def digest(self) -> str:
        return hashlib.sha256(dataset_text(self).encode()).hexdigest()


def rays_from_cloud(obstacles: PointCloud) -> Rays:
    origin = obstacles.sensor_origin
    offsets = obstacles.positions - origin
    t_hit = np.sqrt(np.einsum("ij,ij->i", offsets, offsets))
    if len(t_hit) == 0:
        raise ValueError("no obstacle points to cast rays to")
    if np.any(t_hit == 0):
        raise ValueError(f"zero-length ray: point {int(np.flatnonzero(t_hit == 0)[0])} sits at the sensor origin")
    return Rays(origin.copy(), offsets / t_hit[:, None], t_hit)


def ray_generator(seed: int, ray_index: int) -> np.random.Generator:
    """Independent stream per ray so results do not depend on iteration order."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ray_index,)))


def _tagged(ray: Ray, t, positive, ray_index) -> TaggedPoints:
    return TaggedPoints(ray.at(t).reshape(-1, 3), t, positive,
                        np.full(len(t), ray_index, dtype=np.int64))


def sample_uniform(ray: Ray, spec: SampleSpec, rng: np.random.Generator, ray_index: int = 0) -> TaggedPoints:
    t_pos = rng.uniform(0.0, ray.t_hit, spec.n_positive)
    t_neg = ray.t_hit + rng.uniform(0.0, spec.truncation_dmax, spec.n_negative)
    t = np.concatenate([t_pos, t_neg])
    positive = np.arange(len(t)) < spec.n_positive
    return _tagged(ray, t, positive, ray_index)


def sample_gaussian(ray: Ray, spec: SampleSpec, rng: np.random.Generator, ray_index: int = 0) -> TaggedPoints:
    """Draw around the return, rejecting draws outside ``(0, t_hit + dmax]``."""
    total = spec.n_positive + spec.n_negative
    upper = ray.t_hit + spec.truncation_dmax
    accepted = []
    need = total
    while need > 0:
        t = rng.normal(ray.t_hit, spec.gaussian_sigma, need)
        t = t[(t > 0.0) & (t <= upper)]
        accepted.append(t)
        need -= len(t)
    t = np.concatenate(accepted) if accepted else np.zeros(0)
    return _tagged(ray, t, t <= ray.t_hit, ray_index)


SAMPLERS = {"uniform": sample_uniform, "gaussian": sample_gaussian}


def label_samples(tagged: TaggedPoints, index: SurfaceIndex, rays: Rays, spec: SampleSpec,
                  conf_params: ConfidenceParams):
    """Signed distances, confidences and penetration depths for tagged samples."""
    _, magnitude = nearest_many(index, tagged.positions)
    sdf = np.where(tagged.positive, magnitude, -magnitude)
    depth = np.where(tagged.positive, 0.0, tagged.t - rays.t_hit[tagged.source_ray])
    depth = np.clip(depth, 0.0, spec.truncation_dmax)
    confidence = confidence_value(sdf, depth, conf_params)
    return sdf, np.atleast_1d(confidence), depth


def build_dataset(obstacles: PointCloud, spec: SampleSpec, method: str = "gaussian",
                  conf_params: Optional[ConfidenceParams] = None,
                  leaf_capacity: Optional[int] = None) -> Dataset:
    """Surface points (sdf 0, confidence 1) followed by labelled ray samples."""
    if method not in SAMPLERS:
        raise ValueError(f"unknown augmentation method {method!r}; expected one of {METHODS}")
    if conf_params is None:
        conf_params = ConfidenceParams(d_max=dmax_from_dataset(spec))
    rays = rays_from_cloud(obstacles)
    surface = obstacles.positions
    index = build_index(surface, leaf_capacity or default_leaf_capacity(len(surface)))

    sampler = SAMPLERS[method]
    tagged = TaggedPoints.concat(
        sampler(rays[i], spec, ray_generator(spec.seed, i), i) for i in range(len(rays))
    )
    sdf, conf, depth = label_samples(tagged, index, rays, spec, conf_params)

    n = len(surface)
    return Dataset(
        positions=np.concatenate([surface, tagged.positions]),
        sdf=np.concatenate([np.zeros(n), sdf]),
        confidence=np.concatenate([np.ones(n), conf]),
        source_ray=np.concatenate([np.arange(n), tagged.source_ray]),
        tag=np.concatenate([np.zeros(n, np.int64),
                            np.where(tagged.positive, TAG_POSITIVE, TAG_NEGATIVE)]),
        spec=spec,
        method=method,
        surface_count=n,
        conf_params=conf_params,
        depth=np.concatenate([np.zeros(n), depth]),
    )


_HEADER_KEYS = ("method", "n_positive", "n_negative", "truncation_dmax", "gaussian_sigma",
                "seed", "surface_count", "b", "d_max")


def dataset_text(dataset: Dataset) -> str:
    spec, cp = dataset.spec, dataset.conf_params or ConfidenceParams(d_max=dataset.spec.truncation_dmax)
    values = dict(method=dataset.method, n_positive=spec.n_positive, n_negative=spec.n_negative,
                  truncation_dmax=repr(spec.truncation_dmax), gaussian_sigma=repr(spec.gaussian_sigma),
                  seed=spec.seed, surface_count=dataset.surface_count, b=repr(cp.b), d_max=repr(cp.d_max))
    lines = ["# lidar-sdf dataset " + " ".join(f"{k}={values[k]}" for k in _HEADER_KEYS)]
    rows = np.column_stack([dataset.positions, dataset.sdf, dataset.confidence])
    lines.extend(" ".join(f"{v:.9g}" for v in row) for row in rows)
    return "\n".join(lines) + "\n"


def save_dataset(dataset: Dataset, path) -> None:
    Path(path).write_text(dataset_text(dataset))


def load_dataset(path) -> Dataset:
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].startswith("# lidar-sdf dataset"):
        raise ValueError(f"{path}: missing dataset header")
    header = dict(item.split("=", 1) for item in lines[0].split()[3:])
    missing = [k for k in _HEADER_KEYS if k not in header]
    if missing:
        raise ValueError(f"{path}: header lacks {', '.join(missing)}")
    data = np.loadtxt(lines[1:], ndmin=2) if len(lines) > 1 else np.zeros((0, 5))
    if data.shape[1] != 5:
        raise ValueError(f"{path}: expected 5 columns, found {data.shape[1]}")
    spec = SampleSpec(int(header["n_positive"]), int(header["n_negative"]),
                      float(header["truncation_dmax"]), float(header["gaussian_sigma"]), int(header["seed"]))
    n_surface = int(header["surface_count"])
    sdf = data[:, 3]
    tag = np.where(sdf < 0, TAG_NEGATIVE, TAG_POSITIVE)
    tag[:n_surface] = TAG_SURFACE
    return Dataset(
        positions=data[:, :3].copy(),
        sdf=sdf.copy(),
        confidence=data[:, 4].copy(),
        source_ray=np.full(len(data), -1, dtype=np.int64),
        tag=tag,
        spec=spec,
        method=header["method"],
        surface_count=n_surface,
        conf_params=ConfidenceParams(b=float(header["b"]), d_max=float(header["d_max"])),
    )
