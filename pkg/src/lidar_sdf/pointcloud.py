"""LiDAR point cloud loading, filtering and comparison.

Clouds are stored column-wise as numpy arrays: ``positions`` is ``(N, 3)``
float64, the optional per-point attributes are ``(N,)`` arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np


class PointCloudError(ValueError):
    """Raised for malformed or inconsistent point cloud input."""


@dataclass(frozen=True, eq=False)
class PointCloud:
    positions: np.ndarray
    sensor_origin: np.ndarray = field(default_factory=lambda: np.zeros(3))
    class_ids: Optional[np.ndarray] = None
    intensity: Optional[np.ndarray] = None
    ring: Optional[np.ndarray] = None
    timestamp: Optional[int] = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        origin = np.asarray(self.sensor_origin, dtype=np.float64).reshape(3)
        if not np.all(np.isfinite(pos)):
            bad = int(np.flatnonzero(~np.all(np.isfinite(pos), axis=1))[0])
            raise PointCloudError(f"non-finite coordinate at point {bad}")
        if not np.all(np.isfinite(origin)):
            raise PointCloudError("sensor origin must be finite")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "sensor_origin", origin)
        for name in ("class_ids", "intensity", "ring"):
            value = getattr(self, name)
            if value is None:
                continue
            value = np.asarray(value)
            if value.shape != (len(pos),):
                raise PointCloudError(
                    f"{name} has {value.size} entries for {len(pos)} points"
                )
            object.__setattr__(self, name, value)

    def __len__(self) -> int:
        return len(self.positions)

    def select(self, mask_or_index) -> "PointCloud":
        """Return the sub-cloud picked by a boolean mask or index array, order kept."""
        pick = lambda a: None if a is None else a[mask_or_index]
        return replace(
            self,
            positions=self.positions[mask_or_index],
            class_ids=pick(self.class_ids),
            intensity=pick(self.intensity),
            ring=pick(self.ring),
        )

    def with_class_ids(self, class_ids) -> "PointCloud":
        return replace(self, class_ids=np.asarray(class_ids, dtype=np.int64))


@dataclass(frozen=True)
class FilterConfig:
    drop_class_ids: frozenset = frozenset()
    ground_z_threshold: float = -1.563
    hausdorff_threshold: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "drop_class_ids", frozenset(int(c) for c in self.drop_class_ids))
        if not self.hausdorff_threshold >= 0:
            raise ValueError("hausdorff_threshold must be >= 0")


@dataclass(frozen=True)
class RecordLayout:
    """Fixed-size binary record: little-endian float32 fields in the given order."""

    fields: tuple = ("x", "y", "z", "intensity", "ring")
    dtype: str = "<f4"

    @property
    def record_size(self) -> int:
        return len(self.fields) * np.dtype(self.dtype).itemsize


NUSCENES_LAYOUT = RecordLayout()


def load_ascii_xyz(path) -> PointCloud:
    """Parse an ``x y z [intensity] [class_id]`` text file.

    Lines starting with ``#`` are comments, except ``# origin x y z`` and
    ``# timestamp t`` which set the sensor origin and scan timestamp.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise PointCloudError(f"cannot read {path}: {exc}") from exc

    origin = np.zeros(3)
    timestamp = None
    rows, intensity, class_ids = [], [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            words = stripped[1:].split()
            try:
                if words[:1] == ["origin"]:
                    origin = np.array([float(w) for w in words[1:4]])
                    if origin.shape != (3,):
                        raise ValueError
                elif words[:1] == ["timestamp"]:
                    timestamp = int(words[1])
            except (ValueError, IndexError):
                raise PointCloudError(f"{path}:{lineno}: malformed header {stripped!r}") from None
            continue
        words = stripped.split()
        try:
            if len(words) < 3:
                raise ValueError
            xyz = [float(w) for w in words[:3]]
            if not all(math.isfinite(v) for v in xyz):
                raise ValueError
            rows.append(xyz)
            intensity.append(float(words[3]) if len(words) > 3 else None)
            class_ids.append(int(words[4]) if len(words) > 4 else None)
        except ValueError:
            raise PointCloudError(f"{path}:{lineno}: malformed line {stripped!r}") from None

    if not rows:
        raise PointCloudError(f"{path}: zero points parsed")

    def column(values, dtype):
        if any(v is None for v in values):
            return None
        return np.array(values, dtype=dtype)

    return PointCloud(
        positions=np.array(rows),
        sensor_origin=origin,
        intensity=column(intensity, np.float64),
        class_ids=column(class_ids, np.int64),
        timestamp=timestamp,
    )


def write_ascii_xyz(cloud: PointCloud, path) -> None:
    """Write a cloud in the format read by :func:`load_ascii_xyz`.

    Coordinates use 17 significant digits so float64 values round-trip.
    When class ids are present without intensities, intensity is written as 0.
    """
    lines = ["# origin " + " ".join(f"{v:.17g}" for v in cloud.sensor_origin)]
    if cloud.timestamp is not None:
        lines.append(f"# timestamp {int(cloud.timestamp)}")
    for i, p in enumerate(cloud.positions):
        cols = [f"{v:.17g}" for v in p]
        if cloud.intensity is not None or cloud.class_ids is not None:
            cols.append(f"{cloud.intensity[i]:.9g}" if cloud.intensity is not None else "0")
        if cloud.class_ids is not None:
            cols.append(str(int(cloud.class_ids[i])))
        lines.append(" ".join(cols))
    Path(path).write_text("\n".join(lines) + "\n")


def load_bin_records(path, layout: RecordLayout = NUSCENES_LAYOUT, class_file=None,
                     sensor_origin=(0.0, 0.0, 0.0)) -> PointCloud:
    """Decode a flat binary file of fixed-size float records.

    ``class_file``, if given, is a sidecar of newline-separated integer class
    ids, one per record.
    """
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise PointCloudError(f"cannot read {path}: {exc}") from exc
    if len(raw) % layout.record_size:
        raise PointCloudError(
            f"{path}: truncated record ({len(raw)} bytes is not a multiple of {layout.record_size})"
        )
    data = np.frombuffer(raw, dtype=layout.dtype).reshape(-1, len(layout.fields))
    if len(data) == 0:
        raise PointCloudError(f"{path}: zero points parsed")
    cols = {name: data[:, i].astype(np.float64) for i, name in enumerate(layout.fields)}
    xyz = np.stack([cols["x"], cols["y"], cols["z"]], axis=1)
    bad = ~np.all(np.isfinite(xyz), axis=1)
    if bad.any():
        raise PointCloudError(f"{path}: NaN coordinate in record {int(np.flatnonzero(bad)[0])}")

    class_ids = None
    if class_file is not None:
        class_ids = load_class_sidecar(class_file)
        if len(class_ids) != len(xyz):
            raise PointCloudError(
                f"label count mismatch: {len(class_ids)} labels for {len(xyz)} points"
            )
    ring = cols.get("ring")
    return PointCloud(
        positions=xyz,
        sensor_origin=sensor_origin,
        intensity=cols.get("intensity"),
        ring=None if ring is None else ring.astype(np.int64),
        class_ids=class_ids,
    )


def load_class_sidecar(path) -> np.ndarray:
    try:
        words = Path(path).read_text().split()
        return np.array([int(w) for w in words], dtype=np.int64)
    except (OSError, ValueError) as exc:
        raise PointCloudError(f"bad class sidecar {path}: {exc}") from exc


def write_bin_records(cloud: PointCloud, path, layout: RecordLayout = NUSCENES_LAYOUT) -> None:
    cols = {"x": cloud.positions[:, 0], "y": cloud.positions[:, 1], "z": cloud.positions[:, 2]}
    zeros = np.zeros(len(cloud))
    cols["intensity"] = cloud.intensity if cloud.intensity is not None else zeros
    cols["ring"] = cloud.ring if cloud.ring is not None else zeros
    data = np.stack([np.asarray(cols.get(f, zeros), dtype=np.float64) for f in layout.fields], axis=1)
    Path(path).write_bytes(data.astype(layout.dtype).tobytes())


def filter_classes(cloud: PointCloud, config: FilterConfig) -> PointCloud:
    if cloud.class_ids is None:
        raise PointCloudError("class filtering needs a class_id on every point")
    drop = np.array(sorted(config.drop_class_ids), dtype=np.int64)
    return cloud.select(~np.isin(cloud.class_ids, drop))


def ground_filter(cloud: PointCloud, config: FilterConfig) -> tuple[PointCloud, PointCloud]:
    """Split into ``(obstacles, floor)``; floor is strictly below the threshold."""
    is_floor = cloud.positions[:, 2] < config.ground_z_threshold
    return cloud.select(~is_floor), cloud.select(is_floor)


def directed_hausdorff(a: PointCloud, b: PointCloud) -> float:
    """max over p in ``a`` of the distance from p to its nearest point in ``b``."""
    from .spatial import build_index, default_leaf_capacity, nearest_many

    a_pts = _positions(a)
    b_pts = _positions(b)
    if len(a_pts) == 0 or len(b_pts) == 0:
        raise PointCloudError("directed Hausdorff distance of an empty cloud")
    index = build_index(b_pts, default_leaf_capacity(len(b_pts)))
    _, dist = nearest_many(index, a_pts)
    return float(dist.max())


def scene_change_gate(prev: PointCloud, curr: PointCloud, config: FilterConfig) -> bool:
    """True when ``curr`` moved far enough from ``prev`` to be processed."""
    return directed_hausdorff(curr, prev) > config.hausdorff_threshold


def _positions(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.positions
    return np.asarray(cloud, dtype=np.float64).reshape(-1, 3)


def as_cloud(points: Sequence, origin=(0.0, 0.0, 0.0)) -> PointCloud:
    return PointCloud(positions=np.asarray(points, dtype=np.float64).reshape(-1, 3), sensor_origin=origin)
