"""Geometry from a signed distance field.

Functions here take a *field*: any object with ``predict(points)`` returning
``(sdf, confidence)`` arrays, such as a trained :class:`SdfModel` or the
analytic oracle :class:`lidar_sdf.synthetic.AnalyticField`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from skimage import measure

# 64 MB of float64 sdf values per evaluation pass
GRID_CHUNK_POINTS = 64 * 2**20 // 8
# forward passes hold every hidden activation, so feed the network smaller batches
MODEL_BATCH_POINTS = 65536


def _predict(field, points):
    return field.predict(points)


def query_sdf(field, p) -> tuple[float, float]:
    sdf, conf = _predict(field, np.asarray(p, dtype=np.float64).reshape(1, 3))
    return float(sdf[0]), float(conf[0])


def min_clearance(field, body_points) -> float:
    """Smallest predicted distance from any body point; negative means contact."""
    pts = np.asarray(body_points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("body_points is empty")
    sdf, _ = _predict(field, pts)
    return float(np.min(sdf))


def lattice_axis(lo: float, hi: float, n: int) -> np.ndarray:
    """Lattice coordinates; refining ``n`` to ``2n - 1`` reproduces them exactly."""
    i = np.arange(n)
    return lo + (hi - lo) * (i / (n - 1))


@dataclass(frozen=True, eq=False)
class GridField:
    lo: np.ndarray
    hi: np.ndarray
    values: np.ndarray  # shape (nx, ny, nz); index (i, j, k) is x, y, z

    @property
    def resolution(self) -> tuple:
        return self.values.shape

    @property
    def spacing(self) -> np.ndarray:
        return (self.hi - self.lo) / (np.array(self.values.shape) - 1)

    def axes(self):
        return [lattice_axis(self.lo[a], self.hi[a], self.values.shape[a]) for a in range(3)]

    def points(self) -> np.ndarray:
        X, Y, Z = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([X, Y, Z], axis=-1).reshape(-1, 3)


def _check_box(lo, hi, resolution, dims):
    lo = np.asarray(lo, dtype=np.float64).reshape(dims)
    hi = np.asarray(hi, dtype=np.float64).reshape(dims)
    res = tuple(int(r) for r in np.broadcast_to(resolution, (dims,)))
    if np.any(lo >= hi):
        raise ValueError("bounds need min < max on every axis")
    if min(res) < 2:
        raise ValueError("resolution must be >= 2 per axis")
    return lo, hi, res


def evaluate_points(field, points, chunk: int = MODEL_BATCH_POINTS) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    out = np.empty(len(pts))
    for start in range(0, len(pts), chunk):
        out[start:start + chunk] = _predict(field, pts[start:start + chunk])[0]
    return out


def sample_grid(field, bounds, resolution, chunk: int = MODEL_BATCH_POINTS) -> GridField:
    """Evaluate the sdf on a regular lattice including the box corners."""
    lo, hi, res = _check_box(bounds[0], bounds[1], resolution, 3)
    xs = [lattice_axis(lo[a], hi[a], res[a]) for a in range(3)]
    values = np.empty(res)
    plane = res[1] * res[2]
    # one x-plane at a time keeps each pass under GRID_CHUNK_POINTS values
    planes_per_pass = max(1, GRID_CHUNK_POINTS // plane)
    Y, Z = np.meshgrid(xs[1], xs[2], indexing="ij")
    for i0 in range(0, res[0], planes_per_pass):
        xi = xs[0][i0:i0 + planes_per_pass]
        pts = np.empty((len(xi), res[1], res[2], 3))
        pts[..., 0] = xi[:, None, None]
        pts[..., 1] = Y
        pts[..., 2] = Z
        values[i0:i0 + len(xi)] = evaluate_points(field, pts.reshape(-1, 3), chunk).reshape(len(xi), res[1], res[2])
    return GridField(lo, hi, values)


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    vertices: np.ndarray
    triangles: np.ndarray
    dropped_degenerate: int = 0

    def __len__(self):
        return len(self.triangles)


def _triangle_areas(vertices, triangles):
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def marching_cubes(field: GridField, iso: float = 0.0) -> TriangleMesh:
    """Iso-surface of a lattice field with linear edge interpolation.

    Zero-area triangles are removed and their number is kept in
    ``dropped_degenerate``.
    """
    values = np.asarray(field.values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("field contains non-finite values")
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    if not (values.min() < iso < values.max()):
        return empty
    verts, faces, _, _ = measure.marching_cubes(values, level=iso, method="lorensen",
                                                allow_degenerate=True)
    verts = field.lo + verts.astype(np.float64) * field.spacing
    faces = faces.astype(np.int64)
    verts, inverse = np.unique(verts, axis=0, return_inverse=True)
    faces = inverse.reshape(-1)[faces]
    good = (faces[:, 0] != faces[:, 1]) & (faces[:, 1] != faces[:, 2]) & (faces[:, 0] != faces[:, 2])
    good &= _triangle_areas(verts, faces) > 0
    faces_kept = faces[good]
    used = np.unique(faces_kept)
    remap = np.full(len(verts), -1, dtype=np.int64)
    remap[used] = np.arange(len(used))
    return TriangleMesh(verts[used], remap[faces_kept], int((~good).sum()))


def write_obj(mesh: TriangleMesh, path) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(lines) + "\n")


def write_ply(mesh: TriangleMesh, path) -> None:
    header = [
        "ply", "format ascii 1.0",
        f"element vertex {len(mesh.vertices)}",
        "property float x", "property float y", "property float z",
        f"element face {len(mesh.triangles)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    body = [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    body += [f"3 {a} {b} {c}" for a, b, c in mesh.triangles]
    Path(path).write_text("\n".join(header + body) + "\n")


def read_obj(path) -> TriangleMesh:
    verts, faces = [], []
    for line in Path(path).read_text().splitlines():
        parts = line.split()
        if parts[:1] == ["v"]:
            verts.append([float(v) for v in parts[1:4]])
        elif parts[:1] == ["f"]:
            faces.append([int(v.split("/")[0]) - 1 for v in parts[1:4]])
    return TriangleMesh(np.array(verts).reshape(-1, 3), np.array(faces, dtype=np.int64).reshape(-1, 3))


def write_grid_csv(grid: GridField, path) -> None:
    pts = grid.points()
    lines = ["x,y,z,value"] + [f"{x!r},{y!r},{z!r},{v!r}" for (x, y, z), v in zip(pts.tolist(), grid.values.reshape(-1).tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


@dataclass(frozen=True, eq=False)
class BirdsEyeSlice:
    z: float
    xs: np.ndarray
    ys: np.ndarray
    values: np.ndarray  # (nx, ny), same index order as GridField
    image: np.ndarray  # (ny, nx) uint8, first row is the largest y

    def negative_components(self, connectivity: int = 2) -> int:
        """Number of connected regions with sdf < 0 (8-connected by default)."""
        structure = ndimage.generate_binary_structure(2, connectivity)
        _, count = ndimage.label(self.values < 0, structure=structure)
        return int(count)


def shade(values, band: float = 0.5) -> np.ndarray:
    """Grey level per sdf value: 0-127 inside (black deep inside), 128-255 outside."""
    v = np.asarray(values, dtype=np.float64)
    frac = np.minimum(np.abs(v) / band, 1.0)
    inside = np.rint(127.0 * (1.0 - frac))
    outside = np.rint(128.0 + 127.0 * frac)
    return np.where(v < 0, inside, outside).astype(np.uint8)


def birds_eye_slice(field, z: float, bounds2d, resolution2d, band: float = 0.5) -> BirdsEyeSlice:
    lo, hi, res = _check_box(bounds2d[0], bounds2d[1], resolution2d, 2)
    xs = lattice_axis(lo[0], hi[0], res[0])
    ys = lattice_axis(lo[1], hi[1], res[1])
    X, Y = np.meshgrid(xs, ys, indexing="ij")
    pts = np.stack([X, Y, np.full_like(X, z)], axis=-1).reshape(-1, 3)
    values = evaluate_points(field, pts).reshape(res)
    image = shade(values, band).T[::-1]
    return BirdsEyeSlice(float(z), xs, ys, values, np.ascontiguousarray(image))


def write_pgm(image: np.ndarray, path) -> None:
    """Plain (P2) portable graymap."""
    h, w = image.shape
    rows = [" ".join(str(int(v)) for v in row) for row in image]
    Path(path).write_text(f"P2\n{w} {h}\n255\n" + "\n".join(rows) + "\n")


def read_pgm(path) -> np.ndarray:
    tokens = [t for line in Path(path).read_text().splitlines()
              if not line.startswith("#") for t in line.split()]
    if tokens[0] != "P2":
        raise ValueError(f"{path}: not a plain PGM")
    w, h = int(tokens[1]), int(tokens[2])
    return np.array([int(t) for t in tokens[4:4 + w * h]], dtype=np.uint8).reshape(h, w)


def write_slice_csv(sl: BirdsEyeSlice, path) -> None:
    """Row-major matrix: header row of x coordinates, then one row per y."""
    lines = ["y\\x," + ",".join(repr(float(x)) for x in sl.xs)]
    for j, y in enumerate(sl.ys):
        lines.append(repr(float(y)) + "," + ",".join(repr(float(v)) for v in sl.values[:, j]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_slice_csv(path) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    xs = np.array([float(v) for v in lines[0].split(",")[1:]])
    rows = [[float(v) for v in line.split(",")] for line in lines[1:]]
    ys = np.array([r[0] for r in rows])
    values = np.array([r[1:] for r in rows]).T
    return xs, ys, values
