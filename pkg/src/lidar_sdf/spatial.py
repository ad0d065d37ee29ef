"""Exact nearest-neighbour search over surface points.

The KD-tree splits each node at the median of its widest axis.  Queries are
answered in batches: the whole query array descends the tree together and is
pruned per query against node bounding boxes, so the search stays exact while
the inner work is vectorised.

Squared distances are always computed by :func:`squared_distances`, which the
brute-force scan shares, so the two routes agree bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_BRUTE_CHUNK = 256


def squared_distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    """``(Q, P)`` matrix of squared Euclidean distances, fixed summation order."""
    dx = points[None, :, 0] - queries[:, None, 0]
    dy = points[None, :, 1] - queries[:, None, 1]
    dz = points[None, :, 2] - queries[:, None, 2]
    return dx * dx + dy * dy + dz * dz


@dataclass(frozen=True, eq=False)
class SurfaceIndex:
    points: np.ndarray
    leaf_capacity: int
    lo: np.ndarray  # (nodes, 3) bounding box corners
    hi: np.ndarray
    left: np.ndarray  # child ids, -1 marks a leaf
    right: np.ndarray
    axis: np.ndarray
    split: np.ndarray
    leaves: tuple  # node id -> ascending point indices, None for inner nodes

    @property
    def n_leaves(self) -> int:
        return sum(1 for leaf in self.leaves if leaf is not None)

    def leaf_members(self) -> list:
        return [leaf for leaf in self.leaves if leaf is not None]


def default_leaf_capacity(n_points: int, n_leaves: int = 50) -> int:
    """Leaf capacity that yields roughly ``n_leaves`` leaves for ``n_points``."""
    return max(1, math.ceil(n_points / n_leaves))


def build_index(points, leaf_capacity: int) -> SurfaceIndex:
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot index an empty point set")
    if leaf_capacity < 1:
        raise ValueError("leaf_capacity must be >= 1")

    lo, hi, left, right, axis, split, leaves = [], [], [], [], [], [], []

    def new_node(idx):
        sub = pts[idx]
        lo.append(sub.min(axis=0))
        hi.append(sub.max(axis=0))
        left.append(-1)
        right.append(-1)
        axis.append(-1)
        split.append(0.0)
        leaves.append(None)
        return len(lo) - 1

    root = new_node(np.arange(len(pts)))
    stack = [(root, np.arange(len(pts)))]
    while stack:
        node, idx = stack.pop()
        if len(idx) <= leaf_capacity:
            leaves[node] = np.sort(idx)
            continue
        ax = int(np.argmax(hi[node] - lo[node]))
        coords = pts[idx, ax]
        order = idx[np.lexsort((idx, coords))]
        mid = (len(order) + 1) // 2  # odd counts put the median in the lower half
        axis[node] = ax
        split[node] = pts[order[mid - 1], ax]
        lchild = new_node(order[:mid])
        rchild = new_node(order[mid:])
        left[node], right[node] = lchild, rchild
        stack.append((rchild, order[mid:]))
        stack.append((lchild, order[:mid]))

    return SurfaceIndex(
        points=pts,
        leaf_capacity=int(leaf_capacity),
        lo=np.array(lo),
        hi=np.array(hi),
        left=np.array(left),
        right=np.array(right),
        axis=np.array(axis),
        split=np.array(split),
        leaves=tuple(leaves),
    )


def nearest_many(index: SurfaceIndex, queries, stats: dict | None = None):
    """Nearest indexed point for every query row.

    Returns ``(point_indices, distances)``.  Ties go to the lowest point index.
    If ``stats`` is a dict, ``stats["nodes_visited"]`` accumulates the number of
    (query, node) pairs that survived bounding-box pruning.
    """
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    best_d2 = np.full(len(q), np.inf)
    best_idx = np.full(len(q), -1, dtype=np.int64)
    visited = 0

    def visit(node, qi):
        nonlocal visited
        sub = q[qi]
        gap = np.maximum(index.lo[node] - sub, 0.0) + np.maximum(sub - index.hi[node], 0.0)
        gap2 = gap[:, 0] * gap[:, 0] + gap[:, 1] * gap[:, 1] + gap[:, 2] * gap[:, 2]
        # <= keeps boxes that could hold an equidistant point with a lower index
        keep = gap2 <= best_d2[qi]
        qi = qi[keep]
        if len(qi) == 0:
            return
        visited += len(qi)
        leaf = index.leaves[node]
        if leaf is not None:
            d2 = squared_distances(q[qi], index.points[leaf])
            j = np.argmin(d2, axis=1)
            cand_d2 = d2[np.arange(len(qi)), j]
            cand_idx = leaf[j]
            cur_d2 = best_d2[qi]
            better = (cand_d2 < cur_d2) | ((cand_d2 == cur_d2) & (cand_idx < best_idx[qi]))
            best_d2[qi[better]] = cand_d2[better]
            best_idx[qi[better]] = cand_idx[better]
            return
        go_left = q[qi, index.axis[node]] <= index.split[node]
        ql, qr = qi[go_left], qi[~go_left]
        lchild, rchild = index.left[node], index.right[node]
        if len(ql):
            visit(lchild, ql)
        if len(qr):
            visit(rchild, qr)
        if len(ql):
            visit(rchild, ql)
        if len(qr):
            visit(lchild, qr)

    if len(q):
        visit(0, np.arange(len(q)))
    if stats is not None:
        stats["nodes_visited"] = stats.get("nodes_visited", 0) + visited
        stats["queries"] = stats.get("queries", 0) + len(q)
    return best_idx, np.sqrt(best_d2)


def nearest(index: SurfaceIndex, query):
    """``(point, distance)`` of the indexed point closest to ``query``."""
    idx, dist = nearest_many(index, np.asarray(query, dtype=np.float64).reshape(1, 3))
    return index.points[idx[0]].copy(), float(dist[0])


def nearest_bruteforce_many(points, queries):
    """Linear-scan counterpart of :func:`nearest_many`; the test oracle."""
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        raise ValueError("cannot search an empty point set")
    q = np.ascontiguousarray(queries, dtype=np.float64).reshape(-1, 3)
    idx = np.empty(len(q), dtype=np.int64)
    d2 = np.empty(len(q))
    for start in range(0, len(q), _BRUTE_CHUNK):
        block = squared_distances(q[start:start + _BRUTE_CHUNK], pts)
        j = np.argmin(block, axis=1)  # first minimum == lowest index
        idx[start:start + _BRUTE_CHUNK] = j
        d2[start:start + _BRUTE_CHUNK] = block[np.arange(len(j)), j]
    return idx, np.sqrt(d2)


def nearest_bruteforce(points, query):
    pts = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 3)
    idx, dist = nearest_bruteforce_many(pts, np.asarray(query, dtype=np.float64).reshape(1, 3))
    return pts[idx[0]].copy(), float(dist[0])
