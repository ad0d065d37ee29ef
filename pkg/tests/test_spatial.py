import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from lidar_sdf.spatial import (build_index, default_leaf_capacity, nearest, nearest_bruteforce,
                               nearest_bruteforce_many, nearest_many, squared_distances)


def loop_nearest(points, q):
    """Plain Python double loop, independent of the vectorised code."""
    best, best_i = float("inf"), -1
    for i, p in enumerate(points):
        d = ((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2) ** 0.5
        if d < best:
            best, best_i = d, i
    return best_i, best


def test_matches_python_loop(rng):
    pts = rng.normal(size=(300, 3))
    queries = rng.normal(size=(50, 3)) * 2
    idx, dist = nearest_many(build_index(pts, 7), queries)
    for q, i, d in zip(queries, idx, dist):
        li, ld = loop_nearest(pts, q)
        assert i == li
        assert d == pytest.approx(ld, rel=1e-12)


@pytest.mark.parametrize("leaf", [1, 3, 16, 1000])
def test_bitwise_equal_to_bruteforce(rng, leaf):
    pts = rng.uniform(-5, 5, size=(800, 3))
    queries = rng.uniform(-6, 6, size=(400, 3))
    i1, d1 = nearest_many(build_index(pts, leaf), queries)
    i2, d2 = nearest_bruteforce_many(pts, queries)
    assert np.array_equal(i1, i2)
    assert np.array_equal(d1, d2)


def test_ties_go_to_lowest_index():
    pts = np.array([[1.0, 0, 0], [-1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]])
    idx, dist = nearest_many(build_index(pts, 1), np.zeros((1, 3)))
    assert idx[0] == 0 and dist[0] == 1.0
    idx, _ = nearest_many(build_index(pts, 1), np.array([[1.0, 0, 0]]))
    assert idx[0] == 0  # duplicates at 0 and 3


def test_single_point_and_exact_hit():
    index = build_index([[1.0, 2.0, 3.0]], 4)
    p, d = nearest(index, [1.0, 2.0, 3.0])
    assert d == 0.0 and np.array_equal(p, [1, 2, 3])
    p, d = nearest(index, [1.0, 2.0, 7.0])
    assert d == 4.0


def test_query_point_on_split_plane():
    pts = np.array([[float(i), 0.0, 0.0] for i in range(10)])
    index = build_index(pts, 2)
    for x in np.arange(0, 9.5, 0.5):
        i, d = nearest_many(index, [[x, 0.3, 0.0]])
        bi, bd = nearest_bruteforce_many(pts, [[x, 0.3, 0.0]])
        assert (i[0], d[0]) == (bi[0], bd[0])


def test_leaf_capacity_and_partition(rng):
    pts = rng.normal(size=(1000, 3))
    cap = default_leaf_capacity(len(pts))
    assert cap == 20
    index = build_index(pts, cap)
    members = index.leaf_members()
    assert all(len(m) <= cap for m in members)
    assert np.array_equal(np.sort(np.concatenate(members)), np.arange(1000))
    assert 50 <= index.n_leaves <= 64


def test_pruning_visits_fewer_nodes(rng):
    pts = rng.uniform(-10, 10, size=(2000, 3))
    index = build_index(pts, 10)
    stats = {}
    nearest_many(index, rng.uniform(-10, 10, size=(200, 3)), stats)
    n_nodes = len(index.left)
    assert stats["queries"] == 200
    assert stats["nodes_visited"] < 0.25 * n_nodes * 200


def test_empty_and_bad_inputs():
    with pytest.raises(ValueError):
        build_index(np.zeros((0, 3)), 4)
    with pytest.raises(ValueError):
        build_index(np.zeros((3, 3)), 0)
    with pytest.raises(ValueError):
        nearest_bruteforce_many(np.zeros((0, 3)), np.zeros((1, 3)))


def test_squared_distance_formula():
    d2 = squared_distances(np.array([[1.0, 2.0, 3.0]]), np.array([[4.0, 6.0, 3.0], [1.0, 2.0, 3.0]]))
    assert d2.tolist() == [[25.0, 0.0]]


def test_nearest_bruteforce_scalar():
    p, d = nearest_bruteforce([[0, 0, 0], [3, 4, 0]], [3, 4, 1])
    assert d == 1.0 and p.tolist() == [3, 4, 0]


coords = st.floats(-100, 100, allow_nan=False, width=32)


@given(arrays(np.float64, st.tuples(st.integers(1, 60), st.just(3)), elements=coords),
       arrays(np.float64, st.tuples(st.integers(1, 20), st.just(3)), elements=coords),
       st.integers(1, 8))
def test_property_index_equals_bruteforce(points, queries, leaf):
    i1, d1 = nearest_many(build_index(points, leaf), queries)
    i2, d2 = nearest_bruteforce_many(points, queries)
    assert np.array_equal(i1, i2) and np.array_equal(d1, d2)
