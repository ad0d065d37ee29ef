import numpy as np
import pytest
from hypothesis import given, strategies as st

from lidar_sdf.reconstruct import (BirdsEyeSlice, GridField, birds_eye_slice, lattice_axis, marching_cubes,
                                   min_clearance, query_sdf, read_obj, read_pgm, read_slice_csv, sample_grid,
                                   shade, write_grid_csv, write_obj, write_pgm, write_ply, write_slice_csv)
from lidar_sdf.synthetic import AnalyticField, Scene, sphere, street_scene
from oracles import sphere_mesh_checks

SPHERE = AnalyticField(Scene((sphere((0.1, -0.2, 0.05), 0.8),)))


def test_lattice_refinement_is_exact():
    coarse = lattice_axis(-1.3, 2.7, 9)
    fine = lattice_axis(-1.3, 2.7, 17)
    assert np.array_equal(fine[::2], coarse)
    assert coarse[0] == -1.3 and coarse[-1] == 2.7


def test_sample_grid_matches_direct_evaluation():
    grid = sample_grid(SPHERE, ((-1, -1, -1), (1, 1, 1)), (5, 6, 7))
    assert grid.values.shape == (5, 6, 7)
    assert np.array_equal(grid.values.reshape(-1), SPHERE.predict(grid.points())[0])
    small = sample_grid(SPHERE, ((-1, -1, -1), (1, 1, 1)), (5, 6, 7), chunk=11)
    assert np.array_equal(small.values, grid.values)


def test_grid_validation():
    with pytest.raises(ValueError):
        sample_grid(SPHERE, ((0, 0, 0), (0, 1, 1)), 4)
    with pytest.raises(ValueError):
        sample_grid(SPHERE, ((0, 0, 0), (1, 1, 1)), 1)


def test_marching_cubes_sphere_is_closed_and_close():
    grid = sample_grid(SPHERE, ((-1, -1, -1), (1, 1, 1)), 32)
    mesh = marching_cubes(grid)
    worst, diag, counts = sphere_mesh_checks(mesh, [0.1, -0.2, 0.05], 0.8, grid.spacing)
    assert worst <= diag
    assert np.all(counts == 2)
    assert mesh.triangles.min() == 0 and mesh.triangles.max() == len(mesh.vertices) - 1


def test_marching_cubes_without_crossing():
    grid = GridField(np.zeros(3), np.ones(3), np.ones((3, 3, 3)))
    assert len(marching_cubes(grid)) == 0
    with pytest.raises(ValueError):
        marching_cubes(GridField(np.zeros(3), np.ones(3), np.full((2, 2, 2), np.nan)))


def test_mesh_files(tmp_path):
    mesh = marching_cubes(sample_grid(SPHERE, ((-1, -1, -1), (1, 1, 1)), 10))
    write_obj(mesh, tmp_path / "m.obj")
    back = read_obj(tmp_path / "m.obj")
    assert np.array_equal(back.triangles, mesh.triangles)
    assert np.allclose(back.vertices, mesh.vertices, rtol=1e-8)
    write_ply(mesh, tmp_path / "m.ply")
    text = (tmp_path / "m.ply").read_text().splitlines()
    assert text[0] == "ply" and f"element face {len(mesh)}" in text


def test_grid_csv(tmp_path):
    grid = sample_grid(SPHERE, ((-1, -1, -1), (1, 1, 1)), 3)
    write_grid_csv(grid, tmp_path / "g.csv")
    lines = (tmp_path / "g.csv").read_text().splitlines()
    assert lines[0] == "x,y,z,value" and len(lines) == 28


def test_shade_levels():
    v = np.array([-10, -0.5, -0.25, -1e-9, 0.0, 0.25, 0.5, 10])
    assert shade(v, 0.5).tolist() == [0, 0, 64, 127, 128, 192, 255, 255]


def test_street_slice_separates_obstacles(tmp_path):
    sl = birds_eye_slice(AnalyticField(street_scene()), 0.0, ((4.5, -4.5), (10.5, 3.5)), (61, 81))
    assert sl.negative_components() == 2
    assert sl.image.shape == (81, 61)
    # top image row is the largest y, where the sphere sits
    assert sl.image[:40].min() < 128 and sl.image[-20:].min() < 128
    write_pgm(sl.image, tmp_path / "s.pgm")
    assert np.array_equal(read_pgm(tmp_path / "s.pgm"), sl.image)
    write_slice_csv(sl, tmp_path / "s.csv")
    xs, ys, values = read_slice_csv(tmp_path / "s.csv")
    assert values.size == 61 * 81
    assert np.array_equal(xs, sl.xs) and np.array_equal(values, sl.values)


def test_component_connectivity():
    values = np.ones((4, 4))
    values[0, 0] = values[1, 1] = -1
    sl = BirdsEyeSlice(0.0, np.arange(4.0), np.arange(4.0), values, shade(values).T)
    assert sl.negative_components() == 1
    assert sl.negative_components(connectivity=1) == 2


def test_queries():
    s, c = query_sdf(SPHERE, [0.1, -0.2, 0.05])
    assert s == pytest.approx(-0.8) and c == 1.0
    assert min_clearance(SPHERE, [[2, 0, 0], [0.1, -0.2, 1.0]]) == pytest.approx(0.15)
    with pytest.raises(ValueError):
        min_clearance(SPHERE, np.zeros((0, 3)))


@given(st.floats(0.3, 0.9), st.integers(8, 20))
def test_property_mesh_vertices_near_surface(radius, n):
    field = AnalyticField(Scene((sphere((0, 0, 0), radius),)))
    grid = sample_grid(field, ((-1, -1, -1), (1, 1, 1)), n)
    mesh = marching_cubes(grid)
    if len(mesh):
        worst, diag, _ = sphere_mesh_checks(mesh, [0, 0, 0], radius, grid.spacing)
        assert worst <= diag
