#!/usr/bin/env python3
"""Tests for the quadtree mesh, hanging constraints and phase-field driven adaptation"""

import math

import numpy as np
import pytest

from adaptive_mesh import (
    AdaptiveMesh,
    MeshAdaptationError,
    check_balance,
    crack_domain,
    execute_adaptation,
    find_crack_tip,
    mark_coarsen,
    mark_refine,
    write_vtk,
)
from microstructure_geometry import Rectangle


@pytest.fixture
def uniform():
    return AdaptiveMesh(Rectangle(0.0, 0.0, 8.0, 8.0), 8, 8, 2)


@pytest.fixture
def strip():
    return AdaptiveMesh(Rectangle(0.0, -2.0, 16.0, 2.0), 16, 4, 0)


class TestMeshConstruction:
    def test_root_grid(self, uniform):
        assert uniform.n_cells == 64
        assert uniform.n_vertices == 81
        assert len(uniform.constraints) == 0
        assert uniform.h_min == pytest.approx(0.25)
        assert int(uniform.boundary.sum()) == 32

    def test_crack_domain_sizes(self):
        domain, nx, ny, levels = crack_domain(100.0, 30.0, 0.5, 0.4)
        root = domain.width / nx
        assert levels == 2
        assert root == pytest.approx(0.8)
        assert root <= math.pi * 0.5
        assert root / 2 ** levels == pytest.approx(0.2)
        assert domain.height >= 30.0
        assert domain.y0 == pytest.approx(-domain.y1)

    def test_non_square_root_cells(self):
        with pytest.raises(ValueError):
            AdaptiveMesh(Rectangle(0.0, 0.0, 8.0, 4.0), 8, 8, 1)

    def test_locate_refined_cell(self, uniform):
        mesh, _ = uniform.adapt({(0, 3, 3)}, set())
        row = mesh.locate(np.array([[3.6, 3.6]]))[0]
        assert mesh.cell_keys[row] == (1, 7, 7)


class TestHangingConstraints:
    def test_single_refinement(self, uniform):
        mesh, changed = uniform.adapt({(0, 3, 3)}, set())
        assert changed
        assert mesh.n_cells == 67
        assert len(mesh.constraints) == 4
        assert check_balance(mesh)
        hanging = mesh.vertex_index[(14, 12)]
        masters = dict(mesh.constraints.rows[hanging])
        assert masters == {mesh.vertex_index[(12, 12)]: 0.5, mesh.vertex_index[(16, 12)]: 0.5}

    def test_prolongation_preserves_constants(self, uniform):
        mesh, _ = uniform.adapt({(0, 3, 3)}, set())
        mesh, _ = mesh.adapt({(1, 6, 6)}, set())
        ones = mesh.prolongation @ np.ones(mesh.prolongation.shape[1])
        np.testing.assert_allclose(ones, 1.0)

    def test_balance_after_nested_refinement(self, uniform):
        mesh, _ = uniform.adapt({(0, 0, 0)}, set())
        mesh, _ = mesh.adapt({(1, 1, 1)}, set())
        assert check_balance(mesh)
        assert mesh.cell_level.max() == 2

    def test_refinement_beyond_cap(self):
        mesh = AdaptiveMesh(Rectangle(0.0, 0.0, 2.0, 2.0), 2, 2, 0)
        with pytest.raises(MeshAdaptationError):
            mesh.adapt({(0, 0, 0)}, set())


class TestCrackTip:
    def test_undamaged_returns_initial_tip(self, strip):
        tip = find_crack_tip(strip, np.zeros(strip.n_vertices), initial_tip=(5.0, 0.0))
        np.testing.assert_allclose(tip, [5.0, 0.0])

    def test_single_band(self, strip):
        x, y = strip.points[:, 0], strip.points[:, 1]
        alpha = np.where((np.abs(y) < 1e-9) & (x <= 12.0), 1.0, 0.0)
        np.testing.assert_allclose(find_crack_tip(strip, alpha), [12.0, 0.0])

    def test_rightmost_of_two_bands(self, strip):
        x, y = strip.points[:, 0], strip.points[:, 1]
        alpha = np.where(((np.abs(y) < 1e-9) & (x <= 5.0)) | ((np.abs(y - 1.0) < 1e-9) & (x >= 7.0) & (x <= 9.0)),
                         1.0, 0.0)
        np.testing.assert_allclose(find_crack_tip(strip, alpha), [9.0, 1.0])


class TestMarking:
    def test_undamaged_marks_nothing(self, uniform):
        assert mark_refine(uniform, np.zeros(uniform.n_vertices), np.zeros(2)) == set()

    def test_damaged_vertex_marks_two_rings(self, uniform):
        alpha = np.zeros(uniform.n_vertices)
        alpha[uniform.vertex_index[(16, 16)]] = 0.01
        marked = mark_refine(uniform, alpha, np.zeros(2))
        assert marked == {(0, i, j) for i in range(1, 7) for j in range(1, 7)}

    def test_cells_behind_tip_are_not_refined(self, uniform):
        alpha = np.zeros(uniform.n_vertices)
        alpha[uniform.vertex_index[(4, 16)]] = 0.5
        assert mark_refine(uniform, alpha, np.array([6.0, 4.0]), margin=1.0) == set()

    def test_level_cap(self):
        mesh = AdaptiveMesh(Rectangle(0.0, 0.0, 4.0, 4.0), 4, 4, 0)
        assert mark_refine(mesh, np.ones(mesh.n_vertices), np.zeros(2)) == set()

    def test_coarsen_fully_damaged_cells_behind_tip(self):
        cells = [(1, i, j) for i in range(16) for j in range(16)]
        mesh = AdaptiveMesh(Rectangle(0.0, 0.0, 8.0, 8.0), 8, 8, 1, cells=cells)
        marked = mark_coarsen(mesh, np.ones(mesh.n_vertices), np.array([8.0, 4.0]), margin=2.0)
        assert marked == {(1, i, j) for i in range(11) for j in range(16)}
        assert mark_coarsen(mesh, np.full(mesh.n_vertices, 0.5), np.array([8.0, 4.0]), margin=2.0) == set()

    def test_root_cells_are_never_coarsened(self, uniform):
        assert mark_coarsen(uniform, np.ones(uniform.n_vertices), np.array([100.0, 0.0])) == set()


class TestExecuteAdaptation:
    def test_empty_sets_keep_mesh(self, uniform):
        fields = {"alpha": np.zeros(uniform.n_vertices)}
        mesh, moved, changed = execute_adaptation(uniform, set(), set(), fields)
        assert mesh is uniform and moved is fields and not changed

    def test_linear_field_is_transferred_exactly(self, uniform):
        values = uniform.points[:, 0] + 2.0 * uniform.points[:, 1]
        mesh, moved, changed = execute_adaptation(uniform, {(0, 3, 3), (0, 5, 2)}, set(), {"f": values})
        assert changed and mesh.generation == 1
        np.testing.assert_allclose(moved["f"], mesh.points[:, 0] + 2.0 * mesh.points[:, 1])

    def test_refine_then_coarsen_restores_mesh(self, uniform):
        alpha = np.full(uniform.n_vertices, 0.3)
        refined, fields, _ = execute_adaptation(uniform, {(0, 3, 3)}, set(), {"alpha": alpha})
        children = {(1, 6, 6), (1, 7, 6), (1, 6, 7), (1, 7, 7)}
        restored, fields, changed = execute_adaptation(refined, set(), children, fields)
        assert changed
        assert restored.cells == uniform.cells
        np.testing.assert_allclose(fields["alpha"], 0.3)

    def test_vector_field(self, uniform):
        values = np.column_stack([uniform.points[:, 0], -uniform.points[:, 1]])
        mesh, moved, _ = execute_adaptation(uniform, {(0, 2, 2)}, set(), {"u": values})
        assert moved["u"].shape == (mesh.n_vertices, 2)
        np.testing.assert_allclose(moved["u"][:, 1], -mesh.points[:, 1])


def test_write_vtk(uniform, tmp_path):
    path = write_vtk(uniform, tmp_path / "mesh.vtk", {"alpha": np.zeros(uniform.n_vertices)})
    text = path.read_text()
    assert "CELLS 64 320" in text
    assert "SCALARS alpha double 1" in text
