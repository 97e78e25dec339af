import numpy as np
import pytest

from oedplace import (
    Grid2D,
    ValidationError,
    advection_matrix,
    boundary_mass_matrix,
    lumped_mass_diagonal,
    mass_matrix,
    stiffness_matrix,
)
from oedplace.errors import ValidationError as VE


def linear_field(grid, a, b, c):
    x, y = grid.coords[:, 0], grid.coords[:, 1]
    return a + b * x + c * y


class TestGrid:
    def test_counts_and_spacing(self):
        grid = Grid2D(3, 5)
        assert grid.n_vertices == 4 * 6
        assert grid.triangles.shape == (2 * 3 * 5, 3)
        assert grid.hx == pytest.approx(1 / 3)
        assert grid.hy == pytest.approx(1 / 5)

    def test_vertex_indexing_row_major(self):
        grid = Grid2D(4, 3)
        for iy in range(4):
            for ix in range(5):
                v = grid.vertex_index(ix, iy)
                assert v == iy * 5 + ix
                assert grid.coords[v] == pytest.approx([ix / 4, iy / 3])

    def test_invalid_grid(self):
        with pytest.raises(ValidationError):
            Grid2D(0, 4)

    def test_triangle_areas_cover_square(self):
        grid = Grid2D(5, 3)
        tri = grid.coords[grid.triangles]
        e1 = tri[:, 1] - tri[:, 0]
        e2 = tri[:, 2] - tri[:, 0]
        areas = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
        assert areas.sum() == pytest.approx(1.0)
        assert np.all(areas > 0)

    def test_boundary_masks(self):
        grid = Grid2D(4, 4)
        mask = grid.boundary_vertex_mask()
        assert mask.sum() == 4 * 4  # perimeter vertices of a 5x5 lattice
        assert grid.edge_vertex_mask("top").sum() == 5
        assert not grid.edge_vertex_mask("top")[grid.vertex_index(2, 0)]
        with pytest.raises(VE):
            grid.edge_vertex_mask("diagonal")

    def test_boundary_edges_close_the_loop(self):
        grid = Grid2D(3, 2)
        edges = grid.boundary_edges
        assert len(edges) == 2 * (3 + 2)
        counts = np.bincount(edges.ravel(), minlength=grid.n_vertices)
        on_boundary = grid.boundary_vertex_mask()
        assert np.all(counts[on_boundary] == 2)
        assert np.all(counts[~on_boundary] == 0)


class TestMassMatrix:
    def test_total_mass_is_domain_area(self):
        m = mass_matrix(Grid2D(6, 4))
        assert m.sum() == pytest.approx(1.0, abs=1e-14)

    def test_exact_on_linear_functions(self):
        grid = Grid2D(5, 7)
        m = mass_matrix(grid)
        u = linear_field(grid, 1.0, 2.0, -3.0)
        v = linear_field(grid, 0.5, -1.0, 4.0)
        # integral of u*v over the square, exact for the P1 mass matrix
        # since u*v is quadratic: use high-order numpy quadrature instead
        # of hand algebra.
        from numpy.polynomial.legendre import leggauss
        q, w = leggauss(4)
        q = 0.5 * (q + 1.0)
        w = 0.5 * w
        xx, yy = np.meshgrid(q, q)
        ww = np.outer(w, w)
        exact = np.sum(ww * (1 + 2 * xx - 3 * yy) * (0.5 - xx + 4 * yy))
        assert u @ (m @ v) == pytest.approx(exact, rel=1e-12)

    def test_lumped_mass_matches_row_sums(self):
        grid = Grid2D(4, 5)
        lumped = lumped_mass_diagonal(grid)
        rows = np.asarray(mass_matrix(grid).sum(axis=1)).ravel()
        assert lumped == pytest.approx(rows)
        assert np.all(lumped > 0)
        assert lumped.sum() == pytest.approx(1.0)


class TestStiffnessMatrix:
    def test_constants_in_kernel(self):
        k = stiffness_matrix(Grid2D(5, 4))
        assert np.abs(k @ np.ones(k.shape[0])).max() < 1e-14

    def test_energy_of_linear_fields(self):
        grid = Grid2D(6, 6)
        theta = np.array([[2.0, 0.3], [0.3, 0.5]])
        k = stiffness_matrix(grid, theta)
        u = linear_field(grid, 0.0, 1.5, -0.5)  # grad u = (1.5, -0.5)
        g = np.array([1.5, -0.5])
        assert u @ (k @ u) == pytest.approx(g @ theta @ g, rel=1e-12)

    def test_five_point_stencil_on_square_cells(self):
        grid = Grid2D(4, 4)
        k = stiffness_matrix(grid).toarray()
        center = grid.vertex_index(2, 2)
        assert k[center, center] == pytest.approx(4.0)
        for neighbor in (grid.vertex_index(1, 2), grid.vertex_index(3, 2),
                         grid.vertex_index(2, 1), grid.vertex_index(2, 3)):
            assert k[center, neighbor] == pytest.approx(-1.0)
        assert k[center, grid.vertex_index(1, 1)] == pytest.approx(0.0)

    def test_rejects_indefinite_tensor(self):
        with pytest.raises(ValidationError):
            stiffness_matrix(Grid2D(2, 2), np.array([[1.0, 2.0], [2.0, 1.0]]))


class TestBoundaryMass:
    def test_total_is_perimeter(self):
        mb = boundary_mass_matrix(Grid2D(5, 3))
        assert mb.sum() == pytest.approx(4.0, abs=1e-13)

    def test_interior_rows_are_empty(self):
        grid = Grid2D(4, 4)
        mb = boundary_mass_matrix(grid).toarray()
        interior = ~grid.boundary_vertex_mask()
        assert np.abs(mb[interior]).max() == 0.0
        assert np.abs(mb[:, interior]).max() == 0.0

    def test_exact_line_integral(self):
        grid = Grid2D(8, 8)
        mb = boundary_mass_matrix(grid)
        u = linear_field(grid, 0.0, 1.0, 0.0)  # u = x
        # integral of x^2 over the four sides: bottom+top give 2/3, left 0,
        # right 1 -> 5/3
        assert u @ (mb @ u) == pytest.approx(5.0 / 3.0, rel=1e-12)


class TestAdvectionMatrix:
    def test_column_sums_vanish(self):
        grid = Grid2D(6, 5)
        rng = np.random.default_rng(0)
        c = advection_matrix(grid, rng.standard_normal((grid.n_vertices, 2)))
        col_sums = np.asarray(c.sum(axis=0)).ravel()
        assert np.abs(col_sums).max() < 1e-14

    def test_zero_velocity_gives_zero(self):
        grid = Grid2D(3, 3)
        c = advection_matrix(grid, np.zeros((grid.n_vertices, 2)))
        assert c.nnz == 0 or np.abs(c.toarray()).max() == 0.0

    def test_constant_transport_of_linear_field(self):
        # The matrix is the weak divergence form, (C u)_i = -int u (v.grad
        # phi_i), which integrates by parts to int phi_i div(v u) on interior
        # hats.  For u = x and v = (1, 0), div(v u) = 1, and the integral of
        # an interior hat function is hx * hy.
        grid = Grid2D(4, 4)
        v = np.tile([1.0, 0.0], (grid.n_vertices, 1))
        u = linear_field(grid, 0.0, 1.0, 0.0)
        c = advection_matrix(grid, v)
        row = grid.vertex_index(2, 2)
        assert (c @ u)[row] == pytest.approx(grid.hx * grid.hy, rel=1e-12)

    def test_velocity_shape_validated(self):
        grid = Grid2D(2, 2)
        with pytest.raises(ValidationError):
            advection_matrix(grid, np.zeros((3, 2)))


class TestInterpolation:
    def test_partition_of_unity_and_linear_exactness(self):
        grid = Grid2D(5, 4)
        rng = np.random.default_rng(1)
        pts = rng.uniform(0, 1, size=(40, 2))
        b = grid.interpolation_matrix(pts)
        assert np.asarray(b.sum(axis=1)).ravel() == pytest.approx(np.ones(40))
        u = linear_field(grid, 0.7, -1.3, 2.1)
        assert b @ u == pytest.approx(0.7 - 1.3 * pts[:, 0] + 2.1 * pts[:, 1])

    def test_vertices_are_reproduced(self):
        grid = Grid2D(3, 3)
        b = grid.interpolation_matrix(grid.coords)
        assert np.abs(b.toarray() - np.eye(grid.n_vertices)).max() < 1e-12

    def test_corners_and_edges(self):
        grid = Grid2D(2, 2)
        b = grid.interpolation_matrix([[1.0, 1.0], [0.0, 0.5], [1.0, 0.25]])
        u = linear_field(grid, 0.0, 1.0, 3.0)
        assert b @ u == pytest.approx([4.0, 1.5, 1.75])

    def test_rejects_outside_points(self):
        grid = Grid2D(2, 2)
        with pytest.raises(ValidationError):
            grid.interpolation_matrix([[1.2, 0.5]])
        with pytest.raises(ValidationError):
            grid.interpolation_matrix([[0.5, -0.01]])
