"""Uniform triangular meshes on the unit square and P1 finite-element assembly.

The mesh is an ``nx`` by ``ny`` grid of rectangular cells, each split into two
right triangles along the diagonal from the cell's lower-left to its
upper-right corner.  Vertices are numbered row by row (index
``iy * (nx + 1) + ix``), so orderings are deterministic and reproducible.

All assembly routines return ``scipy.sparse.csr_matrix`` and are vectorized
over elements; quadrature is exact for the polynomial integrands that appear
(P1 trial/test functions, elementwise-constant gradients, nodally interpolated
velocity fields).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sparse

from .errors import ValidationError

__all__ = [
    "Grid2D",
    "mass_matrix",
    "lumped_mass_diagonal",
    "stiffness_matrix",
    "boundary_mass_matrix",
    "advection_matrix",
]


@dataclass(frozen=True)
class Grid2D:
    """Structured triangulation of the unit square.

    Attributes
    ----------
    nx, ny : int
        Number of cells per direction; the grid has ``(nx+1)*(ny+1)`` vertices
        and ``2*nx*ny`` triangles.
    """

    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValidationError("grid needs at least one cell per direction")

    @property
    def n_vertices(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def hx(self) -> float:
        return 1.0 / self.nx

    @property
    def hy(self) -> float:
        return 1.0 / self.ny

    def vertex_index(self, ix, iy):
        """Row-major vertex index for integer lattice coordinates."""
        return iy * (self.nx + 1) + ix

    @cached_property
    def coords(self) -> np.ndarray:
        """Vertex coordinates, shape ``(n_vertices, 2)``."""
        x = np.linspace(0.0, 1.0, self.nx + 1)
        y = np.linspace(0.0, 1.0, self.ny + 1)
        xx, yy = np.meshgrid(x, y)  # row-major: y varies along axis 0
        return np.column_stack([xx.ravel(), yy.ravel()])

    @cached_property
    def triangles(self) -> np.ndarray:
        """Vertex indices per triangle, shape ``(2*nx*ny, 3)``.

        Each cell contributes a lower triangle ``(v00, v10, v11)`` and an
        upper triangle ``(v00, v11, v01)``; both are counterclockwise.
        """
        ix, iy = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ix = ix.ravel()
        iy = iy.ravel()
        v00 = iy * (self.nx + 1) + ix
        v10 = v00 + 1
        v01 = v00 + (self.nx + 1)
        v11 = v01 + 1
        lower = np.column_stack([v00, v10, v11])
        upper = np.column_stack([v00, v11, v01])
        return np.vstack([lower, upper]).astype(np.int64)

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        """Boundary edges as vertex index pairs, shape ``(n_edges, 2)``."""
        nx, ny = self.nx, self.ny
        edges = []
        for ix in range(nx):  # bottom and top
            edges.append((self.vertex_index(ix, 0), self.vertex_index(ix + 1, 0)))
            edges.append((self.vertex_index(ix, ny), self.vertex_index(ix + 1, ny)))
        for iy in range(ny):  # left and right
            edges.append((self.vertex_index(0, iy), self.vertex_index(0, iy + 1)))
            edges.append((self.vertex_index(nx, iy), self.vertex_index(nx, iy + 1)))
        return np.asarray(edges, dtype=np.int64)

    def boundary_vertex_mask(self) -> np.ndarray:
        """Boolean mask of vertices on the boundary of the square."""
        c = self.coords
        return (c[:, 0] == 0.0) | (c[:, 0] == 1.0) | (c[:, 1] == 0.0) | (c[:, 1] == 1.0)

    def edge_vertex_mask(self, side: str) -> np.ndarray:
        """Mask of vertices on one side: 'bottom', 'top', 'left' or 'right'."""
        c = self.coords
        if side == "bottom":
            return c[:, 1] == 0.0
        if side == "top":
            return c[:, 1] == 1.0
        if side == "left":
            return c[:, 0] == 0.0
        if side == "right":
            return c[:, 0] == 1.0
        raise ValidationError(f"unknown side {side!r}")

    def interpolation_matrix(self, points) -> sparse.csr_matrix:
        """Sparse point-evaluation operator for the P1 space.

        Row ``i`` holds the barycentric weights of ``points[i]`` in its
        containing triangle, so rows are nonnegative and sum to one
        (partition of unity).  Points must lie in the closed unit square.
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise ValidationError("points must have shape (m, 2)")
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValidationError("points must lie inside the closed unit square")

        sx = pts[:, 0] * self.nx
        sy = pts[:, 1] * self.ny
        cx = np.minimum(sx.astype(np.int64), self.nx - 1)
        cy = np.minimum(sy.astype(np.int64), self.ny - 1)
        s = sx - cx  # cell-local coordinates in [0, 1]
        t = sy - cy

        v00 = cy * (self.nx + 1) + cx
        v10 = v00 + 1
        v01 = v00 + (self.nx + 1)
        v11 = v01 + 1

        m = pts.shape[0]
        cols = np.empty((m, 3), dtype=np.int64)
        vals = np.empty((m, 3), dtype=float)
        low = t <= s  # lower triangle (v00, v10, v11)
        cols[low] = np.column_stack([v00[low], v10[low], v11[low]])
        vals[low] = np.column_stack([1.0 - s[low], s[low] - t[low], t[low]])
        up = ~low  # upper triangle (v00, v11, v01)
        cols[up] = np.column_stack([v00[up], v11[up], v01[up]])
        vals[up] = np.column_stack([1.0 - t[up], s[up], t[up] - s[up]])

        rows = np.repeat(np.arange(m), 3)
        mat = sparse.coo_matrix(
            (vals.ravel(), (rows, cols.ravel())), shape=(m, self.n_vertices)
        )
        return mat.tocsr()


def _triangle_geometry(grid: Grid2D):
    """Areas and constant basis gradients per triangle.

    Returns ``(area, grads)`` with ``area`` of shape ``(E,)`` and ``grads`` of
    shape ``(E, 3, 2)`` where ``grads[e, i]`` is the gradient of the i-th local
    basis function on element ``e``.
    """
    p = grid.coords[grid.triangles]  # (E, 3, 2)
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * (
        (x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
        - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0])
    )
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    grads = np.stack([b, c], axis=2) / (2.0 * area)[:, None, None]
    return area, grads


def _assemble(grid: Grid2D, local: np.ndarray) -> sparse.csr_matrix:
    """Scatter per-element 3x3 blocks ``local`` (E, 3, 3) into a CSR matrix."""
    tri = grid.triangles
    rows = np.repeat(tri, 3, axis=1).ravel()
    cols = np.tile(tri, (1, 3)).ravel()
    mat = sparse.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(grid.n_vertices, grid.n_vertices)
    )
    return mat.tocsr()


_MASS_REF = (np.ones((3, 3)) + np.eye(3)) / 12.0


def mass_matrix(grid: Grid2D) -> sparse.csr_matrix:
    """Consistent P1 mass matrix (symmetric positive definite)."""
    area, _ = _triangle_geometry(grid)
    local = area[:, None, None] * _MASS_REF[None, :, :]
    return _assemble(grid, local)


def lumped_mass_diagonal(grid: Grid2D) -> np.ndarray:
    """Row-sum lumped mass matrix diagonal (positive, sums to the domain area)."""
    area, _ = _triangle_geometry(grid)
    diag = np.zeros(grid.n_vertices)
    np.add.at(diag, grid.triangles.ravel(), np.repeat(area / 3.0, 3))
    return diag


def stiffness_matrix(grid: Grid2D, theta=None) -> sparse.csr_matrix:
    """Anisotropic stiffness matrix for the form ``(Theta grad u, grad w)``.

    ``theta`` is a symmetric positive definite 2x2 tensor (identity when
    omitted).  Row and column sums vanish because constants lie in the kernel
    of the gradient.
    """
    if theta is None:
        theta = np.eye(2)
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (2, 2):
        raise ValidationError("theta must be a 2x2 matrix")
    if not np.allclose(theta, theta.T, rtol=0.0, atol=1e-12):
        raise ValidationError("theta must be symmetric")
    if np.any(np.linalg.eigvalsh(theta) <= 0.0):
        raise ValidationError("theta must be positive definite")
    area, grads = _triangle_geometry(grid)
    tg = grads @ theta  # (E, 3, 2)
    local = area[:, None, None] * np.einsum("eik,ejk->eij", tg, grads)
    return _assemble(grid, local)


def boundary_mass_matrix(grid: Grid2D) -> sparse.csr_matrix:
    """Mass matrix of the P1 trace space on the boundary of the square."""
    edges = grid.boundary_edges
    p = grid.coords[edges]  # (m, 2, 2)
    length = np.linalg.norm(p[:, 1] - p[:, 0], axis=1)
    ref = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    local = length[:, None, None] * ref[None, :, :]
    rows = np.repeat(edges, 2, axis=1).ravel()
    cols = np.tile(edges, (1, 2)).ravel()
    mat = sparse.coo_matrix(
        (local.ravel(), (rows, cols)), shape=(grid.n_vertices, grid.n_vertices)
    )
    return mat.tocsr()


def advection_matrix(grid: Grid2D, velocity_nodal) -> sparse.csr_matrix:
    """Transport matrix in divergence (conservative) form.

    For nodal velocity values ``v`` the entry is
    ``C[i, j] = -Integral( phi_j * (v_h . grad(phi_i)) )`` with ``v_h`` the P1
    interpolant of ``v``; the integrand is quadratic so the assembly below is
    exact.  Column sums vanish identically (partition of unity), hence time
    stepping with this matrix conserves the total mass of the transported
    field to solver roundoff whenever the normal velocity vanishes on the
    boundary.
    """
    vel = np.asarray(velocity_nodal, dtype=float)
    if vel.shape != (grid.n_vertices, 2):
        raise ValidationError("velocity must have shape (n_vertices, 2)")
    area, grads = _triangle_geometry(grid)
    tri = grid.triangles
    v_e = vel[tri]  # (E, 3, 2) nodal velocities per element
    # Integral( phi_j v_h ) over an element = sum_l Mref[j, l] * area * v_l.
    mv = area[:, None, None] * np.einsum("jl,eld->ejd", _MASS_REF, v_e)  # (E, 3, 2)
    local = -np.einsum("eid,ejd->eij", grads, mv)
    return _assemble(grid, local)
