"""Steady diffusion with a log-normal conductivity field.

The state solves ``-div( exp(m) grad u ) = 0`` on the unit square with
``u = 1`` on the top edge, ``u = 0`` on the bottom edge and natural (zero
flux) conditions on the left and right edges.  The conductivity is evaluated
once per element as ``exp`` of the element-average of the nodal parameter, so
the stiffness matrix is a per-element rescaling of fixed geometric blocks and
its parameter derivative has a closed form.

The parameter-to-observable map is nonlinear; :meth:`linearize` performs the
forward solve, factorizes the reduced stiffness once, and hands out exact
Jacobian / adjoint actions costing one triangular-backed solve each.
"""

from __future__ import annotations

import numpy as np
import scipy.sparse as sparse

from .. import mesh as fem
from ..errors import NumericalError, ValidationError
from ..linalg import CheckedFactor
from .base import ForwardModel, Linearization, SensorArray

__all__ = ["LogNormalDiffusionModel"]

STEP_RTOL = 1e-10


class _LogNormalLinearization(Linearization):
    def __init__(self, model: "LogNormalDiffusionModel", m, state, factor, kappa):
        super().__init__(model, m)
        self.state = state
        self._factor = factor
        self._kappa = kappa
        # K_geo_e @ u_e per element: the only state-dependence of dK(m)u.
        tri = model.grid.triangles
        self._ku = np.einsum("eij,ej->ei", model._geo_blocks, state[tri])

    def predict(self, design=None) -> np.ndarray:
        return self.model.observe(self.state, design)

    def _coefficient_derivative_action(self, dm: np.ndarray) -> np.ndarray:
        """Action of d/dm [K(m) u] on a parameter increment (full row space)."""
        model = self.model
        tri = model.grid.triangles
        scale = self._kappa * dm[tri].mean(axis=1)
        out = np.zeros(model.n)
        np.add.at(out, tri.ravel(), (self._ku * scale[:, None]).ravel())
        return out

    def _coefficient_derivative_transpose(self, w: np.ndarray) -> np.ndarray:
        """Transpose of the above, mapping a state vector to parameter space."""
        model = self.model
        tri = model.grid.triangles
        per_element = self._kappa * np.einsum("ei,ei->e", w[tri], self._ku) / 3.0
        out = np.zeros(model.n)
        np.add.at(out, tri.ravel(), np.repeat(per_element, 3))
        return out

    def jacobian_action(self, dm) -> np.ndarray:
        model = self.model
        dm = model._check_parameter(np.asarray(dm, dtype=float))
        model.counters.incremental_forward += 1
        rhs = -self._coefficient_derivative_action(dm)[model._free]
        du = np.zeros(model.n)
        du[model._free] = self._factor.solve(rhs)
        return model.sensors.observation_matrix @ du

    def jacobian_transpose_action(self, z) -> np.ndarray:
        model = self.model
        z = np.asarray(z, dtype=float)
        if z.shape != (model.d,):
            raise ValidationError(f"adjoint input must have length {model.d}")
        model.counters.incremental_adjoint += 1
        rhs = (model.sensors.observation_matrix.T @ z)[model._free]
        w = np.zeros(model.n)
        w[model._free] = self._factor.solve(rhs)  # reduced stiffness is symmetric
        return -self._coefficient_derivative_transpose(w)


class LogNormalDiffusionModel(ForwardModel):
    """Nonlinear map from log-conductivity to sensor readings of the state."""

    def __init__(self, grid: fem.Grid2D, sensors: SensorArray):
        super().__init__()
        self.grid = grid
        self.sensors = sensors

        _, grads = fem._triangle_geometry(grid)
        area = fem._triangle_geometry(grid)[0]
        self._geo_blocks = area[:, None, None] * np.einsum("eik,ejk->eij", grads, grads)

        dirichlet = grid.edge_vertex_mask("top") | grid.edge_vertex_mask("bottom")
        self._free = np.flatnonzero(~dirichlet)
        self._dirichlet = np.flatnonzero(dirichlet)
        self.boundary_values = np.zeros(grid.n_vertices)
        self.boundary_values[grid.edge_vertex_mask("top")] = 1.0

        tri = grid.triangles
        self._rows = np.repeat(tri, 3, axis=1).ravel()
        self._cols = np.tile(tri, (1, 3)).ravel()

    @property
    def n(self) -> int:
        return self.grid.n_vertices

    @property
    def d(self) -> int:
        return self.sensors.n_locations

    def _element_conductivity(self, m: np.ndarray) -> np.ndarray:
        with np.errstate(over="ignore"):
            kappa = np.exp(m[self.grid.triangles].mean(axis=1))
        if not np.all(np.isfinite(kappa)) or np.any(kappa == 0.0):
            raise NumericalError("exp(m) overflowed or underflowed in the conductivity")
        return kappa

    def _stiffness(self, kappa: np.ndarray) -> sparse.csr_matrix:
        data = (kappa[:, None, None] * self._geo_blocks).ravel()
        mat = sparse.coo_matrix(
            (data, (self._rows, self._cols)), shape=(self.n, self.n)
        )
        return mat.tocsr()

    def _solve_state(self, m: np.ndarray):
        kappa = self._element_conductivity(m)
        stiffness = self._stiffness(kappa)
        reduced = stiffness[self._free][:, self._free]
        factor = CheckedFactor(reduced, "reduced log-normal stiffness", rtol=STEP_RTOL)
        rhs = -(stiffness[self._free][:, self._dirichlet]
                @ self.boundary_values[self._dirichlet])
        u = self.boundary_values.copy()
        u[self._free] = factor.solve(rhs)
        return u, factor, kappa

    def solve_forward(self, m) -> np.ndarray:
        m = self._check_parameter(np.asarray(m, dtype=float))
        self.counters.forward_solves += 1
        u, _, _ = self._solve_state(m)
        return u

    def observe(self, state, design=None) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.n,):
            raise ValidationError("observe expects a nodal state vector")
        return self._restrict(self.sensors.observation_matrix @ state, design)

    def linearize(self, m) -> _LogNormalLinearization:
        m = self._check_parameter(np.asarray(m, dtype=float))
        self.counters.forward_solves += 1
        u, factor, kappa = self._solve_state(m)
        self._lin = _LogNormalLinearization(self, m, u, factor, kappa)
        return self._lin
