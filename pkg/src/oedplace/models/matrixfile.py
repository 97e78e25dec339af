"""Forward models defined by an explicit observation matrix.

Useful for closed-form test problems and for running the selection machinery
on externally supplied operators: the "state" is the full candidate
observation vector ``F @ m`` and the Jacobian is ``F`` itself.
"""

from __future__ import annotations

import numpy as np

from ..errors import ValidationError
from .base import ForwardModel, Linearization

__all__ = ["MatrixModel", "load_matrix_csv"]


def load_matrix_csv(path) -> np.ndarray:
    """Read a dense matrix from a plain CSV of numbers (one row per line)."""
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)  # empty file is our error
        mat = np.atleast_2d(np.loadtxt(path, delimiter=",", dtype=float))
    if mat.size == 0:
        raise ValidationError(f"{path}: empty matrix file")
    return mat


class _MatrixLinearization(Linearization):
    def predict(self, design=None) -> np.ndarray:
        return self.model.observe(self.model.matrix @ self.point, design)

    def jacobian_action(self, dm) -> np.ndarray:
        model = self.model
        dm = model._check_parameter(dm)
        model.counters.incremental_forward += 1
        return model.matrix @ dm

    def jacobian_transpose_action(self, z) -> np.ndarray:
        model = self.model
        z = np.asarray(z, dtype=float)
        if z.shape != (model.d,):
            raise ValidationError(f"adjoint input must have length {model.d}")
        model.counters.incremental_adjoint += 1
        return model.matrix.T @ z


class MatrixModel(ForwardModel):
    """Linear model ``m -> F m`` with one candidate row per matrix row."""

    def __init__(self, matrix):
        super().__init__()
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2:
            raise ValidationError("observation matrix must be two-dimensional")
        self.matrix = matrix

    @property
    def n(self) -> int:
        return self.matrix.shape[1]

    @property
    def d(self) -> int:
        return self.matrix.shape[0]

    def solve_forward(self, m) -> np.ndarray:
        m = self._check_parameter(m)
        self.counters.forward_solves += 1
        return self.matrix @ m

    def observe(self, state, design=None) -> np.ndarray:
        state = np.asarray(state, dtype=float)
        if state.shape != (self.d,):
            raise ValidationError("observe expects the full candidate vector")
        return self._restrict(state, design)

    def linearize(self, m) -> _MatrixLinearization:
        m = self._check_parameter(m)
        self._lin = _MatrixLinearization(self, m)
        return self._lin
