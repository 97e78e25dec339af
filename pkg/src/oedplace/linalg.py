"""Small shared linear-algebra helpers."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sparse
import scipy.sparse.linalg as spla

from .errors import NumericalError

__all__ = ["CheckedFactor"]


class CheckedFactor:
    """Direct LU factorization of a sparse matrix with per-solve residual checks.

    Solves with the transposed matrix reuse the same factorization
    (``trans="T"``).  A zero right-hand side short-circuits to zero.
    """

    def __init__(self, matrix: sparse.spmatrix, name: str, rtol: float = 1e-12):
        self.matrix = matrix.tocsr()
        self.rtol = rtol
        self.name = name
        try:
            self._lu = spla.splu(matrix.tocsc())
        except RuntimeError as exc:
            raise NumericalError(f"factorization of {name} failed: {exc}") from exc

    def solve(self, b: np.ndarray, trans: str = "N") -> np.ndarray:
        b = np.asarray(b, dtype=float)
        if not np.all(np.isfinite(b)):
            raise NumericalError(f"non-finite right-hand side in solve with {self.name}")
        if not b.any():
            return np.zeros_like(b)
        x = self._lu.solve(b, trans=trans)
        op = self.matrix if trans == "N" else self.matrix.T
        bnorm = np.linalg.norm(b)
        residual = np.linalg.norm(op @ x - b) / bnorm
        if not np.isfinite(residual) or residual > self.rtol:
            raise NumericalError(
                f"direct solve with {self.name} reached relative residual "
                f"{residual:.3e} > {self.rtol:.0e}",
                residual=float(residual),
            )
        return x
