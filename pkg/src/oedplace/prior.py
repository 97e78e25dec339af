"""Gaussian field priors on the FEM parameter space.

The prior is the discretization of a Matern-like field: with ``K`` the
(anisotropic) stiffness matrix, ``M`` the mass matrix and ``Mb`` the boundary
mass matrix,

    A = gamma * K + delta * M + beta * Mb,      Cov = A^{-1} M A^{-1},

where the Robin coefficient ``beta = sqrt(gamma * delta)`` reduces the
variance inflation the plain zero-flux boundary causes near edges and
corners.  Samples are drawn as ``mean + A^{-1} M_L^{1/2} xi`` with ``M_L`` the
lumped mass matrix, so their covariance is the lumped variant
``A^{-1} M_L A^{-1}``.
"""

from __future__ import annotations

import math

import numpy as np

from . import mesh as fem
from .errors import CapabilityError, ValidationError
from .linalg import CheckedFactor

__all__ = ["PriorOperator", "DensePrior", "build_prior", "rotated_anisotropy"]

#: Relative residual allowed for a direct sparse solve before it is declared failed.
SOLVE_RTOL = 1e-12

#: Largest parameter dimension for which dense fallbacks (mass Cholesky,
#: full pointwise variance) are attempted.
DENSE_LIMIT = 6000


def rotated_anisotropy(theta1: float, theta2: float, alpha: float) -> np.ndarray:
    """SPD diffusion tensor with eigenvalues ``theta1, theta2``, first axis at
    angle ``alpha``: ``R(alpha) diag(theta1, theta2) R(alpha)^T``."""
    if theta1 <= 0 or theta2 <= 0:
        raise ValidationError("anisotropy eigenvalues must be positive")
    c, s = math.cos(alpha), math.sin(alpha)
    rot = np.array([[c, -s], [s, c]])
    return rot @ np.diag([theta1, theta2]) @ rot.T


class PriorOperator:
    """Gaussian prior ``N(mean, A^{-1} M A^{-1})`` on the nodal parameter space.

    Instances are immutable after construction; the cached factorizations are
    shared read-only, so a single prior may be used from several workers.
    """

    def __init__(self, grid: fem.Grid2D, gamma, delta, theta=None, mean=None, beta=None):
        if gamma <= 0 or delta <= 0:
            raise ValidationError("gamma and delta must be positive")
        if beta is None:
            beta = math.sqrt(gamma * delta)
        if beta < 0:
            raise ValidationError("beta must be nonnegative")

        self.grid = grid
        self.gamma = float(gamma)
        self.delta = float(delta)
        self.beta = float(beta)
        self.theta = np.eye(2) if theta is None else np.asarray(theta, dtype=float)

        n = grid.n_vertices
        if mean is None:
            mean = np.zeros(n)
        mean = np.asarray(mean, dtype=float)
        if mean.ndim == 0:
            mean = np.full(n, float(mean))
        if mean.shape != (n,):
            raise ValidationError(f"mean must be a scalar or a vector of length {n}")
        self.mean = mean

        self.M = fem.mass_matrix(grid)
        stiffness = fem.stiffness_matrix(grid, self.theta)
        self.A = (self.gamma * stiffness + self.delta * self.M).tocsr()
        if self.beta > 0.0:
            self.A = (self.A + self.beta * fem.boundary_mass_matrix(grid)).tocsr()

        self._A_factor = CheckedFactor(self.A, "prior operator A", rtol=SOLVE_RTOL)
        self._M_factor = CheckedFactor(self.M, "mass matrix M", rtol=SOLVE_RTOL)
        self._lumped_sqrt = np.sqrt(fem.lumped_mass_diagonal(grid))
        self._lumped = self._lumped_sqrt**2
        self._mass_chol = None
        self._variance = None

    @property
    def n(self) -> int:
        return self.grid.n_vertices

    # -- core actions ------------------------------------------------------

    def solve_A(self, b: np.ndarray) -> np.ndarray:
        """Apply ``A^{-1}`` with a residual check."""
        return self._A_factor.solve(np.asarray(b, dtype=float))

    def apply_covariance(self, v, lumped: bool = False) -> np.ndarray:
        """Covariance action ``A^{-1} M A^{-1} v``.

        With ``lumped=True`` the lumped mass matrix is used instead of the
        consistent one; this is the exact covariance of :meth:`sample`.
        """
        inner = self.solve_A(v)
        inner = self._lumped * inner if lumped else self.M @ inner
        return self.solve_A(inner)

    def apply_precision(self, v) -> np.ndarray:
        """Precision action ``A M^{-1} A v``."""
        return self.A @ self._M_factor.solve(self.A @ np.asarray(v, dtype=float))

    def precision_norm_sq(self, v) -> float:
        """Squared precision norm ``<v, A M^{-1} A v>`` (nonnegative)."""
        av = self.A @ np.asarray(v, dtype=float)
        return float(av @ self._M_factor.solve(av))

    def sample(self, seed_or_rng=None) -> np.ndarray:
        """Draw ``mean + A^{-1} M_L^{1/2} xi`` with ``xi`` standard normal."""
        rng = np.random.default_rng(seed_or_rng) if not isinstance(
            seed_or_rng, np.random.Generator
        ) else seed_or_rng
        xi = rng.standard_normal(self.n)
        return self.mean + self.solve_A(self._lumped_sqrt * xi)

    # -- desk-scale extras ---------------------------------------------------

    def pointwise_variance(self, lumped: bool = False) -> np.ndarray:
        """Diagonal of the covariance, computed column by column.

        Cost is one ``A``-solve per vertex, so this is guarded to desk scale.
        """
        if self.n > DENSE_LIMIT:
            raise CapabilityError(
                f"pointwise variance assembles {self.n} covariance columns; "
                f"supported up to n={DENSE_LIMIT}"
            )
        if lumped:
            cols = np.column_stack([self.solve_A(e) for e in np.eye(self.n)])
            return np.einsum("ij,i,ij->j", cols, self._lumped, cols)
        if self._variance is None:
            var = np.empty(self.n)
            eye = np.eye(self.n)
            for j in range(self.n):
                x = self.solve_A(eye[j])
                var[j] = x @ (self.M @ x)
            self._variance = var
        return self._variance.copy()

    def _mass_cholesky(self) -> np.ndarray:
        if self._mass_chol is None:
            if self.n > DENSE_LIMIT:
                raise CapabilityError(
                    "consistent mass Cholesky is dense; "
                    f"supported up to n={DENSE_LIMIT}"
                )
            self._mass_chol = np.linalg.cholesky(self.M.toarray())
        return self._mass_chol

    def sqrt_action(self, v) -> np.ndarray:
        """Covariance factor action ``S v = A^{-1} L v`` with ``M = L L^T``.

        ``S S^T`` equals the (consistent) covariance exactly.
        """
        return self.solve_A(self._mass_cholesky() @ np.asarray(v, dtype=float))

    def sqrt_transpose_action(self, v) -> np.ndarray:
        """Action of ``S^T = L^T A^{-1}``."""
        return self._mass_cholesky().T @ self.solve_A(v)


class DensePrior:
    """Gaussian prior with an explicit dense covariance matrix.

    Used by matrix-defined problems and small closed-form test cases; exposes
    the same action interface as :class:`PriorOperator`.
    """

    def __init__(self, mean, covariance):
        cov = np.asarray(covariance, dtype=float)
        if cov.ndim != 2 or cov.shape[0] != cov.shape[1]:
            raise ValidationError("covariance must be a square matrix")
        if not np.allclose(cov, cov.T, rtol=0.0, atol=1e-10 * max(1.0, abs(cov).max())):
            raise ValidationError("covariance must be symmetric")
        self.covariance = 0.5 * (cov + cov.T)
        try:
            self._chol = np.linalg.cholesky(self.covariance)
        except np.linalg.LinAlgError as exc:
            raise ValidationError("covariance must be positive definite") from exc
        mean = np.asarray(mean, dtype=float)
        if mean.ndim == 0:
            mean = np.full(cov.shape[0], float(mean))
        if mean.shape != (cov.shape[0],):
            raise ValidationError("mean length must match the covariance")
        self.mean = mean

    @property
    def n(self) -> int:
        return self.mean.shape[0]

    def apply_covariance(self, v) -> np.ndarray:
        return self.covariance @ np.asarray(v, dtype=float)

    def apply_precision(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        y = np.linalg.solve(self._chol, v)
        return np.linalg.solve(self._chol.T, y)

    def precision_norm_sq(self, v) -> float:
        y = np.linalg.solve(self._chol, np.asarray(v, dtype=float))
        return float(y @ y)

    def sample(self, seed_or_rng=None) -> np.ndarray:
        rng = np.random.default_rng(seed_or_rng) if not isinstance(
            seed_or_rng, np.random.Generator
        ) else seed_or_rng
        return self.mean + self._chol @ rng.standard_normal(self.n)

    def pointwise_variance(self) -> np.ndarray:
        return np.diag(self.covariance).copy()

    def sqrt_action(self, v) -> np.ndarray:
        return self._chol @ np.asarray(v, dtype=float)

    def sqrt_transpose_action(self, v) -> np.ndarray:
        return self._chol.T @ np.asarray(v, dtype=float)


def build_prior(grid, gamma, delta, theta=None, mean=None, beta=None) -> PriorOperator:
    """Build the FEM field prior; see :class:`PriorOperator`.

    ``beta`` defaults to the boundary correction ``sqrt(gamma * delta)``; pass
    ``beta=0`` for the uncorrected operator.  A non-SPD ``theta`` is rejected.
    """
    return PriorOperator(grid, gamma, delta, theta=theta, mean=mean, beta=beta)
