"""Pure-numpy selection kernels.

Every function here evaluates log-determinant / trace functionals of row
restrictions of a low-rank surrogate ``U diag(lam) U^T``: for a row set ``S``
let ``G = U[S] diag(lam) U[S]^T``; then

* ``logdet`` kernels return ``log det(I + G)``;
* ``la`` kernels return ``sum_j [log(1 + mu_j) - mu_j / (1 + mu_j)]`` over the
  eigenvalues ``mu_j`` of ``G``, summed across samples.

Values are returned in whole (not halved) units; callers apply the 1/2 and
any sample averaging.  ``I + G`` has all eigenvalues >= 1, so the Cholesky
factorizations used below are unconditionally stable.

The compiled module ``oedplace._core`` implements the same interface; see
``oedplace.backend`` for the selection logic.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_triangular

__all__ = [
    "logdet_rows",
    "logdet_many",
    "logdet_gains",
    "la_rows",
    "la_many",
    "la_gains",
]

_CHUNK = 2048


def _as_index(rows) -> np.ndarray:
    return np.asarray(rows, dtype=np.intp)


def logdet_rows(u, lam, rows) -> float:
    """``log det(I + G)`` for a single row set."""
    rows = _as_index(rows)
    if rows.size == 0:
        return 0.0
    v = u[rows]
    g = (v * lam) @ v.T
    g[np.diag_indices_from(g)] += 1.0
    chol = np.linalg.cholesky(g)
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def logdet_many(u, lam, designs) -> np.ndarray:
    """Values for a stack of row sets, shape ``(m, r)``."""
    designs = np.atleast_2d(_as_index(designs))
    m, r = designs.shape
    if r == 0:
        return np.zeros(m)
    w = u * lam
    out = np.empty(m)
    eye = np.eye(r)
    for start in range(0, m, _CHUNK):
        idx = designs[start : start + _CHUNK]
        g = np.einsum("crk,csk->crs", u[idx], w[idx]) + eye
        chol = np.linalg.cholesky(g)
        diag = np.diagonal(chol, axis1=1, axis2=2)
        out[start : start + _CHUNK] = 2.0 * np.sum(np.log(diag), axis=1)
    return out


def logdet_gains(u, lam, base, cands) -> np.ndarray:
    """Values of ``base + [c]`` for every candidate ``c``.

    The base block of the Cholesky factor is shared, so each candidate costs
    one rank-one border: O(r k + r^2) instead of a full refactorization.
    """
    base = _as_index(base)
    cands = _as_index(cands)
    w = u * lam
    gcc = np.einsum("ck,ck->c", u[cands], w[cands])
    if base.size == 0:
        return np.log1p(gcc)
    g = u[base] @ w[base].T
    g[np.diag_indices_from(g)] += 1.0
    chol = np.linalg.cholesky(g)
    base_logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
    cross = u[base] @ w[cands].T  # (r0, m)
    y = solve_triangular(chol, cross, lower=True)
    border_sq = 1.0 + gcc - np.einsum("rm,rm->m", y, y)
    return base_logdet + np.log(border_sq)


def _la_from_eigs(mu: np.ndarray, axis=None):
    mu = np.clip(mu, 0.0, None)
    return np.sum(np.log1p(mu) - mu / (1.0 + mu), axis=axis)


def la_rows(us, lams, rows) -> float:
    """Sample-summed spectral functional for a single row set."""
    rows = _as_index(rows)
    if rows.size == 0:
        return 0.0
    total = 0.0
    for u, lam in zip(us, lams):
        v = u[rows]
        mu = np.linalg.eigvalsh((v * lam) @ v.T)
        total += float(_la_from_eigs(mu))
    return total


def la_many(us, lams, designs) -> np.ndarray:
    designs = np.atleast_2d(_as_index(designs))
    m, r = designs.shape
    out = np.zeros(m)
    if r == 0:
        return out
    for u, lam in zip(us, lams):
        w = u * lam
        for start in range(0, m, _CHUNK):
            idx = designs[start : start + _CHUNK]
            g = np.einsum("crk,csk->crs", u[idx], w[idx])
            mu = np.linalg.eigvalsh(g)
            out[start : start + _CHUNK] += _la_from_eigs(mu, axis=1)
    return out


def la_gains(us, lams, base, cands) -> np.ndarray:
    """Sample-summed values of ``base + [c]`` per candidate, via the same
    bordered factorization as :func:`logdet_gains` plus the bordered trace
    identity ``tr((I+G')^{-1}) = ||L^{-1}||_F^2 + (1 + ||w||^2) / s^2``."""
    base = _as_index(base)
    cands = _as_index(cands)
    m = cands.size
    out = np.zeros(m)
    r_new = base.size + 1
    for u, lam in zip(us, lams):
        w = u * lam
        gcc = np.einsum("ck,ck->c", u[cands], w[cands])
        if base.size == 0:
            border_sq = 1.0 + gcc
            out += np.log(border_sq) - 1.0 + 1.0 / border_sq
            continue
        g = u[base] @ w[base].T
        g[np.diag_indices_from(g)] += 1.0
        chol = np.linalg.cholesky(g)
        base_logdet = 2.0 * float(np.sum(np.log(np.diag(chol))))
        inv = solve_triangular(chol, np.eye(base.size), lower=True)
        base_trace = float(np.sum(inv**2))
        cross = u[base] @ w[cands].T
        y = solve_triangular(chol, cross, lower=True)
        border_sq = 1.0 + gcc - np.einsum("rm,rm->m", y, y)
        wvec = solve_triangular(chol, y, lower=True, trans="T")
        trace = base_trace + (1.0 + np.einsum("rm,rm->m", wvec, wvec)) / border_sq
        out += base_logdet + np.log(border_sq) - r_new + trace
    return out
