# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled selection kernels.

Same interface and semantics as ``oedplace._core_py``: log-determinant and
trace functionals of row restrictions of low-rank surrogates, in whole (not
halved) units.  All factorizations act on ``I + G`` with ``G`` positive
semidefinite, so the hand-rolled Cholesky routines below operate on matrices
whose eigenvalues are at least one and cannot break down on valid input.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, log1p, sqrt

cnp.import_array()

ctypedef cnp.intp_t index_t


cdef int _cholesky(double* a, Py_ssize_t r) nogil:
    """In-place lower Cholesky of a row-major r x r matrix; 0 on success."""
    cdef Py_ssize_t i, j, t
    cdef double s
    for j in range(r):
        s = a[j * r + j]
        for t in range(j):
            s -= a[j * r + t] * a[j * r + t]
        if s <= 0.0:
            return 1
        a[j * r + j] = sqrt(s)
        for i in range(j + 1, r):
            s = a[i * r + j]
            for t in range(j):
                s -= a[i * r + t] * a[j * r + t]
            a[i * r + j] = s / a[j * r + j]
    return 0


cdef double _chol_logdet(const double* a, Py_ssize_t r) nogil:
    cdef Py_ssize_t j
    cdef double s = 0.0
    for j in range(r):
        s += log(a[j * r + j])
    return 2.0 * s


cdef double _chol_inverse_fro_sq(const double* a, Py_ssize_t r, double* work) nogil:
    """||L^{-1}||_F^2 via forward solves against unit vectors."""
    cdef Py_ssize_t i, j, t
    cdef double s, total = 0.0
    for j in range(r):
        work[j] = 1.0 / a[j * r + j]
        total += work[j] * work[j]
        for i in range(j + 1, r):
            s = 0.0
            for t in range(j, i):
                s -= a[i * r + t] * work[t]
            work[i] = s / a[i * r + i]
            total += work[i] * work[i]
    return total


cdef void _gather_scaled(const double[:, ::1] u, const double[::1] lam,
                         const index_t[::1] rows, double* v, double* w) nogil:
    """Copy the selected rows into contiguous scratch: v = U[rows],
    w = U[rows] * lam (row-major r x k)."""
    cdef Py_ssize_t r = rows.shape[0], k = u.shape[1]
    cdef Py_ssize_t i, t
    for i in range(r):
        for t in range(k):
            v[i * k + t] = u[rows[i], t]
            w[i * k + t] = v[i * k + t] * lam[t]


cdef void _gram_plus_identity(const double* v, const double* w,
                              Py_ssize_t r, Py_ssize_t k, double* g) nogil:
    cdef Py_ssize_t i, j, t
    cdef double acc
    for i in range(r):
        for j in range(i + 1):
            acc = 0.0
            for t in range(k):
                acc += v[i * k + t] * w[j * k + t]
            g[i * r + j] = acc
            g[j * r + i] = acc
        g[i * r + i] += 1.0


cdef int _restricted_logdet(const double[:, ::1] u, const double[::1] lam,
                            const index_t[::1] rows, double* v, double* w,
                            double* g, double* out) nogil:
    cdef Py_ssize_t r = rows.shape[0], k = u.shape[1]
    if r == 0:
        out[0] = 0.0
        return 0
    _gather_scaled(u, lam, rows, v, w)
    _gram_plus_identity(v, w, r, k, g)
    if _cholesky(g, r):
        return 1
    out[0] = _chol_logdet(g, r)
    return 0


cdef int _restricted_la(const double[:, ::1] u, const double[::1] lam,
                        const index_t[::1] rows, double* v, double* w,
                        double* g, double* work, double* out) nogil:
    """logdet(I+G) - r + trace((I+G)^{-1}) for one sample and one row set."""
    cdef Py_ssize_t r = rows.shape[0], k = u.shape[1]
    if r == 0:
        out[0] = 0.0
        return 0
    _gather_scaled(u, lam, rows, v, w)
    _gram_plus_identity(v, w, r, k, g)
    if _cholesky(g, r):
        return 1
    out[0] = _chol_logdet(g, r) - r + _chol_inverse_fro_sq(g, r, work)
    return 0


class _KernelError(RuntimeError):
    pass


def _scratch(r, k):
    return (np.empty(r * k), np.empty(r * k), np.empty(r * r), np.empty(r))


def logdet_rows(u, lam, rows):
    """``log det(I + G)`` for a single row set."""
    cdef double[:, ::1] u_v = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] lam_v = np.ascontiguousarray(lam, dtype=np.float64)
    cdef index_t[::1] rows_v = np.ascontiguousarray(rows, dtype=np.intp)
    cdef Py_ssize_t r = rows_v.shape[0], k = u_v.shape[1]
    if r == 0:
        return 0.0
    scratch_v, scratch_w, scratch_g, _ = _scratch(r, k)
    cdef double[::1] sv = scratch_v, sw = scratch_w, sg = scratch_g
    cdef double out = 0.0
    if _restricted_logdet(u_v, lam_v, rows_v, &sv[0], &sw[0], &sg[0], &out):
        raise _KernelError("Cholesky breakdown: surrogate is not PSD")
    return out


def logdet_many(u, lam, designs):
    """Values for a stack of row sets, shape ``(m, r)``."""
    cdef double[:, ::1] u_v = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] lam_v = np.ascontiguousarray(lam, dtype=np.float64)
    designs_arr = np.ascontiguousarray(np.atleast_2d(designs), dtype=np.intp)
    cdef index_t[:, ::1] designs_v = designs_arr
    cdef Py_ssize_t m = designs_v.shape[0], r = designs_v.shape[1]
    cdef Py_ssize_t k = u_v.shape[1]
    out_arr = np.zeros(m)
    cdef double[::1] out_v = out_arr
    if r == 0 or m == 0:
        return out_arr
    scratch_v, scratch_w, scratch_g, _ = _scratch(r, k)
    cdef double[::1] sv = scratch_v, sw = scratch_w, sg = scratch_g
    cdef Py_ssize_t i
    cdef int bad = 0
    with nogil:
        for i in range(m):
            if _restricted_logdet(u_v, lam_v, designs_v[i], &sv[0], &sw[0],
                                  &sg[0], &out_v[i]):
                bad = 1
                break
    if bad:
        raise _KernelError("Cholesky breakdown: surrogate is not PSD")
    return out_arr


def la_rows(us, lams, rows):
    """Sample-summed spectral functional for a single row set."""
    cdef double[:, :, ::1] us_v = np.ascontiguousarray(us, dtype=np.float64)
    cdef double[:, ::1] lams_v = np.ascontiguousarray(lams, dtype=np.float64)
    cdef index_t[::1] rows_v = np.ascontiguousarray(rows, dtype=np.intp)
    cdef Py_ssize_t n_samples = us_v.shape[0], k = us_v.shape[2]
    cdef Py_ssize_t r = rows_v.shape[0]
    if r == 0:
        return 0.0
    scratch_v, scratch_w, scratch_g, scratch_work = _scratch(r, k)
    cdef double[::1] sv = scratch_v, sw = scratch_w, sg = scratch_g, swk = scratch_work
    cdef double total = 0.0, val = 0.0
    cdef Py_ssize_t s
    cdef int bad = 0
    with nogil:
        for s in range(n_samples):
            if _restricted_la(us_v[s], lams_v[s], rows_v, &sv[0], &sw[0],
                              &sg[0], &swk[0], &val):
                bad = 1
                break
            total += val
    if bad:
        raise _KernelError("Cholesky breakdown: surrogate is not PSD")
    return total


def la_many(us, lams, designs):
    cdef double[:, :, ::1] us_v = np.ascontiguousarray(us, dtype=np.float64)
    cdef double[:, ::1] lams_v = np.ascontiguousarray(lams, dtype=np.float64)
    designs_arr = np.ascontiguousarray(np.atleast_2d(designs), dtype=np.intp)
    cdef index_t[:, ::1] designs_v = designs_arr
    cdef Py_ssize_t m = designs_v.shape[0], r = designs_v.shape[1]
    cdef Py_ssize_t n_samples = us_v.shape[0], k = us_v.shape[2]
    out_arr = np.zeros(m)
    cdef double[::1] out_v = out_arr
    if r == 0 or m == 0:
        return out_arr
    scratch_v, scratch_w, scratch_g, scratch_work = _scratch(r, k)
    cdef double[::1] sv = scratch_v, sw = scratch_w, sg = scratch_g, swk = scratch_work
    cdef Py_ssize_t s, i
    cdef double val = 0.0
    cdef int bad = 0
    with nogil:
        for s in range(n_samples):
            for i in range(m):
                if _restricted_la(us_v[s], lams_v[s], designs_v[i], &sv[0],
                                  &sw[0], &sg[0], &swk[0], &val):
                    bad = 1
                    break
                out_v[i] += val
            if bad:
                break
    if bad:
        raise _KernelError("Cholesky breakdown: surrogate is not PSD")
    return out_arr


cdef int _border_terms(const double* vb, const double* wb, const double* g,
                       const double[:, ::1] u, const double[::1] lam,
                       Py_ssize_t r0, Py_ssize_t k, index_t cand,
                       double* y, double* s2_out, double* gcc_out) nogil:
    """Shared border computation: with B = I + G_bb = L L^T already factored
    in ``g``, compute y = L^{-1} b for the candidate cross-vector b and the
    squared border pivot s2 = 1 + gcc - ||y||^2."""
    cdef Py_ssize_t i, t
    cdef double gcc = 0.0, uct, s
    for t in range(k):
        uct = u[cand, t]
        gcc += uct * uct * lam[t]
    for i in range(r0):
        s = 0.0
        for t in range(k):
            s += wb[i * k + t] * u[cand, t]
        for t in range(i):
            s -= g[i * r0 + t] * y[t]
        y[i] = s / g[i * r0 + i]
    s = 1.0 + gcc
    for i in range(r0):
        s -= y[i] * y[i]
    if s <= 0.0:
        return 1
    s2_out[0] = s
    gcc_out[0] = gcc
    return 0


def logdet_gains(u, lam, base, cands):
    """Values of ``base + [c]`` for every candidate ``c`` (bordered factor)."""
    cdef double[:, ::1] u_v = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[::1] lam_v = np.ascontiguousarray(lam, dtype=np.float64)
    cdef index_t[::1] base_v = np.ascontiguousarray(base, dtype=np.intp)
    cdef index_t[::1] cands_v = np.ascontiguousarray(cands, dtype=np.intp)
    cdef Py_ssize_t r0 = base_v.shape[0], m = cands_v.shape[0], k = u_v.shape[1]
    out_arr = np.empty(m)
    cdef double[::1] out_v = out_arr
    if m == 0:
        return out_arr
    scratch_v, scratch_w, scratch_g, scratch_y = _scratch(max(r0, 1), k)
    cdef double[::1] sv = scratch_v, sw = scratch_w, sg = scratch_g, sy = scratch_y
    cdef double base_logdet = 0.0, s2 = 0.0, gcc = 0.0
    cdef Py_ssize_t c
    cdef int bad = 0
    if r0 > 0:
        _gather_scaled(u_v, lam_v, base_v, &sv[0], &sw[0])
        _gram_plus_identity(&sv[0], &sw[0], r0, k, &sg[0])
        if _cholesky(&sg[0], r0):
            raise _KernelError("Cholesky breakdown: surrogate is not PSD")
        base_logdet = _chol_logdet(&sg[0], r0)
    with nogil:
        for c in range(m):
            if _border_terms(&sv[0], &sw[0], &sg[0], u_v, lam_v, r0,
                             k, cands_v[c], &sy[0], &s2, &gcc):
                bad = 1
                break
            out_v[c] = base_logdet + log(s2)
    if bad:
        raise _KernelError("Cholesky breakdown: surrogate is not PSD")
    return out_arr


def la_gains(us, lams, base, cands):
    """Sample-summed values of ``base + [c]`` per candidate."""
    cdef double[:, :, ::1] us_v = np.ascontiguousarray(us, dtype=np.float64)
    cdef double[:, ::1] lams_v = np.ascontiguousarray(lams, dtype=np.float64)
    cdef index_t[::1] base_v = np.ascontiguousarray(base, dtype=np.intp)
    cdef index_t[::1] cands_v = np.ascontiguousarray(cands, dtype=np.intp)
    cdef Py_ssize_t r0 = base_v.shape[0], m = cands_v.shape[0]
    cdef Py_ssize_t n_samples = us_v.shape[0], k = us_v.shape[2]
    out_arr = np.zeros(m)
    cdef double[::1] out_v = out_arr
    if m == 0:
        return out_arr
    scratch_v, scratch_w, scratch_g, scratch_y = _scratch(max(r0, 1), k)
    work_arr = np.empty(max(r0, 1))
    back_arr = np.empty(max(r0, 1))
    cdef double[::1] sv = scratch_v, sw = scratch_w, sg = scratch_g, sy = scratch_y
    cdef double[::1] swk = work_arr, sbk = back_arr
    cdef double base_logdet, base_trace, s2 = 0.0, gcc = 0.0, acc, wnorm
    cdef Py_ssize_t s, c, i, t
    cdef int bad = 0
    for s in range(n_samples):
        base_logdet = 0.0
        base_trace = 0.0
        if r0 > 0:
            _gather_scaled(us_v[s], lams_v[s], base_v, &sv[0], &sw[0])
            _gram_plus_identity(&sv[0], &sw[0], r0, k, &sg[0])
            if _cholesky(&sg[0], r0):
                raise _KernelError("Cholesky breakdown: surrogate is not PSD")
            base_logdet = _chol_logdet(&sg[0], r0)
            base_trace = _chol_inverse_fro_sq(&sg[0], r0, &swk[0])
        with nogil:
            for c in range(m):
                if _border_terms(&sv[0], &sw[0], &sg[0], us_v[s], lams_v[s],
                                 r0, k, cands_v[c], &sy[0], &s2, &gcc):
                    bad = 1
                    break
                # Solve L^T w = y for the bordered trace identity.
                wnorm = 0.0
                for i in range(r0 - 1, -1, -1):
                    acc = sy[i]
                    for t in range(i + 1, r0):
                        acc -= sg[t * r0 + i] * sbk[t]
                    sbk[i] = acc / sg[i * r0 + i]
                    wnorm += sbk[i] * sbk[i]
                out_v[c] += (base_logdet + log(s2)) - (r0 + 1) \
                    + base_trace + (1.0 + wnorm) / s2
        if bad:
            raise _KernelError("Cholesky breakdown: surrogate is not PSD")
    return out_arr
