# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: cyclic Jacobi eigensolver and cone projections.

Mirrors ``_kernels_py`` function-for-function; ``_backend`` picks one at import.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs

cnp.import_array()

cdef double SQRT2 = 1.4142135623730951


cdef int _jacobi(double[:, ::1] a, double[:, ::1] v, double rel_tol, int max_sweeps) noexcept nogil:
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t i, j, k, p, q
    cdef double normf = 0.0, off, theta, t, c, s, akp, akq, apq
    cdef int sweep
    for i in range(n):
        for j in range(n):
            normf += a[i, j] * a[i, j]
            v[i, j] = 1.0 if i == j else 0.0
    normf = sqrt(normf)
    for sweep in range(max_sweeps):
        off = 0.0
        for i in range(n):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        if sqrt(off) <= rel_tol * normf:
            return sweep
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0.0:
                    t = 1.0 / (theta + sqrt(theta * theta + 1.0))
                else:
                    t = -1.0 / (-theta + sqrt(theta * theta + 1.0))
                c = 1.0 / sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    akp = a[p, k]
                    akq = a[q, k]
                    a[p, k] = c * akp - s * akq
                    a[q, k] = s * akp + c * akq
                a[p, q] = 0.0
                a[q, p] = 0.0
                for k in range(n):
                    akp = v[k, p]
                    akq = v[k, q]
                    v[k, p] = c * akp - s * akq
                    v[k, q] = s * akp + c * akq
    return max_sweeps


def jacobi_eigh(m, double rel_tol=1e-12, int max_sweeps=100):
    """Eigen-decompose a symmetric matrix; eigenvalues ascending."""
    cdef double[:, ::1] a = np.array(m, dtype=np.float64, order="C", copy=True)
    cdef Py_ssize_t n = a.shape[0]
    vmat = np.empty((n, n), dtype=np.float64)
    cdef double[:, ::1] v = vmat
    with nogil:
        _jacobi(a, v, rel_tol, max_sweeps)
    w = np.asarray(a).diagonal().copy()
    order = np.argsort(w, kind="stable")
    return w[order], vmat[:, order]


cdef void _proj_soc(double[::1] y, Py_ssize_t off, Py_ssize_t d) noexcept nogil:
    cdef double t = y[off], nx = 0.0, alpha
    cdef Py_ssize_t i
    for i in range(off + 1, off + d):
        nx += y[i] * y[i]
    nx = sqrt(nx)
    if nx <= t:
        return
    if nx <= -t:
        for i in range(off, off + d):
            y[i] = 0.0
        return
    alpha = 0.5 * (t + nx)
    y[off] = alpha
    for i in range(off + 1, off + d):
        y[i] = alpha * y[i] / nx


cdef void _proj_psd(double[::1] y, Py_ssize_t off, Py_ssize_t d,
                    double[:, ::1] a, double[:, ::1] v) noexcept nogil:
    cdef Py_ssize_t i, j, k, idx
    cdef double lam, acc
    idx = off
    for j in range(d):
        for i in range(j, d):
            if i == j:
                a[i, i] = y[idx]
            else:
                a[i, j] = y[idx] / SQRT2
                a[j, i] = a[i, j]
            idx += 1
    _jacobi(a, v, 1e-13, 100)
    idx = off
    for j in range(d):
        for i in range(j, d):
            acc = 0.0
            for k in range(d):
                lam = a[k, k]
                if lam > 0.0:
                    acc += lam * v[i, k] * v[j, k]
            if i == j:
                y[idx] = acc
            else:
                y[idx] = acc * SQRT2
            idx += 1


def project_cones(double[::1] y, Py_ssize_t start, Py_ssize_t n_nonneg,
                  cnp.int64_t[::1] soc_dims, cnp.int64_t[::1] psd_dims):
    """In-place projection of ``y[start:]`` onto NonNeg x SOC... x PSD...."""
    cdef Py_ssize_t i, off = start, d, dmax = 1
    for i in range(psd_dims.shape[0]):
        if psd_dims[i] > dmax:
            dmax = psd_dims[i]
    cdef double[:, ::1] a = np.empty((dmax, dmax), dtype=np.float64)
    cdef double[:, ::1] v = np.empty((dmax, dmax), dtype=np.float64)
    with nogil:
        for i in range(off, off + n_nonneg):
            if y[i] < 0.0:
                y[i] = 0.0
        off += n_nonneg
        for i in range(soc_dims.shape[0]):
            d = soc_dims[i]
            _proj_soc(y, off, d)
            off += d
        for i in range(psd_dims.shape[0]):
            d = psd_dims[i]
            _proj_psd(y, off, d, a[:d, :d], v[:d, :d])
            off += d * (d + 1) // 2
