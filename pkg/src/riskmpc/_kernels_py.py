"""Pure-Python fallbacks for the kernels in ``_kernels.pyx``.

Same signatures and semantics.  ``jacobi_eigh`` is a row/column-vectorised
cyclic Jacobi; the PSD projection inside ``project_cones`` uses LAPACK
(``numpy.linalg.eigh``) since a per-iteration Python Jacobi is far too slow
for the solver loop.
"""
import numpy as np

SQRT2 = np.sqrt(2.0)


def jacobi_eigh(m, rel_tol=1e-12, max_sweeps=100):
    """Eigen-decompose a symmetric matrix; eigenvalues ascending."""
    a = np.array(m, dtype=np.float64, copy=True)
    n = a.shape[0]
    v = np.eye(n)
    normf = np.linalg.norm(a)
    for _ in range(max_sweeps):
        off = np.sqrt(2.0 * np.sum(np.triu(a, 1) ** 2))
        if off <= rel_tol * normf:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                t = np.copysign(1.0, theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                colp = a[:, p].copy()
                colq = a[:, q]
                a[:, p] = c * colp - s * colq
                a[:, q] = s * colp + c * colq
                rowp = a[p, :].copy()
                rowq = a[q, :]
                a[p, :] = c * rowp - s * rowq
                a[q, :] = s * rowp + c * rowq
                a[p, q] = a[q, p] = 0.0
                vp = v[:, p].copy()
                vq = v[:, q]
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
    w = np.diag(a).copy()
    order = np.argsort(w, kind="stable")
    return w[order], v[:, order]


def svec_to_mat(x, d):
    m = np.zeros((d, d))
    rows, cols = _tril_colmajor(d)
    vals = np.where(rows == cols, x, x / SQRT2)
    m[rows, cols] = vals
    m[cols, rows] = vals
    return m


def mat_to_svec(m):
    d = m.shape[0]
    rows, cols = _tril_colmajor(d)
    vals = m[rows, cols]
    return np.where(rows == cols, vals, vals * SQRT2)


_TRIL_CACHE = {}


def _tril_colmajor(d):
    idx = _TRIL_CACHE.get(d)
    if idx is None:
        # column-major lower triangle == row-major upper triangle, transposed
        upper_rows, upper_cols = np.triu_indices(d)
        idx = _TRIL_CACHE.setdefault(d, (upper_cols, upper_rows))
    return idx


def project_cones(y, start, n_nonneg, soc_dims, psd_dims):
    """In-place projection of ``y[start:]`` onto NonNeg x SOC... x PSD...."""
    off = start
    seg = y[off:off + n_nonneg]
    np.maximum(seg, 0.0, out=seg)
    off += n_nonneg
    for d in soc_dims:
        d = int(d)
        t = y[off]
        x = y[off + 1:off + d]
        nx = np.sqrt(x @ x)
        if nx > t:
            if nx <= -t:
                y[off:off + d] = 0.0
            else:
                alpha = 0.5 * (t + nx)
                y[off] = alpha
                x *= alpha / nx
        off += d
    for d in psd_dims:
        d = int(d)
        k = d * (d + 1) // 2
        m = svec_to_mat(y[off:off + k], d)
        w, v = np.linalg.eigh(m)
        np.maximum(w, 0.0, out=w)
        y[off:off + k] = mat_to_svec((v * w) @ v.T)
        off += k
