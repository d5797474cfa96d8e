# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: per-matrix adaptive exp/log for stacks of small
matrices and sparse structure-constant contractions.

Drop-in replacements for lienn.kernels.reference; shares its Pade and
quadrature constants so both backends agree to rounding error.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, log2, pow, sqrt
from libc.stdlib cimport free, malloc
from libc.string cimport memcpy, memset

from . import reference as _ref

cnp.import_array()

cdef double THETA13 = _ref._THETA13
cdef double LOG_SHRINK = _ref._LOG_SHRINK
cdef int MAX_SQRTS = _ref._MAX_SQRTS

cdef double[14] B13
cdef int _ci
for _ci in range(14):
    B13[_ci] = _ref._PADE13_B[_ci]

_GL_NODES = np.ascontiguousarray(_ref._LOG_NODES, dtype=np.float64)
_GL_WEIGHTS = np.ascontiguousarray(_ref._LOG_WEIGHTS, dtype=np.float64)


cdef void mm(double* a, double* b, double* out, int n) noexcept nogil:
    cdef int i, j, k
    cdef double s
    for i in range(n):
        for j in range(n):
            s = 0.0
            for k in range(n):
                s += a[i * n + k] * b[k * n + j]
            out[i * n + j] = s


cdef int solve(double* a, double* b, int n, int m) noexcept nogil:
    # Solves a X = b in place (X lands in b); destroys a. Partial pivoting.
    cdef int i, j, k, piv
    cdef double best, tmp, f
    for k in range(n):
        piv = k
        best = fabs(a[k * n + k])
        for i in range(k + 1, n):
            if fabs(a[i * n + k]) > best:
                best = fabs(a[i * n + k])
                piv = i
        if best == 0.0:
            return -1
        if piv != k:
            for j in range(n):
                tmp = a[k * n + j]
                a[k * n + j] = a[piv * n + j]
                a[piv * n + j] = tmp
            for j in range(m):
                tmp = b[k * m + j]
                b[k * m + j] = b[piv * m + j]
                b[piv * m + j] = tmp
        for i in range(k + 1, n):
            f = a[i * n + k] / a[k * n + k]
            if f != 0.0:
                for j in range(k, n):
                    a[i * n + j] -= f * a[k * n + j]
                for j in range(m):
                    b[i * m + j] -= f * b[k * m + j]
    for k in range(n - 1, -1, -1):
        for j in range(m):
            tmp = b[k * m + j]
            for i in range(k + 1, n):
                tmp -= a[k * n + i] * b[i * m + j]
            b[k * m + j] = tmp / a[k * n + k]
    return 0


cdef int inverse(double* a, double* out, double* scratch, int n) noexcept nogil:
    # out = a^{-1}; a preserved; scratch >= n*n.
    cdef int i
    memcpy(scratch, a, n * n * sizeof(double))
    memset(out, 0, n * n * sizeof(double))
    for i in range(n):
        out[i * n + i] = 1.0
    return solve(scratch, out, n, n)


cdef double det_destroy(double* a, int n) noexcept nogil:
    cdef int i, j, k, piv, sign = 1
    cdef double best, tmp, f, d = 1.0
    for k in range(n):
        piv = k
        best = fabs(a[k * n + k])
        for i in range(k + 1, n):
            if fabs(a[i * n + k]) > best:
                best = fabs(a[i * n + k])
                piv = i
        if best == 0.0:
            return 0.0
        if piv != k:
            sign = -sign
            for j in range(n):
                tmp = a[k * n + j]
                a[k * n + j] = a[piv * n + j]
                a[piv * n + j] = tmp
        d *= a[k * n + k]
        for i in range(k + 1, n):
            f = a[i * n + k] / a[k * n + k]
            for j in range(k + 1, n):
                a[i * n + j] -= f * a[k * n + j]
    if sign < 0:
        d = -d
    return d


cdef int expm_one(double* a, double* out, double* w, int n) noexcept nogil:
    # w: workspace >= 9*n*n doubles.
    cdef double* x = w
    cdef double* x2 = w + n * n
    cdef double* x4 = w + 2 * n * n
    cdef double* x6 = w + 3 * n * n
    cdef double* u = w + 4 * n * n
    cdef double* v = w + 5 * n * n
    cdef double* t1 = w + 6 * n * n
    cdef double* t2 = w + 7 * n * n
    cdef double* qm = w + 8 * n * n
    cdef int i, j, s = 0
    cdef double eta = 0.0, col, scale = 1.0

    for j in range(n):
        col = 0.0
        for i in range(n):
            col += fabs(a[i * n + j])
        if col > eta:
            eta = col
    while eta > THETA13:
        eta *= 0.5
        scale *= 0.5
        s += 1

    for i in range(n * n):
        x[i] = a[i] * scale
    mm(x, x, x2, n)
    mm(x2, x2, x4, n)
    mm(x4, x2, x6, n)

    for i in range(n * n):
        t1[i] = B13[13] * x6[i] + B13[11] * x4[i] + B13[9] * x2[i]
    mm(x6, t1, t2, n)
    for i in range(n * n):
        t2[i] += B13[7] * x6[i] + B13[5] * x4[i] + B13[3] * x2[i]
    for i in range(n):
        t2[i * n + i] += B13[1]
    mm(x, t2, u, n)

    for i in range(n * n):
        t1[i] = B13[12] * x6[i] + B13[10] * x4[i] + B13[8] * x2[i]
    mm(x6, t1, v, n)
    for i in range(n * n):
        v[i] += B13[6] * x6[i] + B13[4] * x4[i] + B13[2] * x2[i]
    for i in range(n):
        v[i * n + i] += B13[0]

    for i in range(n * n):
        qm[i] = v[i] - u[i]
        out[i] = v[i] + u[i]
    if solve(qm, out, n, n) != 0:
        return -1
    for i in range(s):
        mm(out, out, t1, n)
        memcpy(out, t1, n * n * sizeof(double))
    return 0


cdef int sqrtm_one(double* y, double* w, int n) noexcept nogil:
    # In-place principal square root of y, Denman-Beavers with determinant
    # scaling; w >= 5*n*n.
    cdef double* z = w
    cdef double* yi = w + n * n
    cdef double* zi = w + 2 * n * n
    cdef double* sc = w + 3 * n * n
    cdef double* yn = w + 4 * n * n
    cdef int it, i
    cdef double dy, dz, mu, delta, ymax, val

    memset(z, 0, n * n * sizeof(double))
    for i in range(n):
        z[i * n + i] = 1.0
    for it in range(50):
        memcpy(sc, y, n * n * sizeof(double))
        dy = det_destroy(sc, n)
        memcpy(sc, z, n * n * sizeof(double))
        dz = det_destroy(sc, n)
        mu = fabs(dy * dz)
        if mu == 0.0:
            return -1
        mu = pow(mu, -1.0 / (2.0 * n))
        if mu < 1e-6:
            mu = 1e-6
        elif mu > 1e6:
            mu = 1e6
        if inverse(z, zi, sc, n) != 0:
            return -1
        if inverse(y, yi, sc, n) != 0:
            return -1
        delta = 0.0
        ymax = 1.0
        for i in range(n * n):
            val = 0.5 * (mu * y[i] + zi[i] / mu)
            yn[i] = val
            if fabs(val - y[i]) > delta:
                delta = fabs(val - y[i])
            if fabs(val) > ymax:
                ymax = fabs(val)
            z[i] = 0.5 * (mu * z[i] + yi[i] / mu)
        memcpy(y, yn, n * n * sizeof(double))
        if delta <= 1e-14 * ymax:
            break
    return 0


cdef int logm_one(double* a, double* out, double* w, int n,
                  double* nodes, double* wts, int nq) noexcept nogil:
    # w: workspace >= 9*n*n doubles.
    cdef double* t = w
    cdef double* x = w + n * n
    cdef double* rhs = w + 2 * n * n
    cdef double* qm = w + 3 * n * n
    cdef double* sw = w + 4 * n * n
    cdef int s = 0, i, q
    cdef double dist, diff, two_s

    memcpy(t, a, n * n * sizeof(double))
    while True:
        dist = 0.0
        for i in range(n * n):
            diff = t[i]
            if i % (n + 1) == 0:
                diff -= 1.0
            dist += diff * diff
        if sqrt(dist) <= LOG_SHRINK or s >= MAX_SQRTS:
            break
        if sqrtm_one(t, sw, n) != 0:
            return -1
        s += 1

    for i in range(n * n):
        x[i] = t[i]
    for i in range(n):
        x[i * n + i] -= 1.0

    memset(out, 0, n * n * sizeof(double))
    for q in range(nq):
        memcpy(rhs, x, n * n * sizeof(double))
        for i in range(n * n):
            qm[i] = nodes[q] * x[i]
        for i in range(n):
            qm[i * n + i] += 1.0
        if solve(qm, rhs, n, n) != 0:
            return -1
        for i in range(n * n):
            out[i] += wts[q] * rhs[i]

    two_s = pow(2.0, s)
    for i in range(n * n):
        out[i] *= two_s
    return 0


def expm(a):
    """Matrix exponential of a stack of square matrices, shape (..., n, n)."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    cdef int n = arr.shape[arr.ndim - 1]
    if arr.ndim < 2 or arr.shape[arr.ndim - 2] != n:
        raise ValueError(f"expected (..., n, n) matrix stack, got shape {arr.shape}")
    shape = arr.shape
    flat = arr.reshape(-1, n, n)
    out = np.empty_like(flat)
    cdef double[:, :, ::1] src = flat
    cdef double[:, :, ::1] dst = out
    cdef Py_ssize_t b = flat.shape[0], i
    cdef int status = 0
    cdef double* w = <double*> malloc(10 * n * n * sizeof(double))
    if w == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(b):
                if expm_one(&src[i, 0, 0], &dst[i, 0, 0], w, n) != 0:
                    status = -1
                    break
    finally:
        free(w)
    if status != 0:
        raise np.linalg.LinAlgError("matrix exponential Pade solve failed")
    return out.reshape(shape)


def logm(a):
    """Principal matrix logarithm of a stack of square matrices.

    The caller must ensure the principal log exists for every matrix."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    cdef int n = arr.shape[arr.ndim - 1]
    if arr.ndim < 2 or arr.shape[arr.ndim - 2] != n:
        raise ValueError(f"expected (..., n, n) matrix stack, got shape {arr.shape}")
    shape = arr.shape
    flat = arr.reshape(-1, n, n)
    out = np.empty_like(flat)
    cdef double[:, :, ::1] src = flat
    cdef double[:, :, ::1] dst = out
    cdef double[::1] nodes = _GL_NODES
    cdef double[::1] wts = _GL_WEIGHTS
    cdef int nq = nodes.shape[0]
    cdef Py_ssize_t b = flat.shape[0], i
    cdef int status = 0
    cdef double* w = <double*> malloc(10 * n * n * sizeof(double))
    if w == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(b):
                if logm_one(&src[i, 0, 0], &dst[i, 0, 0], w, n,
                            &nodes[0], &wts[0], nq) != 0:
                    status = -1
                    break
    finally:
        free(w)
    if status != 0:
        raise np.linalg.LinAlgError("principal matrix logarithm iteration failed")
    return out.reshape(shape)


def bracket_fwd(prep, u, v):
    """out[m, k] = sum_ij c[i, j, k] u[m, i] v[m, j] over the nonzero triples."""
    cdef double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef int[::1] ti = prep.tri_i
    cdef int[::1] tj = prep.tri_j
    cdef int[::1] tk = prep.tri_k
    cdef double[::1] tv = prep.tri_val
    cdef Py_ssize_t m = uu.shape[0], r, t
    cdef Py_ssize_t nnz = ti.shape[0]
    out_arr = np.zeros((uu.shape[0], uu.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(m):
            for t in range(nnz):
                out[r, tk[t]] += tv[t] * uu[r, ti[t]] * vv[r, tj[t]]
    return out_arr


def bracket_bwd_u(prep, v, g):
    """out[m, i] = sum_jk c[i, j, k] v[m, j] g[m, k]."""
    cdef double[:, ::1] vv = np.ascontiguousarray(v, dtype=np.float64)
    cdef double[:, ::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef int[::1] ti = prep.tri_i
    cdef int[::1] tj = prep.tri_j
    cdef int[::1] tk = prep.tri_k
    cdef double[::1] tv = prep.tri_val
    cdef Py_ssize_t m = vv.shape[0], r, t
    cdef Py_ssize_t nnz = ti.shape[0]
    out_arr = np.zeros((vv.shape[0], vv.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(m):
            for t in range(nnz):
                out[r, ti[t]] += tv[t] * vv[r, tj[t]] * gg[r, tk[t]]
    return out_arr


def bracket_bwd_v(prep, u, g):
    """out[m, j] = sum_ik c[i, j, k] u[m, i] g[m, k]."""
    cdef double[:, ::1] uu = np.ascontiguousarray(u, dtype=np.float64)
    cdef double[:, ::1] gg = np.ascontiguousarray(g, dtype=np.float64)
    cdef int[::1] ti = prep.tri_i
    cdef int[::1] tj = prep.tri_j
    cdef int[::1] tk = prep.tri_k
    cdef double[::1] tv = prep.tri_val
    cdef Py_ssize_t m = uu.shape[0], r, t
    cdef Py_ssize_t nnz = ti.shape[0]
    out_arr = np.zeros((uu.shape[0], uu.shape[1]), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for r in range(m):
            for t in range(nnz):
                out[r, tj[t]] += tv[t] * uu[r, ti[t]] * gg[r, tk[t]]
    return out_arr


def bilinear(gram, x, y):
    """Row-wise bilinear form x[m]^T G y[m]."""
    cdef double[:, ::1] gg = np.ascontiguousarray(gram, dtype=np.float64)
    cdef double[:, ::1] xx = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] yy = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t m = xx.shape[0], k = xx.shape[1], r, i, j
    cdef double s, xi
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for r in range(m):
            s = 0.0
            for i in range(k):
                xi = xx[r, i]
                if xi != 0.0:
                    for j in range(k):
                        s += xi * gg[i, j] * yy[r, j]
            out[r] = s
    return out_arr
