"""NumPy implementations of the numerical hot kernels.

Batched matrix exponential / principal logarithm for stacks of small square
matrices, plus the structure-constant and bilinear-form contractions used by
the equivariant layers.  The compiled module ``lienn.kernels._fast`` provides
drop-in replacements with per-matrix adaptivity; this module is the fallback
and the reference the compiled path is tested against.

All functions take and return float64 arrays.  ``logm`` assumes the caller
has already verified that the principal logarithm exists (no eigenvalues on
the closed negative real axis); see ``lienn.algebra.log_map``.
"""

import numpy as np

# Diagonal Pade approximant of order 13 for exp, with the standard
# 1-norm threshold for scaling-and-squaring.
_PADE13_B = (
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
)
_THETA13 = 5.371920351148152

# Gauss-Legendre nodes/weights on [0, 1]; integrating X (I + s X)^{-1} over s
# gives log(I + X) and the 8-point rule matches the diagonal Pade approximant,
# accurate to well below 1e-16 once ||X||_F <= 0.25.
_GL_ORDER = 8
_gl_x, _gl_w = np.polynomial.legendre.leggauss(_GL_ORDER)
_LOG_NODES = 0.5 * (_gl_x + 1.0)
_LOG_WEIGHTS = 0.5 * _gl_w

_LOG_SHRINK = 0.25
_MAX_SQRTS = 60


def expm(a):
    """Matrix exponential of a stack of square matrices, shape (..., n, n)."""
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[-1]
    lead = a.shape[:-2]
    x = a.reshape(-1, n, n)

    one_norm = np.abs(x).sum(axis=-2).max(axis=-1)
    worst = float(one_norm.max(initial=0.0))
    s = 0
    if worst > _THETA13:
        s = int(np.ceil(np.log2(worst / _THETA13)))
    if s:
        x = x * (0.5**s)

    b = _PADE13_B
    ident = np.zeros_like(x)
    ident[:, np.arange(n), np.arange(n)] = 1.0
    x2 = x @ x
    x4 = x2 @ x2
    x6 = x4 @ x2
    u = x @ (
        x6 @ (b[13] * x6 + b[11] * x4 + b[9] * x2)
        + b[7] * x6
        + b[5] * x4
        + b[3] * x2
        + b[1] * ident
    )
    v = (
        x6 @ (b[12] * x6 + b[10] * x4 + b[8] * x2)
        + b[6] * x6
        + b[4] * x4
        + b[2] * x2
        + b[0] * ident
    )
    r = np.linalg.solve(v - u, v + u)
    for _ in range(s):
        r = r @ r
    return r.reshape(*lead, n, n)


def _sqrtm(a):
    """Principal square root via the Denman-Beavers iteration with
    determinant scaling.  Valid for matrices with no eigenvalues on the
    closed negative real axis."""
    n = a.shape[-1]
    y = a.copy()
    z = np.zeros_like(a)
    z[:, np.arange(n), np.arange(n)] = 1.0
    for _ in range(50):
        det = np.abs(np.linalg.det(y) * np.linalg.det(z))
        mu = np.clip(det ** (-1.0 / (2 * n)), 1e-6, 1e6).reshape(-1, 1, 1)
        y_next = 0.5 * (mu * y + np.linalg.inv(mu * z))
        z_next = 0.5 * (mu * z + np.linalg.inv(mu * y))
        delta = float(np.abs(y_next - y).max())
        y, z = y_next, z_next
        if delta <= 1e-14 * max(1.0, float(np.abs(y).max())):
            break
    return y


def logm(a):
    """Principal matrix logarithm of a stack of square matrices.

    Inverse scaling-and-squaring: repeated principal square roots until the
    whole stack is within ``_LOG_SHRINK`` of the identity in Frobenius norm,
    then the Gauss-Legendre form of the diagonal Pade approximant of
    log(I + X), then multiplication by 2^s.
    """
    a = np.asarray(a, dtype=np.float64)
    n = a.shape[-1]
    lead = a.shape[:-2]
    t = a.reshape(-1, n, n).copy()
    ident = np.zeros_like(t)
    ident[:, np.arange(n), np.arange(n)] = 1.0

    s = 0
    while s < _MAX_SQRTS:
        dist = float(np.linalg.norm(t - ident, axis=(-2, -1)).max(initial=0.0))
        if dist <= _LOG_SHRINK:
            break
        t = _sqrtm(t)
        s += 1

    x = t - ident
    acc = np.zeros_like(t)
    for node, weight in zip(_LOG_NODES, _LOG_WEIGHTS):
        acc += weight * np.linalg.solve(ident + node * x, x)
    if s:
        acc *= 2.0**s
    return acc.reshape(*lead, n, n)


def bracket_fwd(prep, u, v):
    """out[m, k] = sum_ij c[i, j, k] * u[m, i] * v[m, j] for row-major
    coefficient rows u, v of shape (M, K)."""
    k = prep.dim
    t = (u @ prep.fwd_mat).reshape(u.shape[0], k, k)
    return (t * v[:, :, None]).sum(axis=1)


def bracket_bwd_u(prep, v, g):
    """Gradient of bracket_fwd w.r.t. u: out[m, i] = sum_jk c[i,j,k] v[m,j] g[m,k]."""
    k = prep.dim
    outer = (v[:, :, None] * g[:, None, :]).reshape(v.shape[0], k * k)
    return outer @ prep.bwd_u_mat


def bracket_bwd_v(prep, u, g):
    """Gradient of bracket_fwd w.r.t. v: out[m, j] = sum_ik c[i,j,k] u[m,i] g[m,k]."""
    k = prep.dim
    outer = (u[:, :, None] * g[:, None, :]).reshape(u.shape[0], k * k)
    return outer @ prep.bwd_v_mat


def bilinear(gram, x, y):
    """Row-wise bilinear form x[m]^T G y[m] for rows of shape (M, K)."""
    return ((x @ gram) * y).sum(axis=1)
