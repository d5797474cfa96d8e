"""Kernel dispatch: compiled extension when available, NumPy otherwise.

The two backends expose the same six functions (expm, logm, bracket_fwd,
bracket_bwd_u, bracket_bwd_v, bilinear) and are tested against each other.
Set LIENN_KERNELS=numpy or LIENN_KERNELS=fast to force one at import time;
set_backend / use_backend switch at runtime.
"""

from __future__ import annotations

import os

import numpy as np

from . import reference

_BACKENDS = {"numpy": reference}

try:
    from . import _fast  # type: ignore[attr-defined]
except ImportError:  # pragma: no cover - depends on the build
    _fast = None
else:
    _BACKENDS["fast"] = _fast


def _initial_backend() -> str:
    forced = os.environ.get("LIENN_KERNELS")
    if forced:
        if forced not in _BACKENDS:
            raise ImportError(
                f"LIENN_KERNELS={forced!r} requested but available backends are "
                f"{sorted(_BACKENDS)}"
            )
        return forced
    return "fast" if "fast" in _BACKENDS else "numpy"


_active = _initial_backend()


def backend_name() -> str:
    """Name of the backend currently serving kernel calls."""
    return _active


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    if name not in _BACKENDS:
        raise ValueError(f"unknown backend {name!r}; available: {sorted(_BACKENDS)}")
    global _active
    _active = name


class use_backend:
    """Context manager that switches the kernel backend and restores it."""

    def __init__(self, name: str):
        self.name = name
        self._saved: str | None = None

    def __enter__(self):
        self._saved = _active
        set_backend(self.name)
        return self

    def __exit__(self, *exc):
        set_backend(self._saved)
        return False


class StructureKernel:
    """Contraction tables for one algebra's structure constants.

    Holds the dense reshapes the NumPy path multiplies against and the
    nonzero (i, j, k, value) triples the compiled path iterates over.
    """

    def __init__(self, c: np.ndarray):
        c = np.ascontiguousarray(c, dtype=np.float64)
        if c.ndim != 3 or len(set(c.shape)) != 1:
            raise ValueError(f"structure constants must be (K, K, K), got {c.shape}")
        k = c.shape[0]
        self.dim = k
        self.dense = c
        self.fwd_mat = np.ascontiguousarray(c.reshape(k, k * k))
        self.bwd_u_mat = np.ascontiguousarray(c.transpose(1, 2, 0).reshape(k * k, k))
        self.bwd_v_mat = np.ascontiguousarray(c.transpose(0, 2, 1).reshape(k * k, k))
        ii, jj, kk = np.nonzero(c)
        self.tri_i = np.ascontiguousarray(ii, dtype=np.int32)
        self.tri_j = np.ascontiguousarray(jj, dtype=np.int32)
        self.tri_k = np.ascontiguousarray(kk, dtype=np.int32)
        self.tri_val = np.ascontiguousarray(c[ii, jj, kk], dtype=np.float64)
        self.nnz = int(self.tri_val.shape[0])


def expm(a):
    """Matrix exponential of a stack (..., n, n) of real matrices."""
    return _BACKENDS[_active].expm(a)


def logm(a):
    """Principal matrix logarithm of a stack (..., n, n).

    Callers are responsible for checking that the principal branch exists."""
    return _BACKENDS[_active].logm(a)


def bracket_fwd(prep: StructureKernel, u, v):
    """Coefficient-space brackets: out[m, k] = c[i, j, k] u[m, i] v[m, j]."""
    return _BACKENDS[_active].bracket_fwd(prep, u, v)


def bracket_bwd_u(prep: StructureKernel, v, g):
    """Gradient of bracket_fwd w.r.t. its first argument."""
    return _BACKENDS[_active].bracket_bwd_u(prep, v, g)


def bracket_bwd_v(prep: StructureKernel, u, g):
    """Gradient of bracket_fwd w.r.t. its second argument."""
    return _BACKENDS[_active].bracket_bwd_v(prep, u, g)


def bilinear(gram, x, y):
    """Row-wise bilinear form x[m]^T gram y[m] for (M, K) inputs."""
    return _BACKENDS[_active].bilinear(gram, x, y)
