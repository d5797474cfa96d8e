"""Lie algebra machinery over an explicit matrix basis.

Everything downstream works on coefficient vectors relative to the basis
chosen here: hat/vee move between coefficients and matrices, the structure
constants drive the coefficient-space bracket, and the Killing form supplies
the invariant bilinear pairing the layers are built from.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import kernels
from .kernels import StructureKernel


class SpanError(ValueError):
    """A matrix handed to vee does not lie in the span of the basis."""


class PrincipalLogError(ValueError):
    """A group element has an eigenvalue on the closed negative real axis."""


class DegenerateAlgebraError(ValueError):
    """The Killing form is numerically singular, so the algebra is not
    semisimple and the invariant-pairing construction breaks down."""


def check_semisimple(gram: np.ndarray, tol: float = 1e-9) -> float:
    """Ratio of smallest to largest singular value of the Killing gram.

    Raises DegenerateAlgebraError when the ratio falls at or below tol."""
    svals = np.linalg.svd(gram, compute_uv=False)
    smax = float(svals[0])
    smin = float(svals[-1])
    if smax == 0.0 or smin <= tol * smax:
        raise DegenerateAlgebraError(
            f"Killing form is singular to working precision "
            f"(singular value ratio {0.0 if smax == 0.0 else smin / smax:.3e})"
        )
    return smin / smax


class LieAlgebra:
    """A matrix Lie algebra described by a basis of shape (K, n, n).

    Instances are immutable after construction and safe to share; the
    structure-constant tables are precomputed once for the kernel backends.
    """

    def __init__(self, name: str, basis: np.ndarray, allow_degenerate: bool = False):
        basis = np.ascontiguousarray(basis, dtype=np.float64)
        if basis.ndim != 3 or basis.shape[1] != basis.shape[2]:
            raise ValueError(f"basis must have shape (K, n, n), got {basis.shape}")
        self.name = name
        self.basis = basis
        self.dim = int(basis.shape[0])
        self.mat_dim = int(basis.shape[1])

        flat = basis.reshape(self.dim, -1)
        if np.linalg.matrix_rank(flat) != self.dim:
            raise ValueError("basis matrices are linearly dependent")
        # Least-squares projector onto the span; vee is flat_mat @ pinv.
        self._pinv = np.linalg.pinv(flat)

        self.structure = self._structure_constants()
        self.kernel = StructureKernel(self.structure)

        adm = np.swapaxes(self.structure, 1, 2)  # adm[i] = ad of basis vector i
        self.killing = np.einsum("ikl,jlk->ij", adm, adm)
        self.killing = np.ascontiguousarray(0.5 * (self.killing + self.killing.T))

        if allow_degenerate:
            try:
                self.killing_ratio = check_semisimple(self.killing)
            except DegenerateAlgebraError:
                self.killing_ratio = 0.0
        else:
            self.killing_ratio = check_semisimple(self.killing)

    def _structure_constants(self) -> np.ndarray:
        comms = np.einsum("iab,jbc->ijac", self.basis, self.basis)
        comms = comms - np.swapaxes(comms, 0, 1)
        c = self.vee(comms)
        # Snap to exact values: brackets of integer-entried bases are integers.
        rounded = np.round(c)
        c = np.where(np.abs(c - rounded) < 1e-12, rounded, c)
        return np.ascontiguousarray(c)

    # -- coefficient <-> matrix ------------------------------------------

    def hat(self, coeffs: np.ndarray) -> np.ndarray:
        """Map coefficients (..., K) to matrices (..., n, n)."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape[-1] != self.dim:
            raise ValueError(f"expected last axis {self.dim}, got {coeffs.shape}")
        return np.tensordot(coeffs, self.basis, axes=([-1], [0]))

    def vee(self, mats: np.ndarray, check: bool = True, rtol: float = 1e-8) -> np.ndarray:
        """Map matrices (..., n, n) back to coefficients (..., K).

        With check=True (the default) a residual outside the span raises
        SpanError; the tolerance is relative to each matrix's norm."""
        mats = np.asarray(mats, dtype=np.float64)
        n = self.mat_dim
        if mats.shape[-2:] != (n, n):
            raise ValueError(f"expected (..., {n}, {n}) matrices, got {mats.shape}")
        flat = mats.reshape(mats.shape[:-2] + (n * n,))
        coeffs = flat @ self._pinv
        if check:
            back = np.tensordot(coeffs, self.basis, axes=([-1], [0]))
            resid = np.linalg.norm(
                (back - mats).reshape(flat.shape), axis=-1
            )
            scale = np.maximum(np.linalg.norm(flat, axis=-1), 1.0)
            worst = float(np.max(resid / scale)) if resid.size else 0.0
            if worst > rtol:
                raise SpanError(
                    f"matrix lies outside span of the {self.name} basis "
                    f"(relative residual {worst:.3e})"
                )
        return coeffs

    # -- bracket and adjoint ---------------------------------------------

    def bracket(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Matrix commutator [x, y] = xy - yx for (..., n, n) stacks."""
        return x @ y - y @ x

    def bracket_coeffs(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """Coefficient-space bracket via the structure constants."""
        u = np.asarray(u, dtype=np.float64)
        v = np.asarray(v, dtype=np.float64)
        if u.shape != v.shape:
            raise ValueError(f"shape mismatch {u.shape} vs {v.shape}")
        lead = u.shape[:-1]
        out = kernels.bracket_fwd(
            self.kernel, u.reshape(-1, self.dim), v.reshape(-1, self.dim)
        )
        return out.reshape(lead + (self.dim,))

    def ad_matrix(self, coeffs: np.ndarray) -> np.ndarray:
        """ad_x as a (..., K, K) matrix acting on coefficient vectors."""
        coeffs = np.asarray(coeffs, dtype=np.float64)
        m = np.tensordot(coeffs, self.structure, axes=([-1], [0]))
        return np.swapaxes(m, -1, -2)

    def killing_form(self, u: np.ndarray, v: np.ndarray) -> np.ndarray:
        """B(u, v) for coefficient vectors, broadcasting over leading axes."""
        return np.einsum("...i,ij,...j->...", u, self.killing, v)

    def adjoint_matrix(self, group_mats: np.ndarray) -> np.ndarray:
        """Adjoint representation of group elements as (..., K, K) matrices.

        Column i is vee(a E_i a^{-1}); the vee span check doubles as a guard
        that conjugation by the given elements preserves the algebra."""
        a = np.asarray(group_mats, dtype=np.float64)
        a_inv = np.linalg.inv(a)
        conj = np.einsum("...ab,ibc,...cd->...iad", a, self.basis, a_inv)
        cols = self.vee(conj)  # (..., K_in, K_out)
        return np.swapaxes(cols, -1, -2)

    # -- exponential map --------------------------------------------------

    def exp_map(self, coeffs: np.ndarray) -> np.ndarray:
        """Group elements exp(hat(u)) for coefficients (..., K)."""
        return kernels.expm(self.hat(coeffs))

    def log_map(self, group_mats: np.ndarray, check: bool = True) -> np.ndarray:
        """Principal-branch coefficients vee(log(a)) for (..., n, n) stacks.

        Raises PrincipalLogError if any matrix has an eigenvalue on the
        closed negative real axis, where the principal branch is undefined."""
        a = np.asarray(group_mats, dtype=np.float64)
        _check_principal_branch(a)
        logs = kernels.logm(a)
        return self.vee(logs, check=check)

    # -- sampling ----------------------------------------------------------

    def sample_algebra(self, rng: np.random.Generator, shape=(), scale: float = 1.0):
        """Coefficient vectors with i.i.d. Normal(0, scale^2) entries."""
        if isinstance(shape, int):
            shape = (shape,)
        return rng.normal(0.0, scale, size=tuple(shape) + (self.dim,))

    def sample_group(self, rng: np.random.Generator, shape=(), scale: float = 1.0):
        """Group elements exp(hat(u)) with u drawn by sample_algebra."""
        return self.exp_map(self.sample_algebra(rng, shape, scale))

    def element(self, mat: np.ndarray) -> "GroupElement":
        return GroupElement(self, mat)

    def __repr__(self) -> str:
        return f"LieAlgebra({self.name!r}, dim={self.dim}, mat_dim={self.mat_dim})"


def _check_principal_branch(mats: np.ndarray) -> None:
    lams = np.linalg.eigvals(mats)
    mag = np.abs(lams)
    on_negative_axis = (lams.real <= 0.0) & (
        np.abs(lams.imag) <= 1e-12 * np.maximum(mag, 1.0)
    )
    if bool(np.any(on_negative_axis)):
        raise PrincipalLogError(
            "matrix logarithm undefined: eigenvalue on the closed negative real axis"
        )


class GroupElement:
    """A single group element with its adjoint matrix cached on first use."""

    __slots__ = ("algebra", "mat", "_adm")

    def __init__(self, algebra: LieAlgebra, mat: np.ndarray):
        mat = np.ascontiguousarray(mat, dtype=np.float64)
        if mat.shape != (algebra.mat_dim, algebra.mat_dim):
            raise ValueError(f"expected {(algebra.mat_dim,) * 2} matrix, got {mat.shape}")
        self.algebra = algebra
        self.mat = mat
        self._adm = None

    @property
    def adm(self) -> np.ndarray:
        if self._adm is None:
            self._adm = self.algebra.adjoint_matrix(self.mat)
        return self._adm

    def inverse(self) -> "GroupElement":
        return GroupElement(self.algebra, np.linalg.inv(self.mat))

    def __matmul__(self, other: "GroupElement") -> "GroupElement":
        return GroupElement(self.algebra, self.mat @ other.mat)

    def act(self, coeffs: np.ndarray) -> np.ndarray:
        """Adjoint action on coefficient vectors (..., K)."""
        return np.asarray(coeffs, dtype=np.float64) @ self.adm.T

    def __repr__(self) -> str:
        return f"GroupElement({self.algebra.name!r})"


def _sl3_basis() -> np.ndarray:
    basis = np.zeros((8, 3, 3))
    off = [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
    for idx, (r, c) in enumerate(off):
        basis[idx, r, c] = 1.0
    basis[6] = np.diag([1.0, -1.0, 0.0])
    basis[7] = np.diag([0.0, 1.0, -1.0])
    return basis


def _so3_basis() -> np.ndarray:
    basis = np.zeros((3, 3, 3))
    basis[0] = [[0, 0, 0], [0, 0, -1], [0, 1, 0]]
    basis[1] = [[0, 0, 1], [0, 0, 0], [-1, 0, 0]]
    basis[2] = [[0, -1, 0], [1, 0, 0], [0, 0, 0]]
    return basis


_REGISTRY = {"sl3": _sl3_basis, "so3": _so3_basis}
_CACHE: dict[str, LieAlgebra] = {}


def build_algebra(
    name: str | None = None,
    basis: np.ndarray | None = None,
    allow_degenerate: bool = False,
) -> LieAlgebra:
    """Construct an algebra from a registry name or an explicit basis.

    Exactly one of the two inputs selects the basis; a registry name with an
    explicit basis is rejected to avoid mislabeling."""
    if basis is not None:
        if name is None:
            name = "custom"
        elif name in _REGISTRY:
            raise ValueError(f"{name!r} is a registry name; rename the custom basis")
        return LieAlgebra(name, basis, allow_degenerate=allow_degenerate)
    if name is None:
        raise ValueError("either a registry name or a basis is required")
    if name not in _REGISTRY:
        raise KeyError(f"unknown algebra {name!r}; registry has {sorted(_REGISTRY)}")
    return LieAlgebra(name, _REGISTRY[name](), allow_degenerate=allow_degenerate)


def get_algebra(name: str) -> LieAlgebra:
    """Registry lookup with caching; instances are immutable and shared."""
    if name not in _CACHE:
        _CACHE[name] = build_algebra(name)
    return _CACHE[name]


def load_descriptor(path: str | Path, allow_degenerate: bool = False) -> LieAlgebra:
    """Build an algebra from a JSON descriptor {"name": ..., "basis": [[[...]]]}."""
    payload = json.loads(Path(path).read_text())
    try:
        name = payload["name"]
        basis = np.asarray(payload["basis"], dtype=np.float64)
    except (KeyError, TypeError) as exc:
        raise ValueError(f"malformed algebra descriptor {path}: {exc}") from exc
    return LieAlgebra(str(name), basis, allow_degenerate=allow_degenerate)


def resolve_algebra(spec: str, allow_degenerate: bool = False) -> LieAlgebra:
    """CLI-facing lookup: a registry name, or a path to a JSON descriptor."""
    if spec in _REGISTRY:
        if allow_degenerate:
            return build_algebra(spec, allow_degenerate=True)
        return get_algebra(spec)
    p = Path(spec)
    if p.suffix == ".json" or p.exists():
        return load_descriptor(p, allow_degenerate=allow_degenerate)
    raise KeyError(
        f"unknown algebra {spec!r}: registry has {sorted(_REGISTRY)} and no such file"
    )
