"""Adjoint-equivariant layers over algebra-coefficient features.

Features are tensors of shape (B, K, C, N): batch, algebra dimension,
channels, set size. Every learnable weight contracts the channel axis only
and never mixes the K axis, so equivariance under the adjoint action is
structural rather than learned. The Killing gram supplies the invariant
pairing used by the ReLU, pooling, and invariant layers.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .algebra import LieAlgebra


def init_channel_weight(rng: np.random.Generator, c_in: int, c_out: int) -> Tensor:
    """Fan-in uniform init on (-1/sqrt(c_in), 1/sqrt(c_in))."""
    bound = 1.0 / np.sqrt(c_in)
    return Tensor(rng.uniform(-bound, bound, size=(c_in, c_out)), requires_grad=True)


def _check_feature(x: Tensor, algebra: LieAlgebra) -> None:
    if x.ndim != 4 or x.shape[1] != algebra.dim:
        raise ValueError(
            f"expected (B, {algebra.dim}, C, N) feature for {algebra.name}, got {x.shape}"
        )


# -- functional forms ------------------------------------------------------


def ln_linear(x: Tensor, w: Tensor, inject_fault: bool = False) -> Tensor:
    """Channel-mixing linear map, no bias.

    inject_fault is a negative-control hook for the verification suite: it
    applies an elementwise ReLU first, which deliberately breaks adjoint
    equivariance so the property checker can prove it catches violations."""
    if inject_fault:
        x = ad.relu(x)
    return ad.channel_matmul(x, w)


def ln_relu(x: Tensor, u: Tensor, algebra: LieAlgebra) -> Tensor:
    """Killing-form ReLU: pass-through where B(x, d) <= 0, else x + B(x, d) d.

    The direction is d = xU with U of shape (C, C), or (C, 1) to share one
    direction across channels. The branch mask is frozen at forward time."""
    _check_feature(x, algebra)
    d = ad.channel_matmul(x, u)
    s = ad.bilinear_form(x, d, algebra.killing)
    mask = s.data > 0.0
    return ad.where_pass(mask, x + s * d, x)


def ln_leaky_relu(x: Tensor, u: Tensor, algebra: LieAlgebra, alpha: float = 0.2) -> Tensor:
    """alpha * x + (1 - alpha) * ln_relu(x)."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"leaky slope must lie in [0, 1], got {alpha}")
    return alpha * x + (1.0 - alpha) * ln_relu(x, u, algebra)


def ln_bracket(
    x: Tensor, u: Tensor, v: Tensor, algebra: LieAlgebra, residual: bool = True
) -> Tensor:
    """Bracket nonlinearity x + [(xU)^, (xV)^]v, or the bracket alone.

    residual=False is the ablation variant; with U = V the bracket term
    vanishes identically, which is why the residual path matters."""
    _check_feature(x, algebra)
    uu = ad.channel_matmul(x, u)
    vv = ad.channel_matmul(x, v)
    br = ad.bracket_channels(uu, vv, algebra)
    return x + br if residual else br


def ln_max_pool(x: Tensor, w: Tensor, algebra: LieAlgebra) -> Tensor:
    """Per-channel set pooling by the invariant score B(x_n W, x_n).

    Selects, for each (batch, channel), the set element with the largest
    score; ties resolve to the lowest index. The argmax is non-differentiable,
    so the score path carries no gradient and W receives none."""
    _check_feature(x, algebra)
    with ad.no_grad():
        d = ad.channel_matmul(x, w)
        scores = ad.bilinear_form(d, x, algebra.killing)
    idx = ad.argmax_set(scores.data[:, 0, :, :], axis=-1)
    return ad.gather_set(x, idx)


def mean_pool(x: Tensor) -> Tensor:
    """Arithmetic mean over the set axis, (B, K, C, N) -> (B, K, C, 1)."""
    return ad.reduce_mean(x, axis=3, keepdims=True)


def ln_invariant(x: Tensor, algebra: LieAlgebra) -> Tensor:
    """Adjoint-invariant feature B(x, x) per channel, (B, K, C, N) -> (B, 1, C, N)."""
    _check_feature(x, algebra)
    return ad.bilinear_form(x, x, algebra.killing)


# -- parameterized blocks --------------------------------------------------


class Block:
    """Base for parameter-owning layer blocks."""

    def named_params(self) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def __call__(self, x: Tensor) -> Tensor:
        raise NotImplementedError


class LnLinear(Block):
    def __init__(self, algebra: LieAlgebra, c_in: int, c_out: int, rng: np.random.Generator):
        self.algebra = algebra
        self.w = init_channel_weight(rng, c_in, c_out)

    def named_params(self):
        return [("w", self.w)]

    def __call__(self, x):
        return ln_linear(x, self.w)


class LnReluModule(Block):
    """LN-Linear followed by the Killing-form (leaky-)ReLU."""

    def __init__(
        self,
        algebra: LieAlgebra,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        share_direction: bool = False,
        alpha: float = 0.0,
    ):
        if not 0.0 <= alpha < 1.0:
            raise ValueError(f"leaky slope must lie in [0, 1), got {alpha}")
        self.algebra = algebra
        self.alpha = float(alpha)
        self.w = init_channel_weight(rng, c_in, c_out)
        self.u = init_channel_weight(rng, c_out, 1 if share_direction else c_out)

    def named_params(self):
        return [("w", self.w), ("u", self.u)]

    def __call__(self, x):
        h = ln_linear(x, self.w)
        if self.alpha > 0.0:
            return ln_leaky_relu(h, self.u, self.algebra, self.alpha)
        return ln_relu(h, self.u, self.algebra)


class LnBracketModule(Block):
    """LN-Linear followed by the bracket nonlinearity (with/without residual)."""

    def __init__(
        self,
        algebra: LieAlgebra,
        c_in: int,
        c_out: int,
        rng: np.random.Generator,
        residual: bool = True,
    ):
        self.algebra = algebra
        self.residual = bool(residual)
        self.w = init_channel_weight(rng, c_in, c_out)
        self.u = init_channel_weight(rng, c_out, c_out)
        self.v = init_channel_weight(rng, c_out, c_out)

    def named_params(self):
        return [("w", self.w), ("u", self.u), ("v", self.v)]

    def __call__(self, x):
        h = ln_linear(x, self.w)
        return ln_bracket(h, self.u, self.v, self.algebra, residual=self.residual)


class LnMaxPool(Block):
    def __init__(self, algebra: LieAlgebra, channels: int, rng: np.random.Generator):
        self.algebra = algebra
        self.w = init_channel_weight(rng, channels, channels)

    def named_params(self):
        return [("w", self.w)]

    def __call__(self, x):
        return ln_max_pool(x, self.w, self.algebra)


class Affine(Block):
    """Ordinary affine map on (B, F) tensors; used only after invariant layers
    (or in the MLP baseline), where a bias cannot break equivariance."""

    def __init__(
        self,
        f_in: int,
        f_out: int,
        rng: np.random.Generator,
        bias: bool = True,
        init_scale: float = 1.0,
    ):
        self.w = init_channel_weight(rng, f_in, f_out)
        if init_scale != 1.0:
            self.w.data *= init_scale
        self.b = Tensor(np.zeros(f_out), requires_grad=True) if bias else None

    def named_params(self):
        out = [("w", self.w)]
        if self.b is not None:
            out.append(("b", self.b))
        return out

    def __call__(self, x):
        y = ad.matmul(x, self.w)
        return y + self.b if self.b is not None else y
