"""Property suites: layer equivariance, Killing-form oracles, gradient checks.

Each suite returns a list of CheckRow results; a row passes when its value
compares against its threshold in the stated direction. The CLI prints rows
and exits nonzero if any fails; tests assert on the same rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .algebra import LieAlgebra, get_algebra
from .autodiff import Tensor
from .models import _ALLOWED, Model, ModelSpec

__all__ = [
    "CheckRow",
    "equivariance_suite",
    "core_suite",
    "grad_suite",
    "run_suite",
    "LAYER_OPS",
    "DIFFERENTIABLE_OPS",
]

EQUIV_TOL = 1e-8
ORACLE_TOL = 1e-10
GRAD_TOL = 1e-4
GRAD_EPS = 1e-5

# The seven set-feature layer operations under equivariance test.
LAYER_OPS = (
    "ln_linear",
    "ln_relu",
    "ln_leaky_relu",
    "ln_bracket",
    "ln_bracket_plain",
    "ln_max_pool",
    "mean_pool",
)


@dataclass(frozen=True)
class CheckRow:
    suite: str
    name: str
    value: float
    threshold: float
    ok: bool
    direction: str = "<"  # how value relates to threshold when passing

    def render(self) -> str:
        state = "PASS" if self.ok else "FAIL"
        return (
            f"{state}  {self.suite}/{self.name}: "
            f"{self.value:.3e} (require {self.direction} {self.threshold:g})"
        )


# -- layer equivariance -----------------------------------------------------


def _conjugate(coeffs: np.ndarray, adms: np.ndarray) -> np.ndarray:
    """Apply per-record adjoint matrices to (B, K, C, N) coefficients."""
    return np.einsum("bkl,blcn->bkcn", adms, coeffs)


def _apply_op(op: str, x: Tensor, weights: dict[str, Tensor], algebra: LieAlgebra, inject_fault: bool) -> Tensor:
    if op == "ln_linear":
        return ly.ln_linear(x, weights["w"], inject_fault=inject_fault)
    if op == "ln_relu":
        return ly.ln_relu(x, weights["u"], algebra)
    if op == "ln_leaky_relu":
        return ly.ln_leaky_relu(x, weights["u"], algebra, alpha=0.3)
    if op == "ln_bracket":
        return ly.ln_bracket(x, weights["u"], weights["v"], algebra, residual=True)
    if op == "ln_bracket_plain":
        return ly.ln_bracket(x, weights["u"], weights["v"], algebra, residual=False)
    if op == "ln_max_pool":
        return ly.ln_max_pool(x, weights["w"], algebra)
    if op == "mean_pool":
        return ly.mean_pool(x)
    raise ValueError(f"unknown layer op {op!r}")


def equivariance_suite(
    trials: int = 1000,
    seed: int = 0,
    tol: float = EQUIV_TOL,
    inject_fault: bool = False,
    algebras: tuple[str, ...] = ("sl3", "so3"),
    chunk: int = 50,
) -> list[CheckRow]:
    """Commutation of every layer op with the adjoint action.

    Runs `trials` independent (input, conjugator) pairs per op and algebra,
    in chunks that each draw fresh layer weights. The error is the largest
    per-record relative deviation max|f(ax) - a f(x)| / max|a f(x)|.
    """
    rows = []
    c, n = 4, 3
    for alg_name in algebras:
        algebra = get_algebra(alg_name)
        k = algebra.dim
        for op in LAYER_OPS:
            rng = np.random.default_rng([seed, algebra.dim, LAYER_OPS.index(op)])
            worst = 0.0
            done = 0
            while done < trials:
                b = min(chunk, trials - done)
                done += b
                x = rng.normal(size=(b, k, c, n))
                actions = algebra.sample_group(rng, (b,), scale=0.5)
                adms = algebra.adjoint_matrix(actions)
                weights = {
                    "w": ly.init_channel_weight(rng, c, c),
                    "u": ly.init_channel_weight(rng, c, c),
                    "v": ly.init_channel_weight(rng, c, c),
                }
                with ad.no_grad():
                    out = _apply_op(op, Tensor(x), weights, algebra, inject_fault).data
                    out_c = _apply_op(
                        op, Tensor(_conjugate(x, adms)), weights, algebra, inject_fault
                    ).data
                ref = _conjugate(out, adms)
                num = np.abs(out_c - ref).reshape(b, -1).max(axis=1)
                den = np.abs(ref).reshape(b, -1).max(axis=1) + 1e-300
                worst = max(worst, float((num / den).max()))
            rows.append(CheckRow("layers", f"{op}[{alg_name}]", worst, tol, worst < tol))
    return rows


# -- Killing-form oracles ---------------------------------------------------


def core_suite(trials: int = 1000, seed: int = 0, tol: float = EQUIV_TOL) -> list[CheckRow]:
    """Closed-form Killing checks plus adjoint invariance of the form."""
    rows = []
    sl3 = get_algebra("sl3")
    so3 = get_algebra("so3")

    trace_gram = 6.0 * np.einsum("iab,jba->ij", sl3.basis, sl3.basis)
    err = float(np.abs(sl3.killing - trace_gram).max())
    rows.append(CheckRow("core", "killing_gram[sl3]=6tr(XY)", err, ORACLE_TOL, err < ORACLE_TOL))

    err = float(np.abs(so3.killing + 2.0 * np.eye(3)).max())
    rows.append(CheckRow("core", "killing_gram[so3]=-2I", err, ORACLE_TOL, err < ORACLE_TOL))

    for algebra in (sl3, so3):
        ratio = float(algebra.killing_ratio)
        rows.append(CheckRow("core", f"semisimple[{algebra.name}]", ratio, 1e-9, ratio > 1e-9, ">"))

    for algebra in (sl3, so3):
        rng = np.random.default_rng([seed, algebra.dim])
        x = rng.normal(size=(trials, algebra.dim))
        y = rng.normal(size=(trials, algebra.dim))
        actions = algebra.sample_group(rng, (trials,), scale=0.5)
        adms = algebra.adjoint_matrix(actions)
        base = np.einsum("ti,ij,tj->t", x, algebra.killing, y)
        moved = np.einsum(
            "ti,ij,tj->t",
            np.einsum("tij,tj->ti", adms, x),
            algebra.killing,
            np.einsum("tij,tj->ti", adms, y),
        )
        err = float((np.abs(moved - base) / (np.abs(base) + 1.0)).max())
        rows.append(CheckRow("core", f"killing_invariance[{algebra.name}]", err, tol, err < tol))
    return rows


# -- gradient checks --------------------------------------------------------

# Public autodiff ops with a gradient path; argmax_set is non-differentiable
# by design (the pooling selector) and is excluded.
DIFFERENTIABLE_OPS = (
    "add",
    "neg",
    "mul",
    "square",
    "relu",
    "matmul",
    "channel_matmul",
    "bilinear_form",
    "bracket_channels",
    "reshape",
    "broadcast_to",
    "concat",
    "where_pass",
    "reduce_sum",
    "reduce_mean",
    "gather_set",
    "softmax_cross_entropy",
    "mse",
)


def _op_grad_cases(rng: np.random.Generator, algebra: LieAlgebra):
    """(name, scalar function, input tensors) triples for every op."""
    k = algebra.dim

    def t(*shape):
        return Tensor(rng.normal(size=shape), requires_grad=True)

    x4 = t(2, k, 3, 2)
    y4 = t(2, k, 3, 2)
    w = t(3, 3)
    gram = algebra.killing
    mask = rng.random((2, k, 3, 2)) > 0.5
    idx = rng.integers(0, 2, size=(2, 3))
    labels = np.array([0, 2])

    cases = [
        ("add", lambda a, b: ad.reduce_sum(ad.square(ad.add(a, b))), (x4, y4)),
        ("neg", lambda a: ad.reduce_sum(ad.square(ad.neg(a))), (t(2, 3),)),
        ("mul", lambda a, b: ad.reduce_sum(ad.mul(a, b)), (x4, y4)),
        ("square", lambda a: ad.reduce_sum(ad.square(a)), (t(4, 2),)),
        ("relu", lambda a: ad.reduce_sum(ad.square(ad.relu(a))), (t(5, 3),)),
        ("matmul", lambda a, b: ad.reduce_sum(ad.square(ad.matmul(a, b))), (t(4, 3), t(3, 2))),
        ("channel_matmul", lambda a, b: ad.reduce_sum(ad.square(ad.channel_matmul(a, b))), (x4, w)),
        ("bilinear_form", lambda a, b: ad.reduce_sum(ad.square(ad.bilinear_form(a, b, gram))), (x4, y4)),
        ("bracket_channels", lambda a, b: ad.reduce_sum(ad.square(ad.bracket_channels(a, b, algebra))), (x4, y4)),
        ("reshape", lambda a: ad.reduce_sum(ad.square(ad.reshape(a, (6,)))), (t(2, 3),)),
        ("broadcast_to", lambda a: ad.reduce_sum(ad.square(ad.broadcast_to(a, (4, 2, 3)))), (t(2, 3),)),
        ("concat", lambda a, b: ad.reduce_sum(ad.square(ad.concat([a, b], axis=1))), (t(2, 2), t(2, 3))),
        ("where_pass", lambda a, b: ad.reduce_sum(ad.square(ad.where_pass(mask, a, b))), (x4, y4)),
        ("reduce_sum", lambda a: ad.square(ad.reduce_sum(a)), (x4,)),
        ("reduce_mean", lambda a: ad.square(ad.reduce_mean(a)), (x4,)),
        ("gather_set", lambda a: ad.reduce_sum(ad.square(ad.gather_set(a, idx))), (x4,)),
        ("softmax_cross_entropy", lambda a: ad.softmax_cross_entropy(a, labels), (t(2, 3),)),
        ("mse", lambda a, _tgt=rng.normal(size=(3, 2)): ad.mse(a, _tgt), (t(3, 2),)),
    ]
    assert tuple(name for name, _, _ in cases) == DIFFERENTIABLE_OPS
    return cases


def _mlp_kink_margin(model: Model, x: np.ndarray) -> float:
    """Smallest |pre-activation| across the baseline MLP's ReLU nodes.

    Finite differences are only valid away from the ReLU kink, and the
    zero-initialized biases make an exact-zero pre-activation reachable
    (a record whose first hidden layer is entirely dead), so MLP gradient
    cases resample their input until every node has margin.
    """
    from .models import MLP_PAD_N

    params = dict(model.named_params())
    b, k, c, n = x.shape
    flat = x
    if model.spec.head == "classifier-3way" and n < MLP_PAD_N:
        flat = np.concatenate([x, np.zeros((b, k, c, MLP_PAD_N - n))], axis=3)
    flat = flat.reshape(b, -1)
    a1 = flat @ params["fc0.w"].data + params["fc0.b"].data
    a2 = np.maximum(a1, 0.0) @ params["fc1.w"].data + params["fc1.b"].data
    return float(min(np.abs(a1).min(), np.abs(a2).min()))


def _model_loss_case(arch: str, head: str, rng: np.random.Generator):
    """Small model plus a scalar loss closure over its parameters."""
    spec = ModelSpec(arch=arch, head=head, hidden=3)
    model = Model(spec, rng)
    k = model.algebra.dim

    def draw(shape):
        x = rng.normal(size=shape)
        if arch == "MLP":
            while _mlp_kink_margin(model, x) < 1e-3:
                x = rng.normal(size=shape)
        return x

    if head == "classifier-3way":
        x = draw((2, k, 1, 4))
        labels = np.array([0, 2])

        def loss():
            return ad.softmax_cross_entropy(model(x), labels)

    else:
        x = draw((2, k, 2, 1))
        if head == "invariant-scalar":
            target = rng.normal(size=(2, 1))
        else:
            target = rng.normal(size=(2, k, 1, 1))

        def loss():
            return ad.mse(model(x), target)

    # The pooling score weight is non-differentiable by design; its finite
    # difference can cross a selection boundary, so it is excluded.
    params = [t for name, t in model.named_params() if not name.startswith("pool.")]
    return loss, params


def grad_suite(seed: int = 0, eps: float = GRAD_EPS, tol: float = GRAD_TOL, retries: int = 3) -> list[CheckRow]:
    """Finite-difference checks for every op and every model loss.

    A failing case is redrawn at fresh random points up to `retries` times:
    finite differences are invalid within eps of a ReLU branch or pooling
    tie boundary, and those events are draw-specific, while a genuine
    gradient defect fails at every draw.
    """
    rows = []
    algebra = get_algebra("sl3")

    for i, opname in enumerate(DIFFERENTIABLE_OPS):
        best = np.inf
        for attempt in range(retries + 1):
            rng = np.random.default_rng([seed, 17, i, attempt])
            name, f, xs = _op_grad_cases(rng, algebra)[i]
            assert name == opname
            best = min(best, ad.grad_check(f, list(xs), eps=eps))
            if best < tol:
                break
        rows.append(CheckRow("grad", f"op/{opname}", best, tol, best < tol))

    for head, archs in _ALLOWED.items():
        for arch in sorted(archs):
            best = np.inf
            for attempt in range(retries + 1):
                case_rng = np.random.default_rng([seed, 23, len(rows), attempt])
                loss, params = _model_loss_case(arch, head, case_rng)
                best = min(best, ad.grad_check(lambda *ps: loss(), params, eps=eps))
                if best < tol:
                    break
            rows.append(CheckRow("grad", f"model/{arch}[{head}]", best, tol, best < tol))
    return rows


def run_suite(suite: str, trials: int = 1000, seed: int = 0, inject_fault: bool = False) -> list[CheckRow]:
    if suite == "layers":
        return equivariance_suite(trials=trials, seed=seed, inject_fault=inject_fault)
    if suite == "core":
        return core_suite(trials=trials, seed=seed)
    if suite == "grad":
        return grad_suite(seed=seed)
    raise ValueError(f"unknown suite {suite!r}")
