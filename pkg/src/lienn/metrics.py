"""Evaluation metrics: MSE variants, symmetry errors, and accuracy.

Symmetry errors stream over the group actions in chunks so a 10k-sample
test set under hundreds of actions never needs to be materialized at once.
"""

from __future__ import annotations

import numpy as np

from .algebra import LieAlgebra, get_algebra
from .autodiff import no_grad
from .datasets import Dataset
from .models import Model


def forward_dataset(model: Model, ds: Dataset, batch_size: int = 256) -> np.ndarray:
    """Model outputs for every record, in record order.

    Records are batched within groups of equal set size (the classifier's
    N differs per class). Returns (n,) for scalar heads, (n, K) for
    algebra-valued heads, (n, n_classes) for classifier logits.
    """
    order = np.arange(len(ds))
    sizes = np.array([rec.shape[2] for rec in ds.inputs])
    out = None
    with no_grad():
        for n_in in np.unique(sizes):
            idx = order[sizes == n_in]
            for lo in range(0, len(idx), batch_size):
                sel = idx[lo : lo + batch_size]
                pred = model(ds.stacked(sel)).data
                if pred.ndim == 4:
                    pred = pred[:, :, 0, 0]
                elif pred.shape[1] == 1 and ds.target_kind == "scalar":
                    pred = pred[:, 0]
                if out is None:
                    out = np.empty((len(ds),) + pred.shape[1:])
                out[sel] = pred
    return out


def mse_id(preds: np.ndarray, ds: Dataset) -> float:
    """Mean squared error against stored targets (componentwise mean)."""
    return float(np.mean((preds - ds.targets) ** 2))


def mse_conjugated(preds: np.ndarray, ds: Dataset, algebra: LieAlgebra | None = None) -> float:
    """MSE on a conjugated set, honoring the target's transformation rule.

    Invariant targets are compared directly; equivariant targets are pushed
    through each record's stored conjugator before comparison.
    """
    if ds.kind == "invariant":
        return mse_id(preds, ds)
    if ds.kind != "equivariant":
        raise ValueError(f"mse_conjugated undefined for kind {ds.kind!r}")
    if ds.conjugators is None:
        return mse_id(preds, ds)
    algebra = algebra if algebra is not None else get_algebra("sl3")
    adms = algebra.adjoint_matrix(ds.conjugators)
    mapped = np.einsum("nkl,nl->nk", adms, ds.targets)
    return float(np.mean((preds - mapped) ** 2))


def _conjugate_inputs(ds: Dataset, adm: np.ndarray) -> Dataset:
    inputs = [np.einsum("kl,lcn->kcn", adm, rec) for rec in ds.inputs]
    return Dataset(ds.kind, inputs, ds.targets, None, ds.meta)


def invariance_error(
    model: Model,
    ds: Dataset,
    actions: np.ndarray,
    algebra: LieAlgebra | None = None,
    batch_size: int = 256,
) -> float:
    """Mean |f(conjugated x) - f(x)| over all samples and actions."""
    algebra = algebra if algebra is not None else get_algebra("sl3")
    base = forward_dataset(model, ds, batch_size)
    if base.ndim != 1:
        raise ValueError("invariance_error expects a scalar-output model")
    adms = algebra.adjoint_matrix(np.asarray(actions, dtype=np.float64))
    total = 0.0
    for adm in adms:
        pred = forward_dataset(model, _conjugate_inputs(ds, adm), batch_size)
        total += float(np.mean(np.abs(pred - base)))
    return total / len(adms)


def equivariance_error(
    model: Model,
    ds: Dataset,
    actions: np.ndarray,
    algebra: LieAlgebra | None = None,
    batch_size: int = 256,
) -> float:
    """Mean Frobenius norm of f(conjugated x)^ - (conjugated f(x))^."""
    algebra = algebra if algebra is not None else get_algebra("sl3")
    base = forward_dataset(model, ds, batch_size)
    if base.ndim != 2:
        raise ValueError("equivariance_error expects an algebra-output model")
    adms = algebra.adjoint_matrix(np.asarray(actions, dtype=np.float64))
    total = 0.0
    for adm in adms:
        pred = forward_dataset(model, _conjugate_inputs(ds, adm), batch_size)
        diff = algebra.hat(pred - base @ adm.T)
        total += float(np.mean(np.linalg.norm(diff, axis=(-2, -1))))
    return total / len(adms)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    """Fraction predicted correctly; a tied maximum counts as an error."""
    top = logits.max(axis=1, keepdims=True)
    ties = (logits == top).sum(axis=1) > 1
    correct = (np.argmax(logits, axis=1) == labels) & ~ties
    return float(np.mean(correct))
