"""Tests for evaluation metrics against direct per-record computations."""

import numpy as np
import pytest

from lienn import datasets, metrics
from lienn.algebra import get_algebra
from lienn.autodiff import Tensor, no_grad
from lienn.models import Model, ModelSpec


def _model(arch, head, hidden=8, seed=0):
    return Model(ModelSpec(arch, head, hidden=hidden), np.random.default_rng(seed))


def _forward_one(model, rec, kind):
    with no_grad():
        pred = model(Tensor(rec[None])).data[0]
    if pred.ndim == 3:
        return pred[:, 0, 0]
    if pred.shape[0] == 1 and kind != "platonic":
        return pred[0]
    return pred


class TestForwardDataset:
    def test_matches_per_record_forward_regression(self):
        """Batched evaluation must agree with one-record-at-a-time forwards."""
        ds = datasets.gen_regression_set("invariant", 12, seed=0)
        model = _model("LN-LR", "invariant-scalar")
        out = metrics.forward_dataset(model, ds)
        assert out.shape == (12,)
        for i, rec in enumerate(ds.inputs):
            assert abs(out[i] - _forward_one(model, rec, ds.kind)) < 1e-12

    def test_matches_per_record_forward_mixed_sizes(self):
        """Platonic records have three set sizes; order must be preserved."""
        ds = datasets.gen_platonic_set(3, seed=1)
        model = _model("LN-LB", "classifier-3way")
        out = metrics.forward_dataset(model, ds)
        assert out.shape == (9, 3)
        for i, rec in enumerate(ds.inputs):
            ref = _forward_one(model, rec, ds.kind)
            assert np.max(np.abs(out[i] - ref)) < 1e-12

    def test_equivariant_output_shape(self):
        ds = datasets.gen_regression_set("equivariant", 6, seed=2)
        model = _model("2LN-LB", "equivariant-algebra")
        out = metrics.forward_dataset(model, ds)
        assert out.shape == (6, 8)

    def test_batch_size_does_not_change_result(self):
        ds = datasets.gen_regression_set("invariant", 10, seed=3)
        model = _model("LN-LR", "invariant-scalar")
        a = metrics.forward_dataset(model, ds, batch_size=3)
        b = metrics.forward_dataset(model, ds, batch_size=256)
        assert np.allclose(a, b, rtol=1e-12, atol=1e-12)


class TestMse:
    def test_mse_id_manual(self):
        ds = datasets.gen_regression_set("invariant", 5, seed=4)
        preds = ds.targets + 0.5
        assert abs(metrics.mse_id(preds, ds) - 0.25) < 1e-12

    def test_mse_id_componentwise_mean(self):
        ds = datasets.gen_regression_set("equivariant", 4, seed=5)
        preds = np.zeros_like(ds.targets)
        want = np.mean(ds.targets**2)
        assert abs(metrics.mse_id(preds, ds) - want) < 1e-12

    def test_mse_conjugated_invariant_is_plain_mse(self):
        base = datasets.gen_regression_set("invariant", 4, seed=6)
        actions = get_algebra("sl3").sample_group(np.random.default_rng(7), (3,), scale=0.4)
        conj = datasets.gen_conjugated_testset(base, actions=actions)
        preds = np.asarray(conj.targets) + 0.1
        assert abs(metrics.mse_conjugated(preds, conj) - metrics.mse_id(preds, conj)) < 1e-15

    def test_mse_conjugated_pushes_equivariant_targets(self):
        """Equivariant targets must be conjugated before comparison."""
        sl3 = get_algebra("sl3")
        base = datasets.gen_regression_set("equivariant", 4, seed=8)
        actions = sl3.sample_group(np.random.default_rng(9), (2,), scale=0.4)
        conj = datasets.gen_conjugated_testset(base, actions=actions)
        preds = np.zeros_like(conj.targets)
        adms = sl3.adjoint_matrix(conj.conjugators)
        mapped = np.einsum("nkl,nl->nk", adms, conj.targets)
        want = np.mean(mapped**2)
        assert abs(metrics.mse_conjugated(preds, conj, sl3) - want) < 1e-12

    def test_mse_conjugated_without_conjugators_falls_back(self):
        ds = datasets.gen_regression_set("equivariant", 4, seed=10)
        preds = np.asarray(ds.targets) + 0.2
        assert ds.conjugators is None
        assert (
            abs(metrics.mse_conjugated(preds, ds) - metrics.mse_id(preds, ds)) < 1e-15
        )

    def test_mse_conjugated_rejects_platonic(self):
        ds = datasets.gen_platonic_set(2, seed=11)
        with pytest.raises(ValueError):
            metrics.mse_conjugated(np.zeros((6, 3)), ds)


class TestSymmetryErrors:
    def test_invariance_error_matches_manual_loop(self):
        sl3 = get_algebra("sl3")
        ds = datasets.gen_regression_set("invariant", 5, seed=12)
        model = _model("LN-LB", "invariant-scalar")
        actions = sl3.sample_group(np.random.default_rng(13), (3,), scale=0.5)
        got = metrics.invariance_error(model, ds, actions, sl3)

        base = metrics.forward_dataset(model, ds)
        adms = sl3.adjoint_matrix(actions)
        total = 0.0
        for adm in adms:
            moved = datasets.Dataset(
                ds.kind,
                [np.einsum("kl,lcn->kcn", adm, rec) for rec in ds.inputs],
                ds.targets,
                None,
                ds.meta,
            )
            pred = metrics.forward_dataset(model, moved)
            total += float(np.mean(np.abs(pred - base)))
        assert abs(got - total / len(adms)) < 1e-14

    def test_invariance_error_small_for_invariant_model(self):
        sl3 = get_algebra("sl3")
        ds = datasets.gen_regression_set("invariant", 5, seed=14)
        model = _model("LN-LR", "invariant-scalar")
        actions = sl3.sample_group(np.random.default_rng(15), (4,), scale=0.5)
        assert metrics.invariance_error(model, ds, actions, sl3) < 1e-10

    def test_invariance_error_rejects_vector_output(self):
        ds = datasets.gen_regression_set("equivariant", 3, seed=16)
        model = _model("2LN-LB", "equivariant-algebra")
        actions = get_algebra("sl3").sample_group(np.random.default_rng(17), (2,))
        with pytest.raises(ValueError):
            metrics.invariance_error(model, ds, actions)

    def test_equivariance_error_matches_manual_loop(self):
        sl3 = get_algebra("sl3")
        ds = datasets.gen_regression_set("equivariant", 4, seed=18)
        model = _model("MLP", "equivariant-algebra")
        actions = sl3.sample_group(np.random.default_rng(19), (3,), scale=0.5)
        got = metrics.equivariance_error(model, ds, actions, sl3)

        base = metrics.forward_dataset(model, ds)
        adms = sl3.adjoint_matrix(actions)
        total = 0.0
        for adm in adms:
            moved = datasets.Dataset(
                ds.kind,
                [np.einsum("kl,lcn->kcn", adm, rec) for rec in ds.inputs],
                ds.targets,
                None,
                ds.meta,
            )
            pred = metrics.forward_dataset(model, moved)
            diff = sl3.hat(pred - base @ adm.T)
            total += float(np.mean(np.linalg.norm(diff, axis=(-2, -1))))
        assert abs(got - total / len(adms)) < 1e-13

    def test_equivariance_error_small_for_equivariant_model(self):
        sl3 = get_algebra("sl3")
        ds = datasets.gen_regression_set("equivariant", 4, seed=20)
        model = _model("2LN-LB", "equivariant-algebra")
        actions = sl3.sample_group(np.random.default_rng(21), (3,), scale=0.5)
        assert metrics.equivariance_error(model, ds, actions, sl3) < 1e-9

    def test_equivariance_error_rejects_scalar_output(self):
        ds = datasets.gen_regression_set("invariant", 3, seed=22)
        model = _model("LN-LR", "invariant-scalar")
        actions = get_algebra("sl3").sample_group(np.random.default_rng(23), (2,))
        with pytest.raises(ValueError):
            metrics.equivariance_error(model, ds, actions)


class TestAccuracy:
    def test_fraction_correct(self):
        logits = np.array([[2.0, 1.0, 0.0], [0.0, 3.0, 1.0], [1.0, 0.0, 2.0], [5.0, 0.0, 1.0]])
        labels = np.array([0, 1, 2, 2])
        assert abs(metrics.accuracy(logits, labels) - 0.75) < 1e-15

    def test_tied_maximum_counts_as_error(self):
        """An exact tie at the top is scored wrong even if argmax matches."""
        logits = np.array([[1.0, 1.0, 0.0], [0.0, 2.0, 1.0]])
        labels = np.array([0, 1])
        assert abs(metrics.accuracy(logits, labels) - 0.5) < 1e-15

    def test_all_correct(self):
        logits = np.eye(3) * 4.0
        labels = np.array([0, 1, 2])
        assert metrics.accuracy(logits, labels) == 1.0
