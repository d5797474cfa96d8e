"""Tests for the training loop, optimizers, and symmetry guard rails."""

import numpy as np
import pytest

from lienn import datasets, layers, metrics
from lienn.autodiff import Tensor
from lienn.models import Model, ModelSpec, load_checkpoint
from lienn.train import Adam, SGD, TrainConfig, make_optimizer, train_model


def _model(arch, head, hidden=8, seed=0):
    return Model(ModelSpec(arch, head, hidden=hidden), np.random.default_rng(seed))


def _param_bytes(model):
    return b"".join(t.data.tobytes() for _, t in model.named_params())


class TestTrainConfig:
    def test_rejects_unknown_optimizer(self):
        with pytest.raises(ValueError):
            TrainConfig(optimizer="rmsprop")

    def test_rejects_bad_scalars(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=0)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)

    def test_dict_round_trip(self):
        cfg = TrainConfig(epochs=3, lr=0.01, optimizer="sgd", seed=9)
        assert TrainConfig.from_dict(cfg.to_dict()) == cfg


class TestOptimizers:
    def test_sgd_step_formula(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        p.grad = np.array([0.5, 0.25])
        SGD([("p", p)], lr=0.1).step()
        assert np.allclose(p.data, [0.95, -2.025], atol=1e-15)

    def test_adam_first_step_formula(self):
        """After one step the bias-corrected update is lr * g / (|g| + eps)."""
        g = np.array([0.3, -0.7])
        p = Tensor(np.array([1.0, 1.0]), requires_grad=True)
        p.grad = g.copy()
        opt = Adam([("p", p)], lr=0.05)
        opt.step()
        want = 1.0 - 0.05 * g / (np.abs(g) + opt.eps)
        assert np.allclose(p.data, want, atol=1e-12)

    def test_both_skip_params_without_grad(self):
        for cls in (SGD, Adam):
            p = Tensor(np.array([3.0]), requires_grad=True)
            assert p.grad is None
            cls([("p", p)], lr=0.5).step()
            assert p.data[0] == 3.0

    def test_zero_grad_clears(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        p.grad = np.array([2.0])
        opt = SGD([("p", p)], lr=0.1)
        opt.zero_grad()
        assert p.grad is None

    def test_make_optimizer_dispatch(self):
        model = _model("LN-LR", "invariant-scalar", hidden=4)
        assert isinstance(make_optimizer(model, TrainConfig(optimizer="sgd")), SGD)
        assert isinstance(make_optimizer(model, TrainConfig(optimizer="adam")), Adam)


class TestRegressionTraining:
    def test_loss_decreases(self):
        ds = datasets.gen_regression_set("invariant", 64, seed=0)
        model = _model("LN-LR", "invariant-scalar", hidden=8)
        cfg = TrainConfig(epochs=25, batch_size=32, lr=1e-2, seed=0)
        history = train_model(model, ds, cfg)
        assert len(history) == 25
        assert history[-1]["train_loss"] < 0.5 * history[0]["train_loss"]

    def test_seed_determinism_is_bitwise(self):
        """Same seeds must reproduce the loss curve and weights exactly."""
        ds = datasets.gen_regression_set("invariant", 32, seed=1)
        runs = []
        for _ in range(2):
            model = _model("LN-LB", "invariant-scalar", hidden=4, seed=3)
            cfg = TrainConfig(epochs=5, batch_size=16, lr=1e-2, seed=7)
            history = train_model(model, ds, cfg)
            runs.append(([r["train_loss"] for r in history], _param_bytes(model)))
        assert runs[0][0] == runs[1][0]
        assert runs[0][1] == runs[1][1]

    def test_different_seed_changes_run(self):
        ds = datasets.gen_regression_set("invariant", 32, seed=1)
        losses = []
        for seed in (0, 1):
            model = _model("LN-LB", "invariant-scalar", hidden=4, seed=3)
            cfg = TrainConfig(epochs=3, batch_size=16, lr=1e-2, seed=seed)
            history = train_model(model, ds, cfg)
            losses.append([r["train_loss"] for r in history])
        assert losses[0] != losses[1]

    def test_sgd_also_trains(self):
        ds = datasets.gen_regression_set("invariant", 32, seed=2)
        model = _model("LN-LR", "invariant-scalar", hidden=4)
        cfg = TrainConfig(epochs=20, batch_size=16, lr=1e-3, optimizer="sgd", seed=0)
        history = train_model(model, ds, cfg)
        assert history[-1]["train_loss"] < history[0]["train_loss"]

    def test_non_finite_loss_aborts(self):
        ds = datasets.gen_regression_set("invariant", 16, seed=3)
        model = _model("LN-LR", "invariant-scalar", hidden=4)
        name, p = model.named_params()[0]
        p.data[:] = np.nan
        cfg = TrainConfig(epochs=1, batch_size=16, symmetry_check=False)
        with pytest.raises(RuntimeError, match="non-finite"):
            train_model(model, ds, cfg)

    def test_equivariant_head_trains(self):
        ds = datasets.gen_regression_set("equivariant", 48, seed=4)
        model = _model("2LN-LB", "equivariant-algebra", hidden=8)
        cfg = TrainConfig(epochs=15, batch_size=24, lr=1e-2, seed=0)
        history = train_model(model, ds, cfg)
        assert history[-1]["train_loss"] < history[0]["train_loss"]


class TestClassifierTraining:
    def test_loss_decreases_and_accuracy_improves(self):
        ds = datasets.gen_platonic_set(8, seed=0)
        model = _model("LN-LB", "classifier-3way", hidden=8)
        before = metrics.accuracy(metrics.forward_dataset(model, ds), ds.targets)
        cfg = TrainConfig(epochs=30, batch_size=12, lr=1e-2, seed=0)
        history = train_model(model, ds, cfg)
        after = metrics.accuracy(metrics.forward_dataset(model, ds), ds.targets)
        assert history[-1]["train_loss"] < history[0]["train_loss"]
        assert after >= before

    def test_pool_weight_stays_at_init(self):
        """The pooling score weight has no gradient path, so training must
        leave it untouched while the rest of the model moves."""
        ds = datasets.gen_platonic_set(4, seed=1)
        model = _model("LN-LR", "classifier-3way", hidden=4)
        named = dict(model.named_params())
        pool_before = named["pool.w"].data.copy()
        head_before = named["head.w"].data.copy()
        cfg = TrainConfig(epochs=3, batch_size=6, lr=1e-2, seed=0)
        train_model(model, ds, cfg)
        assert np.array_equal(named["pool.w"].data, pool_before)
        assert not np.array_equal(named["head.w"].data, head_before)


class TestSymmetryProbe:
    def test_fault_injected_layer_is_caught(self):
        """The per-epoch probe must abort on a symmetry-breaking op."""
        ds = datasets.gen_regression_set("invariant", 16, seed=5)
        model = _model("LN-LR", "invariant-scalar", hidden=4)
        orig = layers.ln_linear
        layers.ln_linear = lambda x, w, inject_fault=False: orig(x, w, inject_fault=True)
        try:
            cfg = TrainConfig(epochs=1, batch_size=16, lr=1e-3, seed=0)
            with pytest.raises(AssertionError, match="symmetry drift"):
                train_model(model, ds, cfg)
        finally:
            layers.ln_linear = orig

    def test_mlp_is_exempt(self):
        ds = datasets.gen_regression_set("invariant", 16, seed=6)
        model = _model("MLP", "invariant-scalar", hidden=4)
        cfg = TrainConfig(epochs=2, batch_size=16, lr=1e-3, seed=0)
        history = train_model(model, ds, cfg)
        assert len(history) == 2


class TestArtifacts:
    def test_output_directory_contents(self, tmp_path):
        ds = datasets.gen_regression_set("invariant", 32, seed=7)
        val = datasets.gen_regression_set("invariant", 16, seed=8)
        model = _model("LN-LR", "invariant-scalar", hidden=4)
        val_fn = lambda m: metrics.mse_id(metrics.forward_dataset(m, val), val)
        cfg = TrainConfig(epochs=6, batch_size=16, lr=1e-2, seed=0)
        history = train_model(model, ds, cfg, val_fn=val_fn, out_dir=tmp_path)

        for name in ("best.ckpt", "final.ckpt", "history.csv", "config.json"):
            assert (tmp_path / name).exists()
        header = (tmp_path / "history.csv").read_text().splitlines()[0]
        assert header == "epoch,train_loss,seconds,val"

        best_model, meta = load_checkpoint(tmp_path / "best.ckpt")
        vals = [r["val"] for r in history]
        assert meta["meta"]["val"] == min(vals)
        assert meta["meta"]["epoch"] == int(np.argmin(vals))
        assert abs(val_fn(best_model) - min(vals)) < 1e-12

        final_model, _ = load_checkpoint(tmp_path / "final.ckpt")
        assert _param_bytes(final_model) == _param_bytes(model)

    def test_history_without_val_fn(self, tmp_path):
        ds = datasets.gen_regression_set("invariant", 16, seed=9)
        model = _model("LN-LR", "invariant-scalar", hidden=4)
        cfg = TrainConfig(epochs=2, batch_size=16, seed=0)
        history = train_model(model, ds, cfg, out_dir=tmp_path)
        assert "val" not in history[0]
        assert not (tmp_path / "best.ckpt").exists()
