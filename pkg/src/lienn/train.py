"""Training loop with from-scratch Adam/SGD and symmetry guard rails.

Every source of randomness is a deterministic function of the config seed,
so a rerun reproduces losses and weights bit-for-bit. Symmetry-structured
models are spot-checked each epoch: their outputs must stay invariant or
equivariant under probe conjugations to float precision, which catches any
symmetry-breaking op the moment it enters the graph.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .algebra import LieAlgebra, get_algebra
from .datasets import Dataset
from .models import Model, save_checkpoint


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    symmetry_check: bool = True
    symmetry_tol: float = 1e-6

    def __post_init__(self) -> None:
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs and batch_size must be >= 1 and lr > 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


class SGD:
    def __init__(self, params, lr: float):
        self.params = list(params)
        self.lr = lr

    def step(self) -> None:
        for _, p in self.params:
            if p.grad is not None:
                p.data -= self.lr * p.grad

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


class Adam:
    def __init__(self, params, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for _, p in self.params]
        self.v = [np.zeros_like(p.data) for _, p in self.params]

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, (_, p) in enumerate(self.params):
            g = p.grad
            if g is None:
                # e.g. the max-pool scoring weight: its only consumer is the
                # non-differentiable argmax, so it stays at initialization.
                continue
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()


def make_optimizer(model: Model, cfg: TrainConfig):
    if cfg.optimizer == "sgd":
        return SGD(model.named_params(), cfg.lr)
    return Adam(model.named_params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)


def _regression_loss(model: Model, batch: np.ndarray, targets: np.ndarray) -> ad.Tensor:
    pred = model(batch)
    if pred.data.ndim == 4:
        b, k = pred.data.shape[:2]
        pred = ad.reshape(pred, b, k)
    else:
        pred = ad.reshape(pred, pred.data.shape[0])
    return ad.mse(pred, targets)


def _symmetry_probe(model: Model, ds: Dataset, algebra: LieAlgebra, tol: float, rng: np.random.Generator) -> None:
    """Assert the model still satisfies its head's symmetry on live weights."""
    actions = algebra.sample_group(rng, (2,), scale=0.5)
    adms = algebra.adjoint_matrix(actions)
    sizes = np.array([rec.shape[2] for rec in ds.inputs])
    group = np.flatnonzero(sizes == sizes[rng.integers(len(sizes))])
    idx = rng.choice(group, size=min(4, len(group)), replace=False)
    base = ds.stacked(idx)
    with ad.no_grad():
        out = model(base).data
        for adm in adms:
            conj = np.einsum("kl,blcn->bkcn", adm, base)
            out_c = model(conj).data
            if model.spec.head == "equivariant-algebra":
                drift = np.abs(out_c[:, :, 0, 0] - out[:, :, 0, 0] @ adm.T).max()
            else:
                drift = np.abs(out_c - out).max()
            if drift > tol:
                raise AssertionError(
                    f"{model.spec.arch}/{model.spec.head}: symmetry drift {drift:.3e} "
                    f"exceeds {tol:.1e} during training"
                )


def _epoch_regression(model, ds, opt, order, cfg) -> float:
    total, count = 0.0, 0
    for lo in range(0, len(order), cfg.batch_size):
        sel = order[lo : lo + cfg.batch_size]
        batch = ds.stacked(sel)
        targets = ds.targets[sel]
        opt.zero_grad()
        loss = _regression_loss(model, batch, targets)
        if not np.isfinite(loss.data):
            raise RuntimeError(f"non-finite loss {loss.data!r} at record block {lo}")
        loss.backward()
        opt.step()
        total += float(loss.data) * len(sel)
        count += len(sel)
    return total / count


def _epoch_classifier(model, ds, opt, epoch_rng, cfg) -> float:
    # Batches mix all classes in fixed proportion; each class's records are
    # stacked separately (set sizes differ) and the losses combined in one
    # graph weighted by contribution.
    labels = ds.targets
    classes = np.unique(labels)
    per_class = [np.flatnonzero(labels == c) for c in classes]
    for idx in per_class:
        epoch_rng.shuffle(idx)
    n_steps = max(1, min(len(i) for i in per_class) * len(classes) // cfg.batch_size)
    share = max(1, cfg.batch_size // len(classes))
    total, count = 0.0, 0
    for step in range(n_steps):
        opt.zero_grad()
        terms = []
        batch_n = 0
        sels = []
        for idx in per_class:
            lo = (step * share) % len(idx)
            sel = idx[lo : lo + share]
            if len(sel) == 0:
                continue
            sels.append(sel)
            batch_n += len(sel)
        for sel in sels:
            logits = model(ds.stacked(sel))
            loss_c = ad.softmax_cross_entropy(logits, labels[sel])
            terms.append(ad.mul(loss_c, len(sel) / batch_n))
        loss = terms[0]
        for t in terms[1:]:
            loss = ad.add(loss, t)
        if not np.isfinite(loss.data):
            raise RuntimeError(f"non-finite loss {loss.data!r} at step {step}")
        loss.backward()
        opt.step()
        total += float(loss.data) * batch_n
        count += batch_n
    return total / count


def train_model(
    model: Model,
    train_ds: Dataset,
    cfg: TrainConfig,
    val_fn=None,
    out_dir: str | Path | None = None,
    algebra: LieAlgebra | None = None,
    log_every: int = 0,
) -> list[dict]:
    """Train in place; returns per-epoch history.

    val_fn, when given, maps the model to a scalar where lower is better;
    the best-scoring weights are saved to out_dir/best.ckpt (final weights
    to out_dir/final.ckpt, history to out_dir/history.csv).
    """
    algebra = algebra if algebra is not None else get_algebra("sl3")
    opt = make_optimizer(model, cfg)
    is_cls = train_ds.kind == "platonic"
    history: list[dict] = []
    best_val = np.inf
    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        epoch_rng = np.random.default_rng([cfg.seed, 1 + epoch])
        if is_cls:
            train_loss = _epoch_classifier(model, train_ds, opt, epoch_rng, cfg)
        else:
            order = epoch_rng.permutation(len(train_ds))
            train_loss = _epoch_regression(model, train_ds, opt, order, cfg)
        if cfg.symmetry_check and model.spec.arch != "MLP":
            probe_rng = np.random.default_rng([cfg.seed, 7 + epoch])
            _symmetry_probe(model, train_ds, algebra, cfg.symmetry_tol, probe_rng)
        row = {"epoch": epoch, "train_loss": train_loss, "seconds": time.perf_counter() - t0}
        if val_fn is not None:
            row["val"] = float(val_fn(model))
            if row["val"] < best_val:
                best_val = row["val"]
                if out_path is not None:
                    save_checkpoint(out_path / "best.ckpt", model, seed=cfg.seed, meta={"epoch": epoch, "val": row["val"]})
        history.append(row)
        if log_every and (epoch % log_every == 0 or epoch == cfg.epochs - 1):
            msg = f"epoch {epoch:4d}  loss {train_loss:.6g}"
            if "val" in row:
                msg += f"  val {row['val']:.6g}"
            print(msg, flush=True)
    if out_path is not None:
        save_checkpoint(out_path / "final.ckpt", model, seed=cfg.seed, meta={"epochs": cfg.epochs})
        cols = list(history[0].keys())
        with open(out_path / "history.csv", "w") as fh:
            fh.write(",".join(cols) + "\n")
            for row in history:
                fh.write(",".join(repr(row.get(c, "")) for c in cols) + "\n")
        with open(out_path / "config.json", "w") as fh:
            json.dump(cfg.to_dict(), fh, sort_keys=True, indent=2)
            fh.write("\n")
    return history
