"""Dataset generation and serialization for the three benchmark tasks.

Regression sets hold (x, y) pairs of algebra coefficient vectors stacked as
two channels with a scalar or algebra-vector target; the classifier set
holds, per record, the logs of all ordered neighbor-face homographies of
one Platonic solid as N single-channel vectors with a class label. Files
use a one-line JSON header followed by little-endian binary records, or a
pure-JSON debug mode; both round-trip byte-identically.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .algebra import LieAlgebra, get_algebra
from .platonic import SOLIDS, GenerationError, base_logs, get_solid

DATA_MAGIC = "LN-DATA-v1"

KINDS = ("invariant", "equivariant", "platonic")
_TARGET_OF_KIND = {"invariant": "scalar", "equivariant": "vector", "platonic": "label"}

# Rejection bound on tr(X^2) of the first channel keeps exp(tr(X^2)) in the
# invariant target within a trainable range.
TRACE_BOUND = 4.0


@dataclass
class Dataset:
    """In-memory dataset: per-record inputs (K, C, N_i) plus targets.

    N_i may vary between records (the classifier's set size depends on the
    solid); records with equal N_i can be stacked for batching.
    """

    kind: str
    inputs: list
    targets: np.ndarray
    conjugators: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if len(self.inputs) != len(self.targets):
            raise ValueError("inputs and targets length mismatch")
        if self.conjugators is not None and len(self.conjugators) != len(self.inputs):
            raise ValueError("conjugators length mismatch")

    def __len__(self) -> int:
        return len(self.inputs)

    @property
    def target_kind(self) -> str:
        return _TARGET_OF_KIND[self.kind]

    @property
    def algebra_dim(self) -> int:
        return self.inputs[0].shape[0]

    @property
    def n_channels(self) -> int:
        return self.inputs[0].shape[1]

    def stacked(self, indices=None) -> np.ndarray:
        """(B, K, C, N) stack of the selected records; N must be uniform."""
        sel = self.inputs if indices is None else [self.inputs[i] for i in indices]
        sizes = {a.shape[2] for a in sel}
        if len(sizes) > 1:
            raise ValueError(f"records have mixed set sizes {sorted(sizes)}")
        return np.stack(sel)


def target_invariant(x: np.ndarray, y: np.ndarray, algebra: LieAlgebra | None = None) -> np.ndarray:
    """sin(tr(XY)) + cos(tr(YY)) - tr(YY)^3/2 + det(XY) + exp(tr(XX))."""
    algebra = algebra if algebra is not None else get_algebra("sl3")
    hx = algebra.hat(np.asarray(x, dtype=np.float64))
    hy = algebra.hat(np.asarray(y, dtype=np.float64))
    t_xy = np.einsum("...ab,...ba->...", hx, hy)
    t_yy = np.einsum("...ab,...ba->...", hy, hy)
    t_xx = np.einsum("...ab,...ba->...", hx, hx)
    det_xy = np.linalg.det(hx) * np.linalg.det(hy)
    return np.sin(t_xy) + np.cos(t_yy) - t_yy**3 / 2.0 + det_xy + np.exp(t_xx)


def target_equivariant(x: np.ndarray, y: np.ndarray, algebra: LieAlgebra | None = None) -> np.ndarray:
    """vee([[X, Y], Y] + [Y, X])."""
    algebra = algebra if algebra is not None else get_algebra("sl3")
    hx = algebra.hat(np.asarray(x, dtype=np.float64))
    hy = algebra.hat(np.asarray(y, dtype=np.float64))
    b1 = hx @ hy - hy @ hx
    b2 = b1 @ hy - hy @ b1
    return algebra.vee(b2 - b1)


def _sample_bounded_x(rng: np.random.Generator, n: int, scale: float, algebra: LieAlgebra) -> np.ndarray:
    """n coefficient vectors with |tr(x^ x^)| <= TRACE_BOUND, drawn i.i.d.

    Rejected draws are discarded and redrawn, so the accepted sequence is a
    deterministic function of the generator state.
    """
    out = np.empty((n, algebra.dim))
    have = 0
    rounds = 0
    while have < n:
        cand = algebra.sample_algebra(rng, (n - have,), scale=scale)
        h = algebra.hat(cand)
        keep = np.abs(np.einsum("...ab,...ba->...", h, h)) <= TRACE_BOUND
        kept = cand[keep]
        out[have : have + len(kept)] = kept
        have += len(kept)
        rounds += 1
        if rounds > 100:
            raise GenerationError("rejection cascade: trace bound never satisfied")
    return out


def gen_regression_set(
    task: str,
    n_samples: int,
    seed: int,
    scale: float = 0.5,
    algebra: LieAlgebra | None = None,
) -> Dataset:
    """i.i.d. (x, y) channel pairs with invariant or equivariant targets.

    Both channels are trace-bounded: the exponential and cubic trace terms
    of the invariant target are unbounded in the raw coefficient draw, and
    their tails would dominate the squared error for every model alike.
    """
    if task not in ("invariant", "equivariant"):
        raise ValueError(f"unknown regression task {task!r}")
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    algebra = algebra if algebra is not None else get_algebra("sl3")
    rng = np.random.default_rng(seed)
    x = _sample_bounded_x(rng, n_samples, scale, algebra)
    y = _sample_bounded_x(rng, n_samples, scale, algebra)
    if task == "invariant":
        targets = target_invariant(x, y, algebra)
    else:
        targets = target_equivariant(x, y, algebra)
    if not np.all(np.isfinite(targets)):
        raise GenerationError("non-finite target escaped the trace bound")
    stacked = np.stack([x, y], axis=2)[..., None]
    meta = {
        "task": task,
        "seed": int(seed),
        "scale": float(scale),
        "algebra": algebra.name,
    }
    return Dataset(task, list(stacked), targets, None, meta)


def gen_conjugated_testset(
    base: Dataset,
    n_actions: int | None = None,
    seed: int | None = None,
    conj_scale: float = 0.5,
    actions: np.ndarray | None = None,
    algebra: LieAlgebra | None = None,
) -> Dataset:
    """Each base record repeated under every group action, record-major.

    Inputs are conjugated (coefficients mapped through the action's adjoint
    matrix); targets are copied untransformed and the acting group element
    is stored per record, so metrics can apply the invariant or equivariant
    comparison.
    """
    algebra = algebra if algebra is not None else get_algebra("sl3")
    if actions is None:
        if n_actions is None or seed is None:
            raise ValueError("need n_actions and seed when actions are not given")
        if n_actions < 1:
            raise ValueError("n_actions must be >= 1")
        rng = np.random.default_rng(seed)
        actions = algebra.sample_group(rng, (n_actions,), scale=conj_scale)
    actions = np.asarray(actions, dtype=np.float64)
    adms = algebra.adjoint_matrix(actions)
    m = len(actions)
    inputs: list = []
    for rec in base.inputs:
        conj = np.einsum("jkl,lcn->jkcn", adms, rec)
        inputs.extend(conj)
    targets = np.repeat(base.targets, m, axis=0)
    conjugators = np.tile(actions, (len(base), 1, 1))
    meta = dict(base.meta)
    meta.update({"n_actions": int(m), "conj_scale": float(conj_scale), "base_size": len(base)})
    if seed is not None:
        meta["action_seed"] = int(seed)
    return Dataset(base.kind, inputs, targets, conjugators, meta)


def gen_platonic_set(
    n_per_class: int,
    noise_scale: float = 0.01,
    camera_rotations: list | None = None,
    seed: int = 0,
    algebra: LieAlgebra | None = None,
) -> Dataset:
    """Per record: noisy logs of one solid's N ordered face-pair homographies.

    Records are class-blocked in SOLIDS order with labels 0/1/2. Noise is
    added to the unrotated logs and the camera rotation (assigned
    round-robin from camera_rotations, identity if None) is applied after,
    so a rotated set with the same seed is exactly the adjoint image of the
    unrotated one. The applied rotation is stored as the conjugator.
    """
    if n_per_class < 1:
        raise ValueError("n_per_class must be >= 1")
    algebra = algebra if algebra is not None else get_algebra("sl3")
    rots = None
    if camera_rotations is not None:
        rots = np.asarray(camera_rotations, dtype=np.float64)
        if rots.ndim != 3 or rots.shape[1:] != (3, 3):
            raise ValueError("camera_rotations must be a list of 3x3 matrices")
    noise_rng = np.random.default_rng([seed, 0])
    inputs: list = []
    labels = np.empty(3 * n_per_class, dtype=np.int64)
    conjugators = np.empty((3 * n_per_class, 3, 3))
    for ci, name in enumerate(SOLIDS):
        logs = base_logs(get_solid(name), algebra)
        n_pairs = logs.shape[0]
        noise = noise_rng.normal(scale=noise_scale, size=(n_per_class, n_pairs, algebra.dim)) if noise_scale > 0 else np.zeros((n_per_class, n_pairs, algebra.dim))
        noisy = logs[None, :, :] + noise
        for i in range(n_per_class):
            row = ci * n_per_class + i
            if rots is None:
                rot = np.eye(3)
                vecs = noisy[i]
            else:
                rot = rots[i % len(rots)]
                vecs = noisy[i] @ algebra.adjoint_matrix(rot).T
            inputs.append(np.ascontiguousarray(vecs.T[:, None, :]))
            labels[row] = ci
            conjugators[row] = rot
    meta = {
        "task": "platonic",
        "seed": int(seed),
        "noise_scale": float(noise_scale),
        "classes": list(SOLIDS),
        "set_sizes": [len(get_solid(s).pairs) for s in SOLIDS],
        "n_per_class": int(n_per_class),
        "rotated": bool(rots is not None),
        "algebra": algebra.name,
    }
    return Dataset("platonic", inputs, labels, conjugators, meta)


def _header(ds: Dataset, fmt: str) -> dict:
    return {
        "magic": DATA_MAGIC,
        "format": fmt,
        "kind": ds.kind,
        "n": len(ds),
        "k": ds.algebra_dim,
        "c": ds.n_channels,
        "target": ds.target_kind,
        "conjugators": ds.conjugators is not None,
        "meta": ds.meta,
    }


def save_dataset(ds: Dataset, path: str, mode: str = "binary") -> None:
    """Write a dataset; mode 'binary' (compact) or 'json' (debug)."""
    if mode == "json":
        doc = _header(ds, "json")
        doc["records"] = [
            {
                "inputs": rec.tolist(),
                "target": ds.targets[i].tolist(),
                **({"conjugator": ds.conjugators[i].tolist()} if ds.conjugators is not None else {}),
            }
            for i, rec in enumerate(ds.inputs)
        ]
        with open(path, "w") as fh:
            json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")
        return
    if mode != "binary":
        raise ValueError(f"unknown mode {mode!r}")
    with open(path, "wb") as fh:
        fh.write(json.dumps(_header(ds, "binary"), sort_keys=True, separators=(",", ":")).encode())
        fh.write(b"\n")
        for i, rec in enumerate(ds.inputs):
            fh.write(np.uint32(rec.shape[2]).astype("<u4").tobytes())
            fh.write(np.ascontiguousarray(rec, dtype="<f8").tobytes())
            if ds.target_kind == "label":
                fh.write(np.uint32(ds.targets[i]).astype("<u4").tobytes())
            else:
                fh.write(np.ascontiguousarray(ds.targets[i], dtype="<f8").tobytes())
            if ds.conjugators is not None:
                fh.write(np.ascontiguousarray(ds.conjugators[i], dtype="<f8").tobytes())


def load_dataset(path: str) -> Dataset:
    with open(path, "rb") as fh:
        first = fh.readline()
        rest = fh.read()
    head = json.loads(first.decode())
    if head.get("magic") != DATA_MAGIC:
        raise ValueError(f"{path} is not a {DATA_MAGIC} file")
    if head["format"] == "json":
        doc = head
        inputs = [np.asarray(r["inputs"], dtype=np.float64) for r in doc["records"]]
        if doc["target"] == "label":
            targets = np.asarray([r["target"] for r in doc["records"]], dtype=np.int64)
        else:
            targets = np.asarray([r["target"] for r in doc["records"]], dtype=np.float64)
        conjugators = (
            np.asarray([r["conjugator"] for r in doc["records"]], dtype=np.float64)
            if doc["conjugators"]
            else None
        )
        return Dataset(doc["kind"], inputs, targets, conjugators, doc["meta"])
    n, k, c = head["n"], head["k"], head["c"]
    inputs = []
    targets: list = []
    conjugators = [] if head["conjugators"] else None
    off = 0
    for _ in range(n):
        n_in = int(np.frombuffer(rest, "<u4", count=1, offset=off)[0])
        off += 4
        count = k * c * n_in
        rec = np.frombuffer(rest, "<f8", count=count, offset=off).reshape(k, c, n_in)
        off += 8 * count
        inputs.append(rec.copy())
        if head["target"] == "label":
            targets.append(int(np.frombuffer(rest, "<u4", count=1, offset=off)[0]))
            off += 4
        elif head["target"] == "vector":
            targets.append(np.frombuffer(rest, "<f8", count=k, offset=off).copy())
            off += 8 * k
        else:
            targets.append(float(np.frombuffer(rest, "<f8", count=1, offset=off)[0]))
            off += 8
        if conjugators is not None:
            conjugators.append(np.frombuffer(rest, "<f8", count=9, offset=off).reshape(3, 3).copy())
            off += 72
    if off != len(rest):
        raise ValueError(f"{path}: {len(rest) - off} trailing bytes")
    tarr = np.asarray(targets, dtype=np.int64 if head["target"] == "label" else np.float64)
    carr = np.stack(conjugators) if conjugators else None
    return Dataset(head["kind"], inputs, tarr, carr, head["meta"])
