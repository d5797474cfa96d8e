"""Composed architectures: invariant/equivariant regressors, the set
classifier, MLP baselines, and checkpoint serialization.

Architecture tags name the stack of LN modules; the head tag fixes input
channel count and output contract. Forward signatures:
  invariant-scalar     (B, K, 2, 1) -> (B, 1)
  equivariant-algebra  (B, K, 2, 1) -> (B, K, 1, 1)
  classifier-3way      (B, K, 1, N) -> (B, 3) logits
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import layers as ly
from .algebra import LieAlgebra, get_algebra
from .autodiff import Tensor

ARCHITECTURES = (
    "LN-LR",
    "LN-LB",
    "LN-LR+LN-LB",
    "2LN-LR",
    "2LN-LB",
    "2LN-LR+2LN-LB",
    "LN-LBN",
    "MLP",
)
HEADS = ("invariant-scalar", "equivariant-algebra", "classifier-3way")

# Architecture/head pairings that appear in the experiments; anything else is
# rejected at spec construction.
_ALLOWED = {
    "invariant-scalar": {"MLP", "LN-LR", "LN-LB", "LN-LR+LN-LB", "LN-LBN"},
    "equivariant-algebra": {"MLP", "2LN-LR", "2LN-LB", "2LN-LR+2LN-LB", "LN-LBN"},
    "classifier-3way": {"MLP", "LN-LR", "LN-LB", "LN-LR+LN-LB", "LN-LBN"},
}

_HEAD_CHANNELS = {"invariant-scalar": 2, "equivariant-algebra": 2, "classifier-3way": 1}

# Fixed flat width for the classifier MLP: inputs are zero-padded along the
# set axis to the largest class's set size.
MLP_PAD_N = 60

# Classifier heads start near zero so the initial class distribution is close
# to uniform.  The invariant features feeding the head are raw Killing squares
# whose magnitude is set by the data (there is no normalization layer), so a
# unit-scale init would start deep inside softmax saturation.
CLS_HEAD_INIT_SCALE = 1e-3


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    head: str
    hidden: int = 256
    algebra: str = "sl3"

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.head not in HEADS:
            raise ValueError(f"unknown head {self.head!r}")
        if self.arch not in _ALLOWED[self.head]:
            raise ValueError(f"architecture {self.arch!r} is not defined for head {self.head!r}")
        if self.hidden < 1:
            raise ValueError("hidden channel count must be >= 1")

    def to_dict(self) -> dict:
        return {
            "arch": self.arch,
            "head": self.head,
            "hidden": self.hidden,
            "algebra": self.algebra,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            arch=d["arch"],
            head=d["head"],
            hidden=int(d["hidden"]),
            algebra=d["algebra"],
        )


def _module_tags(spec: ModelSpec) -> list[str]:
    if spec.arch == "LN-LR":
        return ["lr"]
    if spec.arch == "LN-LB":
        return ["lb"]
    if spec.arch == "LN-LR+LN-LB":
        return ["lr", "lb"]
    if spec.arch == "2LN-LR":
        return ["lr", "lr"]
    if spec.arch == "2LN-LB":
        return ["lb", "lb"]
    if spec.arch == "2LN-LR+2LN-LB":
        return ["lr", "lr", "lb", "lb"]
    if spec.arch == "LN-LBN":
        # Mirrors the module count of the LN-LB column per task: two stacked
        # modules on the equivariant task, one elsewhere.
        return ["lbn", "lbn"] if spec.head == "equivariant-algebra" else ["lbn"]
    raise ValueError(spec.arch)


class Model:
    """A built network: callable on feature Tensors, parameters enumerable."""

    def __init__(self, spec: ModelSpec, rng: np.random.Generator, algebra: LieAlgebra | None = None):
        self.spec = spec
        self.algebra = algebra if algebra is not None else get_algebra(spec.algebra)
        self._blocks: list[tuple[str, ly.Block]] = []
        if spec.arch == "MLP":
            self._build_mlp(rng)
        else:
            self._build_ln(rng)

    # -- construction ------------------------------------------------------

    def _build_ln(self, rng: np.random.Generator) -> None:
        alg = self.algebra
        hidden = self.spec.hidden
        c = _HEAD_CHANNELS[self.spec.head]
        for i, tag in enumerate(_module_tags(self.spec)):
            if tag == "lr":
                block = ly.LnReluModule(alg, c, hidden, rng)
            elif tag == "lb":
                block = ly.LnBracketModule(alg, c, hidden, rng, residual=True)
            else:
                block = ly.LnBracketModule(alg, c, hidden, rng, residual=False)
            self._blocks.append((f"block{i}", block))
            c = hidden
        if self.spec.head == "invariant-scalar":
            self._blocks.append(("head", ly.Affine(hidden, 1, rng)))
        elif self.spec.head == "equivariant-algebra":
            self._blocks.append(("head", ly.LnLinear(alg, hidden, 1, rng)))
        else:
            self._blocks.append(("pool", ly.LnMaxPool(alg, hidden, rng)))
            self._blocks.append(("head", ly.Affine(hidden, 3, rng, init_scale=CLS_HEAD_INIT_SCALE)))

    def _build_mlp(self, rng: np.random.Generator) -> None:
        k = self.algebra.dim
        if self.spec.head == "classifier-3way":
            in_dim, out_dim = k * MLP_PAD_N, 3
        elif self.spec.head == "invariant-scalar":
            in_dim, out_dim = k * 2, 1
        else:
            in_dim, out_dim = k * 2, k
        h = self.spec.hidden
        head_scale = CLS_HEAD_INIT_SCALE if self.spec.head == "classifier-3way" else 1.0
        self._blocks = [
            ("fc0", ly.Affine(in_dim, h, rng)),
            ("fc1", ly.Affine(h, h, rng)),
            ("fc2", ly.Affine(h, out_dim, rng, init_scale=head_scale)),
        ]

    # -- forward -----------------------------------------------------------

    def __call__(self, x: Tensor) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=np.float64))
        if x.ndim != 4 or x.shape[1] != self.algebra.dim:
            raise ValueError(
                f"expected (B, {self.algebra.dim}, C, N) input, got {x.shape}"
            )
        if self.spec.arch == "MLP":
            return self._forward_mlp(x)
        h = x
        named = dict(self._blocks)
        for name, block in self._blocks:
            if name == "head":
                break
            h = block(h)
        if self.spec.head == "invariant-scalar":
            h = ly.ln_invariant(h, self.algebra)
            h = ad.reshape(h, (h.shape[0], self.spec.hidden))
            return named["head"](h)
        if self.spec.head == "equivariant-algebra":
            return named["head"](h)
        h = named["pool"](h)
        h = ly.ln_invariant(h, self.algebra)
        h = ad.reshape(h, (h.shape[0], self.spec.hidden))
        return named["head"](h)

    def _forward_mlp(self, x: Tensor) -> Tensor:
        b, k, c, n = x.shape
        if self.spec.head == "classifier-3way":
            if n > MLP_PAD_N:
                raise ValueError(f"set size {n} exceeds the MLP padding bound {MLP_PAD_N}")
            if n < MLP_PAD_N:
                pad = Tensor(np.zeros((b, k, c, MLP_PAD_N - n)))
                x = ad.concat([x, pad], axis=3)
        h = ad.reshape(x, (b, -1))
        named = dict(self._blocks)
        h = ad.relu(named["fc0"](h))
        h = ad.relu(named["fc1"](h))
        out = named["fc2"](h)
        if self.spec.head == "equivariant-algebra":
            return ad.reshape(out, (b, self.algebra.dim, 1, 1))
        return out

    # -- parameters --------------------------------------------------------

    def named_params(self) -> list[tuple[str, Tensor]]:
        out = []
        for prefix, block in self._blocks:
            for name, t in block.named_params():
                out.append((f"{prefix}.{name}", t))
        return out

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params()]

    def num_params(self) -> int:
        return sum(t.size for t in self.params())


# -- checkpoints -----------------------------------------------------------

CKPT_MAGIC = "LN-CKPT-v1"


def save_checkpoint(path: str | Path, model: Model, seed: int | None = None, meta: dict | None = None) -> None:
    """Single-file container: one JSON header line, then the parameter
    buffers concatenated as little-endian float64 in header order.

    Contains no timestamps, so identical runs produce identical bytes."""
    arrays = []
    blobs = []
    offset = 0
    for name, t in model.named_params():
        buf = np.ascontiguousarray(t.data, dtype="<f8")
        arrays.append(
            {"name": name, "shape": list(t.shape), "offset": offset, "nbytes": buf.nbytes}
        )
        blobs.append(buf.tobytes())
        offset += buf.nbytes
    header = {
        "magic": CKPT_MAGIC,
        "spec": model.spec.to_dict(),
        "seed": seed,
        "meta": meta or {},
        "arrays": arrays,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    Path(path).write_bytes(payload + b"\n" + b"".join(blobs))


def load_checkpoint(path: str | Path, algebra: LieAlgebra | None = None) -> tuple[Model, dict]:
    raw = Path(path).read_bytes()
    nl = raw.find(b"\n")
    if nl < 0:
        raise ValueError(f"{path}: not a checkpoint (no header line)")
    try:
        header = json.loads(raw[:nl])
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: malformed checkpoint header: {exc}") from exc
    if header.get("magic") != CKPT_MAGIC:
        raise ValueError(
            f"{path}: bad checkpoint magic {header.get('magic')!r}, expected {CKPT_MAGIC!r}"
        )
    spec = ModelSpec.from_dict(header["spec"])
    model = Model(spec, np.random.default_rng(0), algebra=algebra)
    body = raw[nl + 1 :]
    by_name = dict(model.named_params())
    seen = set()
    for rec in header["arrays"]:
        name = rec["name"]
        if name not in by_name:
            raise ValueError(f"{path}: checkpoint array {name!r} not in model")
        shape = tuple(rec["shape"])
        count = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(body, dtype="<f8", count=count, offset=rec["offset"])
        by_name[name].data = np.ascontiguousarray(arr.reshape(shape))
        seen.add(name)
    missing = set(by_name) - seen
    if missing:
        raise ValueError(f"{path}: checkpoint missing arrays {sorted(missing)}")
    return model, header
