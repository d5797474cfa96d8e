"""Command-line entry point.

Subcommands: gen-data (write dataset files), train (fit a model from a JSON
config plus flag overrides), eval (score a checkpoint on a dataset), verify
(run the property suites), reproduce (assemble an experiment table).

Exit codes: 0 success, 1 property violation or training abort, 2 usage or
configuration error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import datasets, metrics, reproduce as rep, verify
from .algebra import get_algebra
from .models import Model, ModelSpec, load_checkpoint
from .train import TrainConfig, train_model

TASK_NAMES = {"inv": "invariant", "equiv": "equivariant", "platonic": "platonic"}
HEAD_FOR_KIND = {
    "invariant": "invariant-scalar",
    "equivariant": "equivariant-algebra",
    "platonic": "classifier-3way",
}


class CliError(Exception):
    """Configuration problem surfaced to the user; exits with code 2."""


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _load_dataset(path: str) -> datasets.Dataset:
    p = Path(path)
    if not p.exists():
        raise CliError(f"dataset not found: {p}")
    return datasets.load_dataset(str(p))


def _print_json(doc: dict) -> None:
    print(json.dumps(doc, sort_keys=True, indent=2))


# -- gen-data ---------------------------------------------------------------


def _cmd_gen_data(args) -> int:
    task = TASK_NAMES[args.task]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    manifest: dict = {"task": args.task, "seed": args.seed}

    if task == "platonic":
        if args.n_actions:
            raise CliError("--n-actions applies to inv/equiv tasks only")
        rotations = None
        if args.rotations:
            rng = np.random.default_rng([args.seed, 99])
            rotations = []
            for _ in range(args.rotations):
                q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
                rotations.append(q * np.linalg.det(q))
        ds = datasets.gen_platonic_set(
            args.n, noise_scale=args.noise_scale, camera_rotations=rotations, seed=args.seed
        )
        manifest["set_sizes"] = sorted({rec.shape[2] for rec in ds.inputs})
        manifest["n_per_class"] = args.n
        manifest["noise_scale"] = args.noise_scale
        manifest["rotations"] = args.rotations
    else:
        if args.rotations:
            raise CliError("--rotations applies to the platonic task only")
        ds = datasets.gen_regression_set(task, args.n, args.seed)

    datasets.save_dataset(ds, str(out))
    manifest.update({"path": str(out), "kind": ds.kind, "n": len(ds), "sha256": _sha256(out)})

    if args.n_actions:
        conj = datasets.gen_conjugated_testset(ds, args.n_actions, args.seed + 1)
        conj_path = out.with_suffix(out.suffix + ".conj")
        datasets.save_dataset(conj, str(conj_path))
        manifest["conjugated"] = {
            "path": str(conj_path),
            "n": len(conj),
            "n_actions": args.n_actions,
            "sha256": _sha256(conj_path),
        }
    _print_json(manifest)
    return 0


# -- train ------------------------------------------------------------------

_TRAIN_KEYS = ("dataset", "arch", "hidden", "epochs", "batch_size", "lr", "optimizer", "seed", "out")


def _cmd_train(args) -> int:
    cfg: dict = {}
    if args.config:
        cpath = Path(args.config)
        if not cpath.exists():
            raise CliError(f"config not found: {cpath}")
        with open(cpath) as fh:
            loaded = json.load(fh)
        unknown = set(loaded) - set(_TRAIN_KEYS)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(loaded)
    for key in _TRAIN_KEYS:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    for required in ("dataset", "arch"):
        if required not in cfg:
            raise CliError(f"missing required setting: {required} (config key or flag)")

    ds = _load_dataset(cfg["dataset"])
    spec = ModelSpec(
        arch=cfg["arch"], head=HEAD_FOR_KIND[ds.kind], hidden=int(cfg.get("hidden", 256))
    )
    model = Model(spec, np.random.default_rng(int(cfg.get("seed", 0))))
    tc = TrainConfig(
        epochs=int(cfg.get("epochs", 100)),
        batch_size=int(cfg.get("batch_size", 256)),
        lr=float(cfg.get("lr", 1e-3)),
        optimizer=str(cfg.get("optimizer", "adam")),
        seed=int(cfg.get("seed", 0)),
    )
    out_dir = cfg.get("out")
    try:
        history = train_model(model, ds, tc, out_dir=out_dir, log_every=args.log_every)
    except RuntimeError as exc:
        print(f"training aborted: {exc}", file=sys.stderr)
        return 1
    summary = {
        "arch": spec.arch,
        "head": spec.head,
        "epochs": tc.epochs,
        "final_train_loss": history[-1]["train_loss"],
    }
    if out_dir is not None:
        summary["out"] = str(out_dir)
    _print_json(summary)
    return 0


# -- eval -------------------------------------------------------------------


def _cmd_eval(args) -> int:
    ds = _load_dataset(args.dataset)
    try:
        model, extra = load_checkpoint(args.checkpoint)
    except FileNotFoundError:
        raise CliError(f"checkpoint not found: {args.checkpoint}")
    except ValueError as exc:
        raise CliError(f"cannot read checkpoint: {exc}")

    preds = metrics.forward_dataset(model, ds)
    report: dict = {
        "checkpoint": str(args.checkpoint),
        "dataset": str(args.dataset),
        "arch": model.spec.arch,
        "kind": ds.kind,
        "mse_id": None,
        "mse_conjugated": None,
        "invariance_error": None,
        "equivariance_error": None,
        "accuracy": None,
        "counts": {"n_x": len(ds), "n_a": 0},
    }
    if ds.kind == "platonic":
        report["accuracy"] = metrics.accuracy(preds, ds.targets)
    else:
        report["mse_id"] = metrics.mse_id(preds, ds)
        if ds.conjugators is not None:
            report["mse_conjugated"] = metrics.mse_conjugated(preds, ds)
        if args.n_actions:
            algebra = get_algebra("sl3")
            rng = np.random.default_rng(args.action_seed)
            actions = algebra.sample_group(rng, (args.n_actions,), scale=0.5)
            report["counts"]["n_a"] = args.n_actions
            if ds.kind == "invariant":
                report["invariance_error"] = metrics.invariance_error(model, ds, actions)
            else:
                report["equivariance_error"] = metrics.equivariance_error(model, ds, actions)

    out = Path(args.report)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as fh:
        json.dump(report, fh, sort_keys=True, indent=2)
        fh.write("\n")
    flat = {k: v for k, v in report.items() if k != "counts"}
    flat["n_x"] = report["counts"]["n_x"]
    flat["n_a"] = report["counts"]["n_a"]
    csv_path = out.with_suffix(".csv")
    with open(csv_path, "w") as fh:
        fh.write(",".join(flat) + "\n")
        fh.write(",".join("" if v is None else str(v) for v in flat.values()) + "\n")
    _print_json(report)
    return 0


# -- verify -----------------------------------------------------------------


def _cmd_verify(args) -> int:
    rows = verify.run_suite(
        args.suite, trials=args.trials, seed=args.seed, inject_fault=args.inject_fault
    )
    for row in rows:
        print(row.render())
    bad = [row for row in rows if not row.ok]
    worst = max((row.value for row in rows if row.direction == "<"), default=0.0)
    print(f"suite {args.suite}: {len(rows) - len(bad)}/{len(rows)} checks passed, max error {worst:.3e}")
    return 1 if bad else 0


# -- reproduce --------------------------------------------------------------


def _cmd_reproduce(args) -> int:
    out_root = Path(args.out)
    result = rep.reproduce_table(
        args.table, args.budget, out_root, force=args.force, log_every=args.log_every
    )
    for arch, metric, desc, ok in result["checks"]:
        state = "pass" if ok else "FAIL"
        print(f"[{state}] table {args.table} {arch} {metric}: {desc}")
    if args.plot_data:
        curves = out_root / f"table{args.table}_{args.budget}_curves.csv"
        with open(curves, "w") as fh:
            fh.write("cell,epoch,train_loss\n")
            for cell_dir in sorted((out_root / "cells").iterdir()):
                hist = cell_dir / "history.csv"
                if not hist.exists():
                    continue
                with open(hist) as hfh:
                    header = hfh.readline().strip().split(",")
                    for line in hfh:
                        row = dict(zip(header, line.strip().split(",")))
                        fh.write(f"{cell_dir.name},{row['epoch']},{row['train_loss']}\n")
        print(f"curves: {curves}")
    print(f"matrix: {result['paths']['matrix']}")
    print(f"compare: {result['paths']['compare']}")
    return 0 if result["all_pass"] else 1


# -- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lienn", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate and save a dataset")
    g.add_argument("--task", choices=sorted(TASK_NAMES), required=True)
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n", type=int, default=10000, help="samples (inv/equiv) or per-class records (platonic)")
    g.add_argument("--n-actions", type=int, default=0, help="also write a conjugated companion set")
    g.add_argument("--noise-scale", type=float, default=0.1)
    g.add_argument("--rotations", type=int, default=0, help="random camera rotations (platonic)")
    g.set_defaults(func=_cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", help="JSON config file; flags override its keys")
    t.add_argument("--dataset")
    t.add_argument("--arch")
    t.add_argument("--hidden", type=int)
    t.add_argument("--epochs", type=int)
    t.add_argument("--batch-size", type=int, dest="batch_size")
    t.add_argument("--lr", type=float)
    t.add_argument("--optimizer", choices=("adam", "sgd"))
    t.add_argument("--seed", type=int)
    t.add_argument("--out", help="checkpoint/history directory")
    t.add_argument("--log-every", type=int, default=0)
    t.set_defaults(func=_cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--dataset", required=True)
    e.add_argument("--report", required=True, help="output JSON path (CSV written alongside)")
    e.add_argument("--n-actions", type=int, default=0, help="sample actions for symmetry-error rows")
    e.add_argument("--action-seed", type=int, default=0)
    e.set_defaults(func=_cmd_eval)

    v = sub.add_parser("verify", help="run a property suite")
    v.add_argument("--suite", choices=("layers", "core", "grad"), required=True)
    v.add_argument("--trials", type=int, default=1000)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--inject-fault", action="store_true", help="negative control: break a layer and expect failure")
    v.set_defaults(func=_cmd_verify)

    r = sub.add_parser("reproduce", help="assemble one experiment table")
    r.add_argument("--table", type=int, choices=(1, 2, 3, 4), required=True)
    r.add_argument("--budget", choices=("full", "quick"), default="full")
    r.add_argument("--out", default="runs/reproduce")
    r.add_argument("--force", action="store_true", help="recompute cached cells")
    r.add_argument("--plot-data", action="store_true", help="emit per-epoch curve CSV")
    r.add_argument("--log-every", type=int, default=0)
    r.set_defaults(func=_cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
