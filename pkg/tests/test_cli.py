"""End-to-end tests of the command-line interface and its exit codes."""

import json

import numpy as np
import pytest

from lienn import cli, datasets

from conftest import CELLS_ROOT, table_result


def run_cli(capsys, *argv):
    rc = cli.main(list(argv))
    captured = capsys.readouterr()
    return rc, captured.out, captured.err


class TestGenData:
    def test_invariant_with_conjugated_companion(self, tmp_path, capsys):
        out = tmp_path / "inv.bin"
        rc, stdout, _ = run_cli(
            capsys,
            "gen-data", "--task", "inv", "--out", str(out),
            "--n", "20", "--seed", "3", "--n-actions", "4",
        )
        assert rc == 0
        manifest = json.loads(stdout)
        assert manifest["kind"] == "invariant"
        assert manifest["n"] == 20
        assert len(manifest["sha256"]) == 64
        assert out.exists()

        conj_path = out.parent / (out.name + ".conj")
        assert str(conj_path) == manifest["conjugated"]["path"]
        conj = datasets.load_dataset(str(conj_path))
        assert len(conj) == 80
        assert conj.conjugators is not None

    def test_platonic_with_rotations(self, tmp_path, capsys):
        out = tmp_path / "plat.bin"
        rc, stdout, _ = run_cli(
            capsys,
            "gen-data", "--task", "platonic", "--out", str(out),
            "--n", "2", "--rotations", "3", "--seed", "1",
        )
        assert rc == 0
        manifest = json.loads(stdout)
        assert manifest["set_sizes"] == [12, 24, 60]
        ds = datasets.load_dataset(str(out))
        assert len(ds) == 6

    def test_actions_flag_rejected_for_platonic(self, tmp_path, capsys):
        rc, _, stderr = run_cli(
            capsys,
            "gen-data", "--task", "platonic", "--out", str(tmp_path / "x.bin"),
            "--n", "1", "--n-actions", "2",
        )
        assert rc == 2
        assert "error:" in stderr

    def test_rotations_flag_rejected_for_regression(self, tmp_path, capsys):
        rc, _, stderr = run_cli(
            capsys,
            "gen-data", "--task", "equiv", "--out", str(tmp_path / "x.bin"),
            "--n", "4", "--rotations", "2",
        )
        assert rc == 2
        assert "error:" in stderr


class TestTrain:
    def _gen(self, capsys, tmp_path, n=24):
        path = tmp_path / "train.bin"
        rc, _, _ = run_cli(
            capsys, "gen-data", "--task", "inv", "--out", str(path), "--n", str(n)
        )
        assert rc == 0
        return path

    def test_config_file_with_flag_override(self, tmp_path, capsys):
        data = self._gen(capsys, tmp_path)
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({
            "dataset": str(data), "arch": "LN-LR", "hidden": 4,
            "epochs": 9, "batch_size": 12, "lr": 1e-3,
        }))
        out_dir = tmp_path / "run"
        rc, stdout, _ = run_cli(
            capsys,
            "train", "--config", str(config), "--epochs", "2", "--out", str(out_dir),
        )
        assert rc == 0
        summary = json.loads(stdout)
        assert summary["arch"] == "LN-LR"
        assert summary["head"] == "invariant-scalar"
        assert summary["epochs"] == 2, "the flag must override the config key"
        assert np.isfinite(summary["final_train_loss"])
        for name in ("final.ckpt", "history.csv", "config.json"):
            assert (out_dir / name).exists()

    def test_unknown_config_key(self, tmp_path, capsys):
        config = tmp_path / "cfg.json"
        config.write_text(json.dumps({"dataset": "x.bin", "arch": "MLP", "momentum": 0.9}))
        rc, _, stderr = run_cli(capsys, "train", "--config", str(config))
        assert rc == 2
        assert "momentum" in stderr

    def test_missing_required_setting(self, capsys, tmp_path):
        data = self._gen(capsys, tmp_path)
        rc, _, stderr = run_cli(capsys, "train", "--dataset", str(data))
        assert rc == 2
        assert "arch" in stderr

    def test_missing_dataset_file(self, capsys, tmp_path):
        rc, _, stderr = run_cli(
            capsys, "train", "--dataset", str(tmp_path / "nope.bin"), "--arch", "MLP"
        )
        assert rc == 2
        assert "not found" in stderr

    @pytest.mark.filterwarnings("ignore:overflow:RuntimeWarning")
    def test_divergent_training_exits_one(self, tmp_path, capsys):
        """A non-finite loss is a property violation, not a usage error."""
        data = self._gen(capsys, tmp_path)
        rc, _, stderr = run_cli(
            capsys,
            "train", "--dataset", str(data), "--arch", "MLP",
            "--hidden", "8", "--epochs", "10", "--lr", "1e12",
            "--optimizer", "sgd",
        )
        assert rc == 1
        assert "training aborted" in stderr


class TestEval:
    def test_report_round_trip(self, tmp_path, capsys):
        data = tmp_path / "ds.bin"
        run_cli(capsys, "gen-data", "--task", "inv", "--out", str(data), "--n", "16")
        out_dir = tmp_path / "run"
        rc, _, _ = run_cli(
            capsys,
            "train", "--dataset", str(data), "--arch", "LN-LR", "--hidden", "4",
            "--epochs", "2", "--out", str(out_dir),
        )
        assert rc == 0
        report_path = tmp_path / "report.json"
        rc, stdout, _ = run_cli(
            capsys,
            "eval", "--checkpoint", str(out_dir / "final.ckpt"),
            "--dataset", str(data), "--report", str(report_path), "--n-actions", "3",
        )
        assert rc == 0
        report = json.loads(report_path.read_text())
        assert report["arch"] == "LN-LR"
        assert report["invariance_error"] < 1e-8
        assert report["accuracy"] is None
        assert report["counts"] == {"n_x": 16, "n_a": 3}
        csv_lines = report_path.with_suffix(".csv").read_text().splitlines()
        assert len(csv_lines) == 2
        assert "mse_id" in csv_lines[0]

    def test_missing_checkpoint(self, tmp_path, capsys):
        data = tmp_path / "ds.bin"
        run_cli(capsys, "gen-data", "--task", "inv", "--out", str(data), "--n", "4")
        rc, _, stderr = run_cli(
            capsys,
            "eval", "--checkpoint", str(tmp_path / "no.ckpt"),
            "--dataset", str(data), "--report", str(tmp_path / "r.json"),
        )
        assert rc == 2
        assert "checkpoint" in stderr

    def test_corrupt_checkpoint(self, tmp_path, capsys):
        data = tmp_path / "ds.bin"
        run_cli(capsys, "gen-data", "--task", "inv", "--out", str(data), "--n", "4")
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"\x00" * 64)
        rc, _, stderr = run_cli(
            capsys,
            "eval", "--checkpoint", str(bad),
            "--dataset", str(data), "--report", str(tmp_path / "r.json"),
        )
        assert rc == 2
        assert "cannot read checkpoint" in stderr


class TestVerify:
    def test_core_suite_passes(self, capsys):
        rc, stdout, _ = run_cli(capsys, "verify", "--suite", "core", "--trials", "50")
        assert rc == 0
        assert "PASS  core/killing_gram[sl3]=6tr(XY)" in stdout
        assert "6/6 checks passed" in stdout

    def test_fault_injection_exits_one(self, capsys):
        """Negative control: a deliberately broken layer must fail the suite."""
        rc, stdout, _ = run_cli(
            capsys, "verify", "--suite", "layers", "--trials", "20", "--inject-fault"
        )
        assert rc == 1
        assert "FAIL  layers/ln_linear[sl3]" in stdout

    def test_unknown_suite_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["verify", "--suite", "bogus"])
        assert excinfo.value.code == 2
        capsys.readouterr()


class TestReproduce:
    def test_table2_quick_shape(self, capsys):
        """Four model columns by three metric rows, as documented."""
        table_result(2, "quick")  # warm the shared cell cache
        rc, stdout, _ = run_cli(
            capsys,
            "reproduce", "--table", "2", "--budget", "quick",
            "--out", str(CELLS_ROOT), "--plot-data",
        )
        assert rc == 0, stdout
        matrix = (CELLS_ROOT / "table2_quick.csv").read_text().splitlines()
        assert matrix[0] == "metric,MLP,2LN-LR,2LN-LB,2LN-LR+2LN-LB"
        assert [line.split(",")[0] for line in matrix[1:]] == [
            "mse_id", "mse_conj", "equiv_err",
        ]
        assert all(len(line.split(",")) == 5 for line in matrix[1:])
        assert "[pass]" in stdout
        assert (CELLS_ROOT / "table2_quick_compare.csv").exists()
        curves = (CELLS_ROOT / "table2_quick_curves.csv").read_text().splitlines()
        assert curves[0] == "cell,epoch,train_loss"
        assert len(curves) > 4

    def test_table4_includes_ablation_column(self, capsys):
        table_result(4, "quick")
        rc, stdout, _ = run_cli(
            capsys,
            "reproduce", "--table", "4", "--budget", "quick", "--out", str(CELLS_ROOT),
        )
        assert rc == 0, stdout
        matrix = (CELLS_ROOT / "table4_quick.csv").read_text().splitlines()
        assert matrix[0] == "task,metric,LN-LBN"
        tasks = {line.split(",")[0] for line in matrix[1:]}
        assert tasks == {"invariant", "equivariant", "classification"}

    def test_cached_cells_are_reused(self, capsys):
        """A second run must not retrain: cell.csv mtimes stay put."""
        table_result(2, "quick")
        stamp = {
            p: p.stat().st_mtime_ns
            for p in (CELLS_ROOT / "cells").glob("equivariant-*/cell.csv")
        }
        assert stamp
        rc, _, _ = run_cli(
            capsys,
            "reproduce", "--table", "2", "--budget", "quick", "--out", str(CELLS_ROOT),
        )
        assert rc == 0
        for p, t in stamp.items():
            assert p.stat().st_mtime_ns == t


class TestParser:
    def test_unknown_subcommand_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as excinfo:
            cli.main(["frobnicate"])
        assert excinfo.value.code == 2
        capsys.readouterr()

    def test_value_errors_map_to_usage_exit(self, tmp_path, capsys):
        data = tmp_path / "ds.bin"
        run_cli(capsys, "gen-data", "--task", "inv", "--out", str(data), "--n", "4")
        rc, _, stderr = run_cli(
            capsys, "train", "--dataset", str(data), "--arch", "LN-XL"
        )
        assert rc == 2
        assert "error:" in stderr
