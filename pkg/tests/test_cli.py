"""CLI subcommands, exit codes, manifest/reproducibility contract."""

import csv
import io
import json
from contextlib import redirect_stdout

import pytest

from ssvi.cli import main

FAST = [
    "--set", "train.outer_steps=2",
    "--set", "train.inner_steps=10",
    "--set", "train.hidden=8,8",
    "--set", "data.n=200",
    "--set", "data.test_n=100",
]


def run_cli(argv):
    buf = io.StringIO()
    with redirect_stdout(buf):
        code = main(argv)
    return code, buf.getvalue()


class TestTrainCommand:
    def test_smoke_run_writes_artifacts(self, tmp_path):
        out = tmp_path / "run"
        code, stdout = run_cli(["train", *FAST, "--out", str(out)])
        assert code == 0
        assert (out / "metrics.jsonl").read_text().count("\n") == 2
        assert (out / "final.ckpt").exists()
        csv_lines = (out / "metrics.csv").read_text().splitlines()
        assert len(csv_lines) == 3 and csv_lines[0].startswith("step,beta,lr")
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["train.outer_steps"] == 2
        assert "started_at" in manifest
        result = json.loads((out / "result.json").read_text())
        assert result["status"] == "ok"
        assert json.loads(stdout)["final"]["step"] == 20

    def test_invalid_config_exits_2(self, tmp_path):
        code, _ = run_cli(["train", "--set", "train.sparsity=1.2",
                           "--out", str(tmp_path / "x")])
        assert code == 2

    def test_unknown_key_exits_2(self, tmp_path):
        code, _ = run_cli(["train", "--set", "train.bogus=1",
                           "--out", str(tmp_path / "x")])
        assert code == 2

    def test_missing_idx_data_exits_3(self, tmp_path):
        code, _ = run_cli(["train", "--set", "data.kind=idx",
                           "--set", f"data.images={tmp_path}/a",
                           "--set", f"data.labels={tmp_path}/b",
                           "--set", f"data.test_images={tmp_path}/c",
                           "--set", f"data.test_labels={tmp_path}/d",
                           "--out", str(tmp_path / "x")])
        assert code == 3

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_abort_exits_4(self, tmp_path):
        code, _ = run_cli(["train", *FAST, "--set", "train.lr0=1e30",
                           "--out", str(tmp_path / "x")])
        assert code == 4
        result = json.loads((tmp_path / "x" / "result.json").read_text())
        assert result["status"] == "numerical-abort"

    def test_override_lands_in_manifest(self, tmp_path):
        out = tmp_path / "run"
        code, _ = run_cli(["train", *FAST, "--set", "train.criterion=snr_theta",
                           "--out", str(out)])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["train.criterion"] == "snr_theta"

    def test_config_file_plus_override(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("train.outer_steps = 2\ntrain.inner_steps = 10\n"
                       "train.hidden = 8,8\ndata.n = 200\ndata.test_n = 100\n")
        out = tmp_path / "run"
        code, _ = run_cli(["train", str(cfg), "--set", "train.seed=9",
                           "--out", str(out)])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["train.seed"] == 9

    def test_rerun_from_manifest_is_bit_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run_cli(["train", *FAST, "--out", str(a)])[0] == 0
        manifest = json.loads((a / "manifest.json").read_text())
        overrides = []
        for key, val in manifest["config"].items():
            if val is None:
                continue
            if isinstance(val, list):
                val = ",".join(str(v) for v in val)
            overrides += ["--set", f"{key}={val}"]
        assert run_cli(["train", *overrides, "--out", str(b)])[0] == 0
        assert (a / "metrics.jsonl").read_bytes() == (b / "metrics.jsonl").read_bytes()


class TestEvalCommand:
    def test_eval_checkpoint(self, tmp_path):
        out = tmp_path / "run"
        assert run_cli(["train", *FAST, "--out", str(out)])[0] == 0
        code, stdout = run_cli(["eval", str(out / "final.ckpt"), *FAST,
                                "--samples", "5"])
        assert code == 0
        payload = json.loads(stdout)
        assert payload["n_samples"] == 5
        assert 0.0 <= payload["acc"] <= 1.0

    def test_default_sample_count_is_five(self):
        from ssvi.cli import build_parser

        args = build_parser().parse_args(["eval", "x.ckpt"])
        assert args.samples == 5

    def test_corrupt_checkpoint_fails(self, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        code, _ = run_cli(["eval", str(bad)])
        assert code != 0

    def test_eval_matches_logged_final_accuracy(self, tmp_path):
        """Re-evaluating the final checkpoint reproduces the logged test
        accuracy up to MC noise of the 5-sample prediction."""
        out = tmp_path / "run"
        args = ["--set", "train.outer_steps=5", "--set", "train.inner_steps=40",
                "--set", "train.hidden=16,16", "--set", "data.n=600",
                "--set", "data.test_n=300"]
        code, stdout = run_cli(["train", *args, "--out", str(out)])
        assert code == 0
        logged = json.loads(stdout)["final"]["acc"]
        code, stdout = run_cli(["eval", str(out / "final.ckpt"), *args,
                                "--samples", "64", "--seed", "5"])
        assert code == 0
        fresh = json.loads(stdout)["acc"]
        se = (logged * (1 - logged) / 300) ** 0.5
        assert abs(fresh - logged) <= 3 * se + 0.02


class TestCriteriaTable:
    def test_header_and_reference_value(self):
        code, stdout = run_cli(["criteria-table", "--mu", "0", "--sigma", "1"])
        assert code == 0
        rows = list(csv.reader(io.StringIO(stdout)))
        assert rows[0] == ["mu", "sigma", "abs_mu", "snr_theta", "e_abs",
                           "snr_abs", "e_exp_abs", "snr_exp_abs"]
        e_abs = float(rows[1][4])
        assert abs(e_abs - 0.79788) < 1e-4

    def test_grid_size(self):
        code, stdout = run_cli(["criteria-table", "--mu", "0,1,2",
                                "--sigma", "0.5,1", "--lam", "0.5"])
        assert code == 0
        rows = list(csv.reader(io.StringIO(stdout)))
        assert len(rows) == 1 + 6

    def test_zero_sigma_rejected(self):
        code, _ = run_cli(["criteria-table", "--mu", "0", "--sigma", "0,1"])
        assert code == 2


class TestAblate:
    def test_sparsity_sweep_two_rows(self, tmp_path):
        out = tmp_path / "sweep"
        code, stdout = run_cli(["ablate", *FAST, "--axis", "sparsity",
                                "--values", "0.5,0.9", "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader((out / "combined.csv").open()))
        assert [r["value"] for r in rows] == ["0.5", "0.9"]
        assert all(r["status"] == "ok" for r in rows)
        ratios = [float(r["flops_ratio"]) for r in rows]
        assert ratios[1] < ratios[0]

    def test_criterion_sweep_all_six(self, tmp_path):
        out = tmp_path / "sweep"
        values = "abs_mu,snr_theta,e_abs,snr_abs,e_exp_abs,snr_exp_abs"
        code, _ = run_cli(["ablate", *FAST, "--axis", "criterion",
                           "--values", values, "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader((out / "combined.csv").open()))
        assert len(rows) == 6
        assert all(r["status"] == "ok" for r in rows)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_failed_leg_recorded_sweep_continues(self, tmp_path):
        out = tmp_path / "sweep"
        code, _ = run_cli(["ablate", *FAST, "--set", "train.lr0=1e30",
                           "--axis", "sparsity", "--values", "0.5,0.9",
                           "--out", str(out)])
        assert code == 0
        rows = list(csv.DictReader((out / "combined.csv").open()))
        assert len(rows) == 2
        assert all(r["status"] == "NonFiniteLossError" for r in rows)

    def test_bad_axis_exits_2(self, tmp_path):
        from ssvi.cli import build_parser

        with pytest.raises(SystemExit):
            build_parser().parse_args(["ablate", "--axis", "nope", "--values", "1"])
