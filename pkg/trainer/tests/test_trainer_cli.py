"""Command-line contract: exit codes, stdout JSON, stderr error JSON."""

import json
import subprocess
import sys

from dialogue_corpus import pref_record, sft_record, write_jsonl
from mechact_trainer.cli import main

FAST = ["--preset", "test", "--seed", "1"]


def run(capsys, argv):
    code = main(argv)
    captured = capsys.readouterr()
    return code, captured.out, captured.err


class TestTrainCommands:
    def test_imao_happy_path(self, tmp_path, capsys):
        data = write_jsonl(tmp_path / "imao.jsonl", [sft_record(i) for i in range(6)])
        out = tmp_path / "run"
        code, stdout, _ = run(
            capsys,
            ["imao", "--data", str(data), "--out", str(out), "--epochs", "1",
             "--learning-rate", "1e-3", *FAST],
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["phase"] == "imao"
        assert payload["n_records"] == 6
        assert (out / "checkpoint.pt").exists()
        assert (out / "metrics.json").exists()

    def test_maao_happy_path(self, tmp_path, capsys):
        records = [pref_record(i, "desirable") for i in range(3)]
        records += [pref_record(i, "undesirable") for i in range(3)]
        data = write_jsonl(tmp_path / "maao.jsonl", records)
        code, stdout, _ = run(
            capsys,
            ["maao", "--data", str(data), "--out", str(tmp_path / "run"),
             "--epochs", "1", "--learning-rate", "1e-4", *FAST],
        )
        assert code == 0
        payload = json.loads(stdout)
        assert payload["phase"] == "maao"
        assert payload["lambda_pos"] == 4 / 3
        assert payload["logratio_gap"] is not None

    def test_config_error_exits_2(self, tmp_path, capsys):
        data = write_jsonl(tmp_path / "imao.jsonl", [sft_record(0)])
        code, _, stderr = run(
            capsys,
            ["imao", "--data", str(data), "--out", str(tmp_path / "run"),
             "--epochs", "0", *FAST],
        )
        assert code == 2
        error = json.loads(stderr)
        assert error["error"] == "config"
        assert "epochs" in error["message"]

    def test_data_error_exits_3(self, tmp_path, capsys):
        bad = sft_record(0)
        bad["train_mask"] = [0] * len(bad["messages"])
        data = write_jsonl(tmp_path / "imao.jsonl", [bad])
        code, _, stderr = run(
            capsys,
            ["imao", "--data", str(data), "--out", str(tmp_path / "run"), *FAST],
        )
        assert code == 3
        error = json.loads(stderr)
        assert error["error"] == "data-format"
        assert "record 1" in error["message"]

    def test_maao_single_label_exits_3_without_flag(self, tmp_path, capsys):
        data = write_jsonl(
            tmp_path / "maao.jsonl", [pref_record(i, "desirable") for i in range(3)]
        )
        code, _, stderr = run(
            capsys,
            ["maao", "--data", str(data), "--out", str(tmp_path / "run"), *FAST],
        )
        assert code == 3
        assert "both labels" in json.loads(stderr)["message"]

    def test_maao_single_label_flag_overrides(self, tmp_path, capsys):
        data = write_jsonl(
            tmp_path / "maao.jsonl", [pref_record(i, "desirable") for i in range(3)]
        )
        code, stdout, _ = run(
            capsys,
            ["maao", "--data", str(data), "--out", str(tmp_path / "run"),
             "--epochs", "1", "--allow-single-label", *FAST],
        )
        assert code == 0
        assert json.loads(stdout)["logratio_gap"] is None


class TestVerifyCommand:
    def test_clean_data_exits_0(self, tmp_path, capsys):
        data = write_jsonl(tmp_path / "imao.jsonl", [sft_record(i) for i in range(4)])
        code, stdout, _ = run(capsys, ["verify", "--data", str(data), *FAST])
        assert code == 0
        assert json.loads(stdout)["ok"] is True

    def test_leaking_mask_exits_1(self, tmp_path, capsys):
        # mark the user message trainable: loads fine, fails the contract
        bad = sft_record(1)
        bad["train_mask"][1] = 1
        data = write_jsonl(tmp_path / "imao.jsonl", [sft_record(0), bad])
        code, stdout, _ = run(capsys, ["verify", "--data", str(data), *FAST])
        assert code == 1
        payload = json.loads(stdout)
        assert payload["ok"] is False
        assert all(v["record"] == 2 for v in payload["violations"])
        assert {v["role"] for v in payload["violations"]} == {"observation"}


def test_module_entry_point(tmp_path):
    data = write_jsonl(tmp_path / "imao.jsonl", [sft_record(i) for i in range(3)])
    proc = subprocess.run(
        [sys.executable, "-m", "mechact_trainer.cli", "verify", "--data", str(data),
         "--preset", "test"],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0
    assert json.loads(proc.stdout)["ok"] is True
