import json
import subprocess
import sys

import pytest

from selectmix.cli import main
from selectmix.crossval import read_mismatch, read_oof_csv
from selectmix.datasets import read_csv
from selectmix.harness import RESULTS_HEADER
from selectmix.theory import REPORT_FIELDS

SMALL = ["--dataset", "gaussian", "--epochs", "3", "--batch-size", "64", "--test-split", "100"]


def test_inject_noise(tmp_path):
    out = tmp_path / "noisy.csv"
    assert main(["inject-noise", *SMALL, "--noise-rate", "0.4", "--seed", "3", "--out", str(out)]) == 0
    ds = read_csv(out)
    assert len(ds) == 1000
    assert 0.3 < ds.flip_mask.mean() < 0.5


def test_oof_predict(tmp_path):
    out = tmp_path / "oof.csv"
    assert main(["oof-predict", *SMALL, "--noise-rate", "0.2", "--kfold", "3", "--out", str(out)]) == 0
    oof = read_oof_csv(out)
    m = read_mismatch(tmp_path / "oof.mismatch.txt", len(oof))
    assert len(oof) == 1000 and 0 < m.rho < 0.5


def test_train_writes_row_and_report(tmp_path, capsys):
    report = tmp_path / "report.json"
    assert main(["train", *SMALL, "--strategy", "mixup", "--alpha", "0.5", "--report-json", str(report)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == ",".join(RESULTS_HEADER)
    assert len(lines) == 2 and lines[1].startswith("mixup,symmetric,0,0.5,0,")
    assert len(json.loads(report.read_text())["per_epoch_test_acc"]) == 3


def test_train_from_config_file(tmp_path, capsys):
    cfg = {"dataset": "gaussian", "epochs": 2, "batch_size": 32, "test_split": 50,
           "strategy": {"kind": "selectmix", "alpha": 2.0}, "noise": {"kind": "asymmetric", "rate": 0.2},
           "kfold": 2, "synthetic": {"per_class_count": 100}}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    assert main(["train", "--config", str(path), "--seed", "4"]) == 0
    row = capsys.readouterr().out.splitlines()[1].split(",")
    assert row[:5] == ["selectmix", "asymmetric", "0.2", "2", "4"]
    assert row[7] != ""


def test_theory_check(tmp_path):
    out = tmp_path / "risk.json"
    assert main(["theory-check", "--draws", "20000", "--epochs", "5", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert tuple(doc) == REPORT_FIELDS
    assert doc["alpha"] == 1.0


def test_sweep(tmp_path):
    out = tmp_path / "sweep.csv"
    code = main(["sweep", *SMALL, "--strategy", "mixup", "--alphas", "0.5,2", "--seeds", "0,1", "--out", str(out)])
    assert code == 0
    rows = out.read_text().splitlines()
    assert rows[0] == ",".join(RESULTS_HEADER)
    assert len(rows) == 1 + 4 + 4


def test_sweep_reports_failures(tmp_path, capsys):
    code = main(["sweep", *SMALL, "--batch-size", "100000", "--alphas", "1", "--seeds", "0"])
    assert code == 1
    assert "failed" in capsys.readouterr().err


def test_bad_arguments():
    with pytest.raises(SystemExit):
        main(["train", "--strategy", "cutmix"])
    with pytest.raises(SystemExit):
        main([])


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "selectmix", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "theory-check" in proc.stdout
