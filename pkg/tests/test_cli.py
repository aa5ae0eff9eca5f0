import json
from pathlib import Path

import numpy as np
import pytest

from qrul import cli
from qrul.qdi import build_qdi_circuit

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.fixture(scope="module")
def cache(synthetic_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("cache")
    assert cli.main(["prepare", "--data-dir", str(synthetic_dir), "--seed", "0", "--out", str(out)]) == 0
    return out


def test_prepare_summary_and_manifest(cache, capsys, synthetic_dir, tmp_path):
    assert (cache / "dataset.npz").exists()
    m = json.loads((cache / "manifest.json").read_text())
    assert m["seeds"] == [0] and set(m["input_hashes"]) == {"train", "test", "rul"}
    assert m["config"]["window"] == 30
    assert cli.main(["prepare", "--data-dir", str(synthetic_dir), "--seed", "0", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    assert '"n_kept_channels": 14' in out and '"train_units_total": 20' in out


def test_prepare_uses_env_and_reports_missing_file(tmp_path, monkeypatch, capsys):
    (tmp_path / "train_FD001.txt").write_text("")
    (tmp_path / "test_FD001.txt").write_text("")
    monkeypatch.setenv("QRUL_DATA_DIR", str(tmp_path))
    assert cli.main(["prepare", "--seed", "1", "--out", str(tmp_path / "c")]) == 2
    assert "RUL_FD001.txt" in capsys.readouterr().err


def test_generated_seed_is_printed_and_stored(cache, tmp_path, capsys):
    assert cli.main(["analyze", "--what", "essentiality", "--samples", "10", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    seed = int(out.split("using generated seed ")[1].split()[0])
    assert json.loads((tmp_path / "manifest.json").read_text())["seeds"] == [seed]


def test_train_smoke_and_determinism(cache, tmp_path, capsys):
    args = ["train", "--dataset", str(cache), "--model", "rnn", "--hidden", "4", "--dense", "4",
            "--seeds", "1", "--seed", "0", "--epochs", "1", "--batch", "64", "--jobs", "1"]
    assert cli.main(args + ["--out", str(tmp_path / "a")]) == 0
    assert cli.main(args + ["--out", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a" / "seed-0" / "curves.csv").exists()
    assert (tmp_path / "a" / "summary.json").read_bytes() == (tmp_path / "b" / "summary.json").read_bytes()
    ma = json.loads((tmp_path / "a" / "manifest.json").read_text())
    mb = json.loads((tmp_path / "b" / "manifest.json").read_text())
    assert ma["run_hash"] == mb["run_hash"]


def test_parameter_count_printed_for_baseline(cache, tmp_path, capsys):
    cfg = CONFIGS / "rnn-20-16-4-8-16.json"
    assert cli.main(["train", "--dataset", str(cache), "--config", str(cfg), "--seeds", "1", "--seed", "0",
                     "--epochs", "0", "--out", str(tmp_path), "--jobs", "1"]) == 0
    assert "RNN-20-16-4-8-16: 6793 trainable parameters" in capsys.readouterr().out


def test_config_precedence(cache, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"model": {"kind": "rnn", "hidden": [3], "dense": []}, "epochs": 2, "lr": 0.01}))
    args = cli.build_parser().parse_args(["train", "--dataset", str(cache), "--config", str(cfg), "--epochs", "1"])
    from qrul.data import PreparedDataset

    tc = cli.build_train_config(args, PreparedDataset.load(cache / "dataset.npz"))
    assert tc.epochs == 1 and tc.lr == 0.01 and tc.batch_size == 128
    assert tc.model["hidden"] == [3] and tc.model["n_features"] == 14


def test_train_errors(cache, tmp_path, capsys):
    assert cli.main(["train", "--dataset", str(tmp_path / "none")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert cli.main(["train", "--dataset", str(cache), "--config", str(bad)]) == 2
    nan = ["train", "--dataset", str(cache), "--model", "rnn", "--hidden", "2", "--dense", "2", "--seeds", "1",
           "--seed", "0", "--epochs", "1", "--lr", "inf", "--jobs", "1", "--out", str(tmp_path / "nan")]
    with pytest.warns(RuntimeWarning):
        assert cli.main(nan) == 3


def test_evaluate_and_report(cache, tmp_path, capsys):
    base = ["train", "--dataset", str(cache), "--hidden", "2", "--dense", "2", "--seeds", "2", "--seed", "0",
            "--epochs", "1", "--jobs", "1"]
    assert cli.main(base + ["--model", "rnn", "--out", str(tmp_path / "rnn")]) == 0
    assert cli.main(base + ["--model", "hqrnn", "--out", str(tmp_path / "hq")]) == 0
    assert cli.main(["evaluate", "--run", str(tmp_path / "rnn")]) == 0
    ev = json.loads((tmp_path / "rnn" / "evaluation.json").read_text())[0]
    summ = json.loads((tmp_path / "rnn" / "summary.json").read_text())[0]
    assert ev["mean_rmse"] == pytest.approx(summ["mean_rmse"], abs=1e-12)
    out = tmp_path / "report.csv"
    assert cli.main(["report", "--runs", str(tmp_path / "rnn"), str(tmp_path / "hq"), str(tmp_path / "gone"),
                     "--out", str(out)]) == 0
    rows = json.loads(out.with_suffix(".json").read_text())
    measured = [r for r in rows if r["source"] == "measured"]
    assert len(measured) == 2
    assert [r["source"] for r in rows].count("incomplete") == 1
    paper = {r["model"]: r for r in rows if r["source"] == "paper"}
    assert paper["HQRNN"]["mean_rmse"] == 15.46
    assert cli.main(["report", "--out", str(out)]) == 2


def test_analyze_commands(tmp_path, capsys):
    assert cli.main(["analyze", "--what", "fourier", "--samples", "50", "--seed", "0", "--out", str(tmp_path / "f")]) == 0
    assert "/161 accessible" in capsys.readouterr().out
    assert (tmp_path / "f" / "fourier_coefficients.csv").exists()
    assert cli.main(["analyze", "--what", "fourier", "--samples", "10", "--seed", "0", "--all-outputs",
                     "--out", str(tmp_path / "fa")]) == 0
    assert (tmp_path / "fa" / "output-3" / "fourier_coefficients.csv").exists()
    assert cli.main(["analyze", "--what", "essentiality", "--samples", "100", "--seed", "0",
                     "--out", str(tmp_path / "e")]) == 0
    assert "8/8 parameters essential" in capsys.readouterr().out
    assert cli.main(["analyze", "--what", "fisher", "--n-theta", "10", "--n-x", "10", "--seed", "0",
                     "--out", str(tmp_path / "fi"), "--jobs", "1"]) == 0
    for name in ("fisher_eigenvalues.csv", "fisher_avg_matrix.csv", "manifest.json"):
        assert (tmp_path / "fi" / name).exists()


def test_analyze_equivalence(tmp_path, capsys):
    spec = build_qdi_circuit()
    (tmp_path / "same.json").write_text(spec.to_json())
    assert cli.main(["analyze", "--what", "equivalence", "--candidate", str(tmp_path / "same.json"),
                     "--seed", "0", "--out", str(tmp_path / "eq")]) == 0
    assert json.loads((tmp_path / "eq" / "equivalence.json").read_text())["equivalent"] is True
    assert cli.main(["analyze", "--what", "equivalence", "--seed", "0", "--out", str(tmp_path / "x")]) == 2
    assert cli.main(["analyze", "--what", "fisher", "--circuit", str(tmp_path / "missing.json")]) == 2


def test_prepare_no_rul_cap(synthetic_dir, tmp_path):
    from qrul.data import PreparedDataset, read_rul

    assert cli.main(["prepare", "--data-dir", str(synthetic_dir), "--seed", "0", "--no-rul-cap",
                     "--out", str(tmp_path)]) == 0
    ds = PreparedDataset.load(tmp_path / "dataset.npz")
    np.testing.assert_array_equal(ds.test.y, read_rul(synthetic_dir / "RUL_FD001.txt"))
    assert json.loads((tmp_path / "manifest.json").read_text())["config"]["cap_test"] is False
