"""End-to-end CLI: every subcommand on small synthetic data."""

from __future__ import annotations

import csv
import json

import numpy as np
import pytest

from pcbgnn.cli import main


@pytest.fixture(scope="module")
def pullup_data(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "pullup.ndjson"
    rc = main(
        [
            "gen-data", "--task", "pull_up_down", "--count", "30", "--seed", "7",
            "--out", str(path), "--config", _small_config(tmp_path_factory),
        ]
    )
    assert rc == 0
    return path


def _small_config(tmp_path_factory):
    cfg_path = tmp_path_factory.mktemp("cfg") / "gen.json"
    cfg_path.write_text(json.dumps({"size_mu": float(np.log(22)), "size_sigma": 0.15}))
    return str(cfg_path)


def _read_csv(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_gen_data_determinism(tmp_path, pullup_data):
    out2 = tmp_path / "again.ndjson"
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"size_mu": float(np.log(22)), "size_sigma": 0.15}))
    rc = main(["gen-data", "--task", "pull_up_down", "--count", "30", "--seed", "7", "--out", str(out2), "--config", str(cfg)])
    assert rc == 0
    assert out2.read_bytes() == pullup_data.read_bytes()


def test_gen_data_rejects_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"bogus": 1}')
    rc = main(["gen-data", "--task", "rc_filter", "--count", "1", "--seed", "0", "--out", str(tmp_path / "x"), "--config", str(cfg)])
    assert rc != 0
    assert "error:" in capsys.readouterr().err


def test_stats_command(tmp_path, pullup_data, capsys):
    out = tmp_path / "stats.csv"
    rc = main(["stats", "--data", str(pullup_data), "--out", str(out)])
    assert rc == 0
    rows = _read_csv(out)
    labels = [r[0] for r in rows[1:]]
    assert labels == [
        "No. of Graph Samples",
        "Avg. No. of Nodes",
        "Min. No. of Nodes",
        "Max. No. of Nodes",
        "Avg. No. of Edges",
        "Avg. No. of Added Nodes",
    ]
    assert rows[1][1] == "30"


def test_embed_sim_command(tmp_path, capsys):
    netlist = tmp_path / "one.ndjson"
    doc = {
        "name": "fig",
        "nets": [{"id": 0, "name": "GND"}, {"id": 1, "name": "+5V"}],
        "symbols": [{"id": 0, "name": "C17"}, {"id": 1, "name": "C18"}, {"id": 2, "name": "IC1"}],
        "pins": [
            {"symbol_id": 0, "net_id": 0, "pin_name": "1"},
            {"symbol_id": 1, "net_id": 0, "pin_name": "1"},
            {"symbol_id": 2, "net_id": 1, "pin_name": "VDD"},
        ],
    }
    netlist.write_text(json.dumps(doc) + "\n")
    out = tmp_path / "sim.csv"
    assert main(["embed-sim", "--netlist", str(netlist), "--out", str(out)]) == 0
    rows = _read_csv(out)
    names = rows[0][1:]
    assert names == ["GND", "+5V", "C17", "C18", "IC1"]
    mat = np.array([[float(x) for x in r[1:]] for r in rows[1:]])
    assert np.allclose(mat, mat.T)
    assert np.allclose(np.diag(mat), 1.0)
    i17, i18, i5 = names.index("C17"), names.index("C18"), names.index("+5V")
    assert mat[i17, i18] > mat[i17, i5]


@pytest.fixture(scope="module")
def trained(tmp_path_factory, pullup_data):
    d = tmp_path_factory.mktemp("train")
    ckpt = d / "model.json"
    metrics = d / "metrics.csv"
    rc = main(
        [
            "train", "--data", str(pullup_data), "--task", "pull_up_down",
            "--backbone", "gin", "--layers", "1", "--hidden", "16", "--theta", "0.1",
            "--lr", "0.001", "--seed", "3", "--batch-size", "8", "--patience", "3",
            "--max-epochs", "6", "--folds", "1",
            "--out-checkpoint", str(ckpt), "--metrics-out", str(metrics),
        ]
    )
    assert rc == 0
    return ckpt, metrics, pullup_data


def test_train_emits_checkpoint_and_metrics(trained):
    ckpt, metrics, _ = trained
    doc = json.loads(ckpt.read_text())
    assert doc["format_version"] == 1
    assert doc["model_spec"]["backbone"] == "gin"
    assert "parameters" in doc and doc["metadata"]["train_config"]["seed"] == 3
    rows = _read_csv(metrics)
    assert rows[0][0] == "fold"
    assert any(r[0] == "mean" for r in rows)


def test_eval_matches_training_test_metric(tmp_path, trained):
    ckpt, metrics, data = trained
    report = tmp_path / "report.csv"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--report", str(report)]) == 0
    recorded = json.loads(ckpt.read_text())["metadata"]["test_metric"]
    rows = _read_csv(report)
    value = float([r for r in rows[1:] if r[0] == "0"][0][-1])
    assert abs(value - recorded) < 1e-6


def test_eval_sweep_theta(tmp_path, trained):
    ckpt, _, data = trained
    report = tmp_path / "report.csv"
    assert main(["eval", "--checkpoint", str(ckpt), "--data", str(data), "--report", str(report), "--sweep-theta"]) == 0
    rows = _read_csv(str(report) + ".theta_sweep.csv")
    assert rows[0] == ["theta", "auprc_mean", "auprc_std"]
    assert [r[0] for r in rows[1:]] == ["0.0", "0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7"]


def test_predict_command(tmp_path, trained, pullup_data):
    ckpt, _, data = trained
    single = tmp_path / "one.ndjson"
    single.write_text(data.read_text().splitlines()[0] + "\n")
    out = tmp_path / "suggestions.csv"
    assert main(["predict", "--checkpoint", str(ckpt), "--netlist", str(single), "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert rows[0] == ["net_a", "net_b", "output", "score"]
    scores = [float(r[3]) for r in rows[1:]]
    assert scores == sorted(scores, reverse=True)
    # ties broken lexicographically by (net_a, net_b)
    for r1, r2 in zip(rows[1:], rows[2:]):
        if r1[3] == r2[3]:
            assert (r1[0], r1[1]) <= (r2[0], r2[1])


def test_predict_high_theta_empty_suggestions(tmp_path, trained, pullup_data):
    ckpt, _, data = trained
    doc = json.loads(ckpt.read_text())
    doc["model_spec"]["theta"] = 0.7
    # neutralize the pre-filter so every probability is exactly 0.5 < 0.7
    for name, entry in doc["parameters"].items():
        if name.startswith("prefilter"):
            entry["values"] = [0.0] * len(entry["values"])
    ckpt2 = tmp_path / "high_theta.json"
    ckpt2.write_text(json.dumps(doc))
    single = tmp_path / "one.ndjson"
    single.write_text(data.read_text().splitlines()[0] + "\n")
    out = tmp_path / "empty.csv"
    assert main(["predict", "--checkpoint", str(ckpt2), "--netlist", str(single), "--out", str(out)]) == 0
    rows = _read_csv(out)
    assert rows == [["net_a", "net_b", "output", "score"]]


def test_grid_command(tmp_path, pullup_data):
    space = tmp_path / "space.json"
    space.write_text(
        json.dumps(
            {
                "backbones": ["mlp_only", "gin"],
                "num_layers": [1],
                "hidden_dims": [16],
                "heads": [1],
                "learning_rates": [0.001],
                "thetas": [0.1],
            }
        )
    )
    report = tmp_path / "grid.csv"
    rc = main(
        [
            "grid", "--space", str(space), "--data", str(pullup_data), "--task", "pull_up_down",
            "--report", str(report), "--seed", "3", "--batch-size", "8", "--patience", "2",
            "--max-epochs", "3", "--folds", "1", "--lr", "0.001",
        ]
    )
    assert rc == 0
    rows = _read_csv(report)
    assert rows[0][0] == "rank"
    assert len(rows) == 3  # header + 2 trials
    vals = [float(r[8]) for r in rows[1:]]
    assert vals == sorted(vals, reverse=True)


def test_unknown_task_rejected(capsys):
    with pytest.raises(SystemExit):
        main(["gen-data", "--task", "nonsense", "--count", "1", "--seed", "0", "--out", "x"])


def test_missing_file_is_clean_error(tmp_path, capsys):
    rc = main(["stats", "--data", str(tmp_path / "missing.ndjson")])
    assert rc == 1
    assert capsys.readouterr().err.startswith("error:")


def test_train_eval_csv_determinism(tmp_path, pullup_data):
    outs = []
    for run in range(2):
        ckpt = tmp_path / f"m{run}.json"
        metrics = tmp_path / f"metrics{run}.csv"
        rc = main(
            [
                "train", "--data", str(pullup_data), "--task", "pull_up_down",
                "--backbone", "mlp_only", "--layers", "0", "--hidden", "16", "--theta", "0.0",
                "--lr", "0.001", "--seed", "11", "--batch-size", "8", "--patience", "2",
                "--max-epochs", "3", "--folds", "1",
                "--out-checkpoint", str(ckpt), "--metrics-out", str(metrics),
            ]
        )
        assert rc == 0
        outs.append((ckpt.read_bytes(), metrics.read_bytes()))
    assert outs[0] == outs[1]
