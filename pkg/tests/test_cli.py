from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from marom.cli import main
from marom.core.csv_io import read_matrix, write_matrix


def _run(capsys, *argv: str) -> tuple[int, dict, str]:
    code = main(list(argv))
    captured = capsys.readouterr()
    lines = [line for line in captured.out.splitlines() if line.strip()]
    payload = json.loads(lines[-1]) if code == 0 else {}
    return code, payload, captured.err


@pytest.fixture
def beam_data(tmp_path, capsys) -> Path:
    out = tmp_path / "data"
    code, payload, _ = _run(
        capsys, "generate", "--n", "8", "--m", "16", "--test-size", "12", "--seed", "5", "--out", str(out)
    )
    assert code == 0
    assert (payload["n"], payload["m"], payload["test_size"]) == (8, 16, 12)
    return out


def test_generate_writes_three_datasets(beam_data):
    for name in ("hi", "lo", "test"):
        manifest = json.loads((beam_data / f"{name}.json").read_text())
        assert manifest["fidelity"] == name
    assert read_matrix(beam_data / "hi_snapshots.csv").shape == (201, 8)
    assert read_matrix(beam_data / "lo_snapshots.csv").shape == (41, 16)


def test_generate_is_deterministic(tmp_path, capsys):
    for name in ("a", "b"):
        code, _, _ = _run(capsys, "generate", "--n", "4", "--test-size", "3", "--seed", "2", "--out", str(tmp_path / name))
        assert code == 0
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()


def test_single_fidelity_train_and_evaluate_on_training_designs(beam_data, tmp_path, capsys):
    bundle = tmp_path / "sf"
    code, payload, _ = _run(
        capsys, "train", "--hi", str(beam_data / "hi.json"), "--single-fidelity", "--ric", "1.0", "--out", str(bundle)
    )
    assert code == 0
    assert payload["kind"] == "sfrom"
    assert payload["achieved_ric"] == pytest.approx(1.0)

    report_path = tmp_path / "report.json"
    code, payload, _ = _run(
        capsys,
        "evaluate",
        "--model",
        str(bundle),
        "--test",
        str(beam_data / "hi.json"),
        "--out",
        str(report_path),
        "--error-field",
        str(tmp_path / "err.csv"),
    )
    assert code == 0
    assert payload["e_norm"] <= 1e-3
    report = json.loads(report_path.read_text())
    assert report["n_test"] == 8
    assert report["denominator"] == "training"
    assert read_matrix(tmp_path / "err.csv").shape == (201, 8)


def test_marom_train_predict(beam_data, tmp_path, capsys):
    bundle = tmp_path / "ma"
    code, payload, _ = _run(
        capsys,
        "train",
        "--hi",
        str(beam_data / "hi.json"),
        "--lo",
        str(beam_data / "lo.json"),
        "--latent-dim-rule",
        "padded",
        "--seed",
        "7",
        "--out",
        str(bundle),
    )
    assert code == 0
    assert payload["kind"] == "marom"
    assert json.loads((bundle / "manifest.json").read_text())["config"]["seed"] == 7

    write_matrix(tmp_path / "designs.csv", [[10.0, 9.0], [1.0, 1.5], [0.5, 0.3], [0.5, 0.9]])
    code, payload, _ = _run(
        capsys, "predict", "--model", str(bundle), "--designs", str(tmp_path / "designs.csv"), "--out", str(tmp_path / "pred.csv")
    )
    assert code == 0
    assert (payload["designs"], payload["d"]) == (2, 201)
    assert read_matrix(tmp_path / "pred.csv").shape == (201, 2)


def test_predict_with_wrong_parameter_count(beam_data, tmp_path, capsys):
    bundle = tmp_path / "sf"
    assert _run(capsys, "train", "--hi", str(beam_data / "hi.json"), "--single-fidelity", "--out", str(bundle))[0] == 0
    write_matrix(tmp_path / "designs.csv", [[10.0], [1.0], [0.5]])
    code, _, err = _run(
        capsys, "predict", "--model", str(bundle), "--designs", str(tmp_path / "designs.csv"), "--out", str(tmp_path / "p.csv")
    )
    assert code == 2
    assert "DIMENSION_MISMATCH" in err
    assert "b=4" in err


def test_study_writes_table(tmp_path, capsys):
    config = {
        "n_values": [5],
        "tau_values": [2.0],
        "reps": 1,
        "test_size": 5,
        "seed": 3,
        "train": {"latent_dim_rule": "padded"},
    }
    config_path = tmp_path / "study.json"
    config_path.write_text(json.dumps(config))
    code, payload, _ = _run(capsys, "study", "--config", str(config_path), "--out", str(tmp_path / "study"))
    assert code == 0
    assert payload["rows"] == 1
    lines = (tmp_path / "study" / "study.csv").read_text().splitlines()
    assert lines[0] == "n,m,tau,e_norm_mean,e_norm_std,cost_cpusec,reps"
    assert lines[1].startswith("5,10,2,")


def test_invalid_study_config(tmp_path, capsys):
    config_path = tmp_path / "study.json"
    config_path.write_text(json.dumps({"n_values": [1]}))
    code, _, err = _run(capsys, "study", "--config", str(config_path), "--out", str(tmp_path / "s"))
    assert code == 2
    assert "INVALID_CONFIG" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["train", "--hi", "x.json", "--out", "o", "--bogus"],
        ["predict", "--model", "m"],
        ["generate", "--n", "0", "--out", "o"],
        ["frobnicate"],
    ],
)
def test_usage_errors_exit_one(capsys, argv):
    code, _, err = _run(capsys, *argv)
    assert code == 1
    assert "USAGE_ERROR" in err


def test_train_requires_lo_unless_single_fidelity(tmp_path, capsys):
    code, _, err = _run(capsys, "train", "--hi", str(tmp_path / "hi.json"), "--out", str(tmp_path / "m"))
    assert code == 1
    assert "--lo" in err


def test_invalid_ric_is_usage_error(beam_data, tmp_path, capsys):
    code, _, _ = _run(
        capsys, "train", "--hi", str(beam_data / "hi.json"), "--single-fidelity", "--ric", "1.5", "--out", str(tmp_path / "m")
    )
    assert code == 1


def test_missing_dataset_exits_two(tmp_path, capsys):
    code, _, err = _run(
        capsys, "train", "--hi", str(tmp_path / "absent.json"), "--single-fidelity", "--out", str(tmp_path / "m")
    )
    assert code == 2
    assert "MISSING_FILE" in err


def test_bad_log_level_exits_one(monkeypatch, tmp_path, capsys):
    monkeypatch.setenv("MAROM_LOG", "chatty")
    code, _, err = _run(capsys, "generate", "--n", "2", "--out", str(tmp_path / "d"))
    assert code == 1
    assert "MAROM_LOG" in err


def test_train_config_file_seed_and_jobs_survive_defaults(beam_data, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MAROM_JOBS", "3")
    config_path = tmp_path / "train.json"
    config_path.write_text(json.dumps({"seed": 42, "jobs": 2, "latent_dim_rule": "padded"}))
    common = ["train", "--hi", str(beam_data / "hi.json"), "--lo", str(beam_data / "lo.json"), "--config", str(config_path)]

    assert _run(capsys, *common, "--out", str(tmp_path / "a"))[0] == 0
    config = json.loads((tmp_path / "a" / "manifest.json").read_text())["config"]
    assert (config["seed"], config["jobs"], config["latent_dim_rule"]) == (42, 2, "padded")

    assert _run(capsys, *common, "--seed", "9", "--jobs", "1", "--out", str(tmp_path / "b"))[0] == 0
    config = json.loads((tmp_path / "b" / "manifest.json").read_text())["config"]
    assert (config["seed"], config["jobs"]) == (9, 1)


def test_train_without_config_uses_env_jobs_and_seed_zero(beam_data, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MAROM_JOBS", "2")
    assert _run(capsys, "train", "--hi", str(beam_data / "hi.json"), "--single-fidelity", "--out", str(tmp_path / "m"))[0] == 0
    config = json.loads((tmp_path / "m" / "manifest.json").read_text())["config"]
    assert (config["seed"], config["jobs"]) == (0, 2)


def test_train_and_predict_reruns_are_byte_identical(beam_data, tmp_path, capsys):
    write_matrix(tmp_path / "designs.csv", [[10.0, 9.0], [1.0, 1.5], [0.5, 0.3], [0.5, 0.9]])
    for name in ("a", "b"):
        bundle = tmp_path / name
        code, _, _ = _run(
            capsys,
            "train",
            "--hi",
            str(beam_data / "hi.json"),
            "--lo",
            str(beam_data / "lo.json"),
            "--latent-dim-rule",
            "padded",
            "--seed",
            "11",
            "--out",
            str(bundle),
        )
        assert code == 0
        code, _, _ = _run(
            capsys, "predict", "--model", str(bundle), "--designs", str(tmp_path / "designs.csv"), "--out", str(tmp_path / f"{name}.csv")
        )
        assert code == 0
    for path in sorted((tmp_path / "a").iterdir()):
        assert path.read_bytes() == (tmp_path / "b" / path.name).read_bytes()
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_train_drops_low_fidelity_repeat_of_linked_design(beam_data, tmp_path, capsys, monkeypatch):
    monkeypatch.setenv("MAROM_LOG", "warning")
    designs = read_matrix(beam_data / "lo_designs.csv")
    snapshots = read_matrix(beam_data / "lo_snapshots.csv")
    write_matrix(beam_data / "lo_designs.csv", np.hstack([designs, designs[:, [0]]]))
    write_matrix(beam_data / "lo_snapshots.csv", np.hstack([snapshots, snapshots[:, [0]]]))

    code, payload, err = _run(
        capsys,
        "train",
        "--hi",
        str(beam_data / "hi.json"),
        "--lo",
        str(beam_data / "lo.json"),
        "--latent-dim-rule",
        "padded",
        "--out",
        str(tmp_path / "ma"),
    )
    assert code == 0
    assert payload["kind"] == "marom"
    assert "duplicate_design_dropped" in err
