"""The command-line harness: every subcommand, exit codes, determinism."""

import json
import os

import numpy as np
import pytest
from helpers import tiny_config

from lossalign.cli import main
from lossalign.controller import PolicyNetwork
from lossalign.data import load_splits
from lossalign.reporting import load_report


@pytest.fixture()
def config_path(tmp_path):
    path = tmp_path / "run.json"
    path.write_text(json.dumps(tiny_config(master_seed=40).to_dict()))
    return str(path)


def run_files(out):
    return sorted(os.listdir(out))


def test_train_command(config_path, tmp_path, capsys):
    out = str(tmp_path / "run")
    code = main(["train", "--config", config_path, "--out", out])
    assert code == 0
    line = capsys.readouterr().out.strip()
    assert "arm=ala" in line and "final_test_metric=" in line
    assert run_files(out) == [
        "model.json", "phi.csv", "policy.json", "report.csv", "run.json",
    ]
    report = load_report(out)
    assert report.step_count() == 3
    PolicyNetwork.load(os.path.join(out, "policy.json"))  # valid checkpoint


def test_train_output_is_deterministic(config_path, tmp_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    assert main(["train", "--config", config_path, "--out", out_a]) == 0
    assert main(["train", "--config", config_path, "--out", out_b]) == 0
    for name in ("report.csv", "phi.csv", "policy.json", "model.json"):
        a = open(os.path.join(out_a, name), "rb").read()
        b = open(os.path.join(out_b, name), "rb").read()
        assert a == b, f"{name} differs between identical runs"


def test_seed_override_changes_results(config_path, tmp_path):
    out_a = str(tmp_path / "a")
    out_b = str(tmp_path / "b")
    main(["train", "--config", config_path, "--out", out_a])
    main(["train", "--config", config_path, "--seed", "99", "--out", out_b])
    a = open(os.path.join(out_a, "report.csv")).read()
    b = open(os.path.join(out_b, "report.csv")).read()
    assert a != b
    assert load_report(out_b).config.master_seed == 99


def test_baseline_command(config_path, tmp_path, capsys):
    out = str(tmp_path / "fixed")
    code = main(["baseline", "--mode", "fixed", "--config", config_path, "--out", out])
    assert code == 0
    assert "arm=fixed-loss" in capsys.readouterr().out
    # no policy is trained on the fixed arm
    assert "policy.json" not in run_files(out)


def test_transfer_command(config_path, tmp_path, capsys):
    src = str(tmp_path / "src")
    main(["train", "--config", config_path, "--out", src])
    out = str(tmp_path / "dst")
    code = main([
        "transfer", "--policy", os.path.join(src, "policy.json"),
        "--config", config_path, "--seed", "41", "--out", out,
    ])
    assert code == 0
    assert "arm=transfer-frozen" in capsys.readouterr().out
    # frozen transfer re-saves the source policy unchanged
    a = open(os.path.join(src, "policy.json"), "rb").read()
    b = open(os.path.join(out, "policy.json"), "rb").read()
    assert a == b


def test_ablate_flag_shrinks_policy_input(config_path, tmp_path):
    full = str(tmp_path / "full")
    cut = str(tmp_path / "cut")
    main(["train", "--config", config_path, "--out", full])
    main(["train", "--config", config_path, "--ablate", "history",
          "--ablate", "iter", "--out", cut])
    full_layout = json.load(open(os.path.join(full, "policy.json")))["meta"]["layout"]
    cut_layout = json.load(open(os.path.join(cut, "policy.json")))["meta"]["layout"]
    assert cut_layout["use_history"] is False
    assert cut_layout["use_iter"] is False
    assert full_layout["use_history"] is True


def test_export_curves_command(config_path, tmp_path, capsys):
    a = str(tmp_path / "a")
    b = str(tmp_path / "b")
    main(["train", "--config", config_path, "--out", a])
    main(["train", "--config", config_path, "--seed", "42", "--out", b])
    out = str(tmp_path / "curves")
    assert main(["export-curves", a, b, "--out", out]) == 0
    assert run_files(out) == ["curves_detail.csv", "curves_summary.csv", "phi_curves.csv"]


def test_gen_data_command(tmp_path, config_path, capsys):
    out = str(tmp_path / "splits.npz")
    assert main(["gen-data", "--config", config_path, "--seed", "7", "--out", out]) == 0
    splits = load_splits(out)
    assert splits.seed == 7
    assert splits.x_train.shape == (64, 6)

    # a bare dataset spec works too
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(tiny_config().dataset.to_dict()))
    out2 = str(tmp_path / "splits2.npz")
    assert main(["gen-data", "--config", str(spec_path), "--out", out2]) == 0


def test_analyze_surface_command(config_path, tmp_path, capsys):
    run = str(tmp_path / "run")
    main(["train", "--config", config_path, "--out", run])
    out = str(tmp_path / "surface")
    code = main([
        "analyze-surface", "--checkpoint", os.path.join(run, "model.json"),
        "--config", config_path, "--resolution", "5", "--out", out,
    ])
    assert code == 0
    assert "mean_curvature=" in capsys.readouterr().out
    summary = json.load(open(os.path.join(out, "surface.json")))
    assert summary["resolution"] == 5
    assert np.isfinite(summary["mean_curvature"])
    with open(os.path.join(out, "surface.csv")) as f:
        assert len(f.readlines()) == 1 + 25


def test_bad_config_exits_2(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"task": "regression"}))
    code = main(["train", "--config", str(bad), "--out", str(tmp_path / "x")])
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_missing_config_exits_2(tmp_path, capsys):
    code = main([
        "train", "--config", str(tmp_path / "absent.json"),
        "--out", str(tmp_path / "x"),
    ])
    assert code == 2


def test_bad_checkpoint_exits_1(config_path, tmp_path, capsys):
    missing = str(tmp_path / "no-policy.json")
    code = main([
        "transfer", "--policy", missing, "--config", config_path,
        "--out", str(tmp_path / "x"),
    ])
    assert code == 1
    assert "error:" in capsys.readouterr().err
