import json
import os
import subprocess
import sys

import pytest

from qrthresh.cli import main
from qrthresh.harness import REPORT_FILES, read_csv

SMALL = ["--config", "default.cfg"]


@pytest.fixture()
def small_cfg(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text("N = 400\nn_r = 40\ntarget_n_c = 80\nS = 20\nthin = 2\nM = 2\ngamma_list = 0.05\n")
    return str(path)


def test_simulate_default_config(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", *SMALL, "--overlap", "L", "--seed", "7", "-o", str(out)]) == 0
    assert len(read_csv(out / "frame.csv")) == 4000
    stacked = read_csv(out / "stacked.csv")
    assert sum(r["z_indicator"] == "0" for r in stacked) == 400
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["resolved_config"]["overlap"] == ["L"]
    assert set(manifest) >= {"config_path", "resolved_config", "seed", "output_dir", "tool_version"}


def test_simulate_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert main(["simulate", "--overlap", "H", "--seed", "7", "-o", str(tmp_path / name)]) == 0
    for f in ("frame.csv", "stacked.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["simulate", "--config", str(tmp_path / "absent.cfg"), "-o", str(tmp_path)]) == 2
    assert "absent.cfg" in capsys.readouterr().err


def test_bad_config_value_exit_2(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("M = zero\n")
    assert main(["run", "--config", str(bad), "-o", str(tmp_path)]) == 2


def test_usage_error_exit_2():
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 2


def test_pipeline_subcommands(tmp_path, small_cfg):
    out = str(tmp_path)
    assert main(["simulate", "--config", small_cfg, "--overlap", "H", "--seed", "3", "-o", out]) == 0
    stacked = str(tmp_path / "stacked.csv")
    assert main(["fit", "--stacked", stacked, "--S", "25", "--seed", "1", "-o", out]) == 0
    draws = read_csv(tmp_path / "draws.csv")
    assert {r["draw_index"] for r in draws} == {str(s) for s in range(25)}
    assert (tmp_path / "run.log").read_text().strip()
    assert main(["threshold", "--stacked", stacked, "--draws", str(tmp_path / "draws.csv"), "-o", out]) == 0
    diag = read_csv(tmp_path / "threshold_diagnostics.csv")
    assert {"unit_id", "mean_percentile", "percentile_05", "percentile_95", "switch_fraction"} <= set(diag[0])
    assert main(["estimate", "--stacked", stacked, "--draws", str(tmp_path / "draws.csv"),
                 "--ref-draws", str(tmp_path / "ref_draws.csv"), "-o", out]) == 0
    est = read_csv(tmp_path / "estimates.csv")
    assert len(est) == 25 and set(est[0]) == {"draw_index", "mu_s", "n_retained"}


def test_fit_failure_exit_1(tmp_path):
    stacked = tmp_path / "stacked.csv"
    rows = ["# seed=0", "id,z_indicator,x1,y,pi_r_true_if_reference"]
    rows += [f"{i},0,{0.001 * i},1.0,0.2" for i in range(20)]
    rows += [f"{i},1,{1 + 0.001 * i},1.0," for i in range(20, 40)]
    stacked.write_text("\n".join(rows) + "\n")
    assert main(["fit", "--stacked", str(stacked), "--backend", "mle", "-o", str(tmp_path)]) == 1


def test_oracle_subcommand(tmp_path, capsys):
    assert main(["oracle", "--seed", "1", "-o", str(tmp_path)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["distance_to_argmin"] <= 1e-3
    assert len(read_csv(tmp_path / "variance_curve.csv")) > 0
    values = tmp_path / "e.txt"
    values.write_text("0.5 0.25\n")
    assert main(["oracle", "--propensities", str(values), "-o", str(tmp_path)]) == 0
    assert json.loads(capsys.readouterr().out)["cutoff"] == pytest.approx(1 / 6)


def test_run_dry_run_writes_nothing(tmp_path, capsys, small_cfg):
    out = tmp_path / "dry"
    assert main(["run", "--config", small_cfg, "--dry-run", "-o", str(out)]) == 0
    assert json.loads(capsys.readouterr().out)["M"] == 2
    assert not out.exists()


def test_run_single_variant(tmp_path, small_cfg):
    out = tmp_path / "one"
    assert main(["run", "--config", small_cfg, "--variants", "reference_sample_only", "--overlap", "H",
                 "--jobs", "1", "-o", str(out)]) == 0
    agg = read_csv(out / "report_aggregate.csv")
    assert [(r["variant"], r["iterations"]) for r in agg] == [("reference_sample_only", "2")]
    assert sorted(p.name for p in out.iterdir()) == sorted([*REPORT_FILES, "manifest.json"])


def test_run_manifest_replay_and_plots(tmp_path, small_cfg):
    first = tmp_path / "first"
    assert main(["run", "--config", small_cfg, "--jobs", "1", "--plots", "-o", str(first)]) == 0
    assert (first / "overlap.svg").exists() and (first / "metrics.svg").exists()
    second = tmp_path / "second"
    assert main(["run", "--manifest", str(first / "manifest.json"), "--jobs", "1", "-o", str(second)]) == 0
    for name in REPORT_FILES:
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_run_failure_removes_partial_output(tmp_path):
    cfg = tmp_path / "sep.cfg"
    cfg.write_text("N = 50\nn_r = 10\ntarget_n_c = 20\nS = 1\nbackend = mle\nM = 2\nseed = 2\noverlap = H\n")
    out = tmp_path / "failed"
    assert main(["run", "--config", str(cfg), "--jobs", "1", "-o", str(out)]) == 1
    assert list(out.iterdir()) == []


def test_env_output_dir_and_console_script(tmp_path):
    env = {**os.environ, "QRTHRESH_OUTPUT_DIR": str(tmp_path / "envout")}
    proc = subprocess.run([sys.executable, "-m", "qrthresh.cli", "oracle", "--n", "50"],
                          env=env, capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "envout" / "variance_curve.csv").exists()
