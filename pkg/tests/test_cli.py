"""CLI tests: validation, runs, equilibrium maps, sweeps, round-trips."""

import copy
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest
import yaml

from aidlab.cli import main
from aidlab.config import (apply_override, build_run, load_config,
                           sweep_values, validate)
from aidlab.errors import ConfigError, UnknownParameter
from aidlab.loop import read_trace_csv, run

CONFIGS = Path(__file__).resolve().parents[1] / "src" / "aidlab" / "configs"


def test_bundled_configs_validate():
    for path in sorted(CONFIGS.glob("*.yaml")):
        cfg = load_config(path)
        build_run(cfg)


def test_unknown_key_rejected(tmp_path):
    path = tmp_path / "bad.yaml"
    path.write_text("game:\n  kind: oscillator\n  bogus_key: 1\nresponse:\n  mode: nash\n")
    with pytest.raises(ConfigError, match="game.bogus_key"):
        load_config(path)


def test_override_unknown_key():
    cfg = load_config(CONFIGS / "oscillator.yaml")
    with pytest.raises(ConfigError, match="unknown config key"):
        apply_override(cfg, "designer.nonsense", "1")


def test_sweepable_parameters():
    assert sweep_values("designer.lambda", ["0", "0.1"]) == [0.0, 0.1]
    with pytest.raises(UnknownParameter):
        sweep_values("run.x_d", ["1"])


def test_cmd_run_writes_artifacts(tmp_path):
    out = tmp_path / "out"
    code = main(["run", str(CONFIGS / "bertrand_true.yaml"), "-o", str(out),
                 "--run.iterations", "40"])
    assert code == 0
    for name in ("trace.csv", "learner.csv", "design.csv", "summary.json",
                 "diagnostics.json", "components.csv"):
        assert (out / name).exists(), name
    cols = read_trace_csv(out / "trace.csv")
    assert len(cols["k"]) == 40
    summary = json.loads((out / "summary.json").read_text())
    assert summary["iterations"] == 40
    assert "config" in summary


def test_cmd_run_zero_iterations(tmp_path):
    out = tmp_path / "empty"
    code = main(["run", str(CONFIGS / "bertrand_true.yaml"), "-o", str(out),
                 "--run.iterations", "0"])
    assert code == 0
    cols = read_trace_csv(out / "trace.csv")
    assert len(cols["k"]) == 0


def test_cmd_run_bad_override_exit_code(tmp_path):
    code = main(["run", str(CONFIGS / "oscillator.yaml"), "-o",
                 str(tmp_path / "x"), "--designer.mystery", "3"])
    assert code == 2


def test_config_round_trip(tmp_path):
    """Echoed config reproduces an identical run."""
    out = tmp_path / "a"
    main(["run", str(CONFIGS / "bertrand_true.yaml"), "-o", str(out),
          "--run.iterations", "30"])
    summary = json.loads((out / "summary.json").read_text())
    echoed = summary["config"]
    path = tmp_path / "echo.yaml"
    path.write_text(yaml.safe_dump(echoed))
    out2 = tmp_path / "b"
    code = main(["run", str(path), "-o", str(out2)])
    assert code == 0
    a = read_trace_csv(out / "trace.csv")
    b = read_trace_csv(out2 / "trace.csv")
    for key in a:
        assert np.array_equal(a[key], b[key]), key


def test_cmd_equilibria_nominal(tmp_path):
    out = tmp_path / "basin.csv"
    code = main(["equilibria", str(CONFIGS / "oscillator.yaml"),
                 "--grid", "40", "-o", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()
    assert lines[0] == "start_x1,start_x2,basin_label,end_x1,end_x2,stable"
    assert len(lines) == 1601
    stable_labels = {line.split(",")[2] for line in lines[1:]
                     if line.split(",")[-1] == "1"}
    assert len(stable_labels) == 2


def test_cmd_equilibria_designed_unique(tmp_path):
    out = tmp_path / "basin_l0.csv"
    code = main(["equilibria", str(CONFIGS / "oscillator_l0.yaml"),
                 "--grid", "40", "--design", "-o", str(out)])
    assert code == 0
    lines = out.read_text().splitlines()[1:]
    stable_labels = {line.split(",")[2] for line in lines
                     if line.split(",")[-1] == "1"}
    assert len(stable_labels) == 1


def test_cmd_sweep_lambda(tmp_path):
    out = tmp_path / "sweep"
    code = main(["sweep", str(CONFIGS / "oscillator.yaml"),
                 "--param", "designer.lambda", "--values", "0,0.1",
                 "--seeds", "1", "-o", str(out),
                 "--run.iterations", "25"])
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3
    header = lines[0].split(",")
    assert header[0] == "param"


def test_sweep_seed_determinism(tmp_path):
    """Identical configs differ only through the seed column."""
    out = tmp_path / "s"
    main(["sweep", str(CONFIGS / "bertrand_true.yaml"), "--param", "run.seed",
          "--values", "3,3", "-o", str(out), "--run.iterations", "20"])
    lines = (out / "sweep.csv").read_text().splitlines()
    assert lines[1] == lines[2]


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "aidlab.cli", "validate",
                           str(CONFIGS / "oscillator.yaml")],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert '"kind": "oscillator"' in proc.stdout


def test_bundled_oscillator_learns_parameters(tmp_path):
    """The regularized oscillator run drives the estimates to the truth."""
    out = tmp_path / "osc"
    code = main(["run", str(CONFIGS / "oscillator.yaml"), "-o", str(out),
                 "--run.iterations", "800"])
    assert code == 0
    summary = json.loads((out / "summary.json").read_text())
    assert max(summary["final_theta_err"]) <= 1e-2


def test_bundled_nonlinear_runs_to_completion(tmp_path):
    out = tmp_path / "nl"
    code = main(["run", str(CONFIGS / "bertrand_nonlinear.yaml"), "-o",
                 str(out)])
    assert code == 0
    cols = read_trace_csv(out / "trace.csv")
    assert np.median(cols["xd_err"][-100:]) <= 0.5


def test_bundled_unregularized_panel_runs(tmp_path):
    out = tmp_path / "l0"
    code = main(["run", str(CONFIGS / "oscillator_l0.yaml"), "-o", str(out),
                 "--run.iterations", "200"])
    assert code == 0
    cols = read_trace_csv(out / "trace.csv")
    # Unregularized exact design parks the response on the target.
    assert cols["xd_err"][-1] <= 1e-3


def test_noisy_equilibrium_play_smoke(tmp_path):
    out = tmp_path / "noisy"
    code = main(["run", str(CONFIGS / "oscillator.yaml"), "-o", str(out),
                 "--run.iterations", "60", "--noise.sigma2", "0.0001"])
    assert code == 0


def test_sweep_parallel_jobs(tmp_path):
    out = tmp_path / "par"
    code = main(["sweep", str(CONFIGS / "bertrand_true.yaml"), "--param",
                 "run.seed", "--values", "1,2", "--jobs", "2", "-o", str(out),
                 "--run.iterations", "15"])
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    assert len(lines) == 3


def test_sweep_lambda_shrinks_incentive_norm(tmp_path):
    out = tmp_path / "lam"
    code = main(["sweep", str(CONFIGS / "oscillator.yaml"), "--param",
                 "designer.lambda", "--values", "0,0.1,0.5", "--seeds", "1",
                 "-o", str(out), "--run.iterations", "40"])
    assert code == 0
    lines = (out / "sweep.csv").read_text().splitlines()
    header = lines[0].split(",")
    col = header.index("final_alpha_norm")
    norms = [float(line.split(",")[col]) for line in lines[1:]]
    assert norms[0] >= norms[1] >= norms[2]
