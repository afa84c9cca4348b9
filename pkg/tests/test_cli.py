"""Config parsing, experiment runners, exit codes, and output determinism."""

import os
import subprocess
import sys

import numpy as np
import pytest

from mfgkit.cli import main, parse_config, run
from mfgkit.errors import ConfigError

SCALAR_MODEL = """
model.A = [[0.0]]
model.A_bar = [[0.0]]
model.B = [[1.0]]
model.Q = [[0.0]]
model.Q_bar = [[1.0]]
model.Q_T = [[0.0]]
model.Q_bar_T = [[0.0]]
model.S = [[0.0]]
model.S_T = [[0.0]]
model.R = [[1.0]]
model.sigma = [[0.3]]
model.beta = 0.5
"""

GRID = """
grid.t_start = 0.0
grid.t_end = 1.0
grid.num_steps = 2000
"""


def verify_config(extra="", num_samples=20):
    return (f"{GRID}\nseed = 42\nnum_samples = {num_samples}\n"
            f"m1_samples = [0.5, 1.0, 2.0]\n{SCALAR_MODEL}\n{extra}")


def test_parse_config_basics():
    cfg = parse_config("a = 1\nb.c = [1, 2]\n# comment\n\nd = hello\n")
    assert cfg == {"a": 1, "b": {"c": [1, 2]}, "d": "hello"}
    with pytest.raises(ConfigError):
        parse_config("novalue\n")
    with pytest.raises(ConfigError):
        parse_config("a = 1\na = 2\n")


def test_unknown_key_rejected(tmp_path):
    cfg = parse_config(verify_config("gamma_mode = 3\n"))
    with pytest.raises(ConfigError) as err:
        run("mfc-verify", cfg, tmp_path)
    assert "gamma_mode" in str(err.value)


def test_missing_key_rejected(tmp_path):
    cfg = parse_config(f"{GRID}\nseed = 1\n{SCALAR_MODEL}")
    with pytest.raises(ConfigError) as err:
        run("mfc-verify", cfg, tmp_path)
    assert "m1_samples" in str(err.value)


def test_experiment_name_mismatch(tmp_path):
    cfg = parse_config(verify_config("experiment = systemic\n"))
    with pytest.raises(ConfigError):
        run("mfc-verify", cfg, tmp_path)


def test_mfc_verify_writes_small_residuals(tmp_path):
    cfg = parse_config(verify_config(num_samples=100))
    assert run("mfc-verify", cfg, tmp_path) == 0
    lines = (tmp_path / "mfc_residuals.csv").read_text().splitlines()
    assert lines[0].startswith("#") and "seed=42" in lines[0]
    header = lines[1].split(",")
    idx = header.index("residual")
    residuals = [abs(float(line.split(",")[idx])) for line in lines[2:]]
    assert len(residuals) == 100
    assert max(residuals) <= 1e-6


def test_riccati_bench(tmp_path):
    cfg = parse_config(f"{GRID}\nseed = 0\n")
    assert run("riccati-bench", cfg, tmp_path) == 0
    lines = (tmp_path / "riccati_bench.csv").read_text().splitlines()
    rows = [line.split(",") for line in lines[2:]]
    errs = {int(r[0]): float(r[1]) for r in rows}
    assert errs[10000] <= 1e-8
    assert 14.0 <= errs[1000] / errs[2000] <= 18.0


def test_fbsde_check(tmp_path):
    cfg = parse_config(f"{GRID}\nseed = 3\ny0 = [0.8]\n{SCALAR_MODEL}")
    assert run("fbsde-check", cfg, tmp_path) == 0
    lines = (tmp_path / "fbsde_check.csv").read_text().splitlines()
    gaps = [float(line.split(",")[-1]) for line in lines[2:]]
    assert max(gaps) <= 1e-4


def test_finite_nash_sweep(tmp_path):
    cfg = parse_config(f"{GRID}\nseed = 5\nN_values = [2, 8]\n{SCALAR_MODEL}")
    assert run("finite-nash-sweep", cfg, tmp_path) == 0
    assert (tmp_path / "finite_nash_sweep.csv").exists()


def test_prop61_experiment(tmp_path):
    cfg = parse_config("seed = 6\nK_values = [3, 6]\n")
    assert run("prop61", cfg, tmp_path) == 0
    lines = (tmp_path / "prop61.csv").read_text().splitlines()
    assert len(lines) == 2 + 6  # three identities per K


def test_systemic_experiment(tmp_path):
    cfg = parse_config(
        "grid.t_start = 0.0\ngrid.t_end = 1.0\ngrid.num_steps = 200\n"
        "seed = 7\nN = 50\nreplications = 2\n"
        "model.alpha = 1.0\nmodel.lam = 0.5\nmodel.mu = 1.0\nmodel.c = 0.3\n"
        "model.sigma = 0.2\nmodel.beta = 0.4\n")
    assert run("systemic", cfg, tmp_path) == 0
    assert (tmp_path / "systemic_paths.csv").exists()
    summary = (tmp_path / "systemic_summary.txt").read_text()
    assert "stationary_value" in summary


def test_byte_identical_reruns(tmp_path):
    cfg_text = verify_config()
    (tmp_path / "cfg").write_text(cfg_text)
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        code = main(["mfc-verify", "--config", str(tmp_path / "cfg"), "--out", str(out)])
        assert code == 0
        outs.append((out / "mfc_residuals.csv").read_bytes())
    assert outs[0] == outs[1]


def test_byte_identical_across_thread_counts(tmp_path):
    (tmp_path / "cfg").write_text(verify_config())
    bodies = []
    for threads in ("1", "4"):
        out = tmp_path / f"t{threads}"
        env = dict(os.environ, MFGKIT_THREADS=threads)
        proc = subprocess.run(
            [sys.executable, "-m", "mfgkit.cli", "mfc-verify", "--config",
             str(tmp_path / "cfg"), "--out", str(out)],
            env=env, capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        bodies.append((out / "mfc_residuals.csv").read_bytes())
    assert bodies[0] == bodies[1]


def test_exit_code_config_error(tmp_path):
    (tmp_path / "bad.cfg").write_text(verify_config("gamma_mode = 3\n"))
    code = main(["mfc-verify", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path)])
    assert code == 2
    code = main(["mfc-verify", "--config", str(tmp_path / "missing.cfg")])
    assert code == 2


def test_exit_code_numerical_error(tmp_path):
    # negative running cost drives the quadratic flow to finite-time escape
    blow = verify_config().replace("model.Q = [[0.0]]", "model.Q = [[-80.0]]")
    blow = blow.replace("grid.t_end = 1.0", "grid.t_end = 1.0")
    (tmp_path / "blow.cfg").write_text(blow)
    code = main(["mfc-verify", "--config", str(tmp_path / "blow.cfg"), "--out", str(tmp_path)])
    assert code == 3


def test_lq_params_config_round_trip():
    from mfgkit.cli import _build_lq_model, lq_params_to_config
    from conftest import coupled_2d_params

    p = coupled_2d_params()
    text = lq_params_to_config(p)
    cfg = parse_config(text)
    p2 = _build_lq_model(cfg["model"], horizon=p.horizon)
    for key in ("A", "A_bar", "B", "Q", "Q_bar", "Q_T", "Q_bar_T", "S", "S_T",
                "R", "sigma"):
        assert np.array_equal(getattr(p, key), getattr(p2, key)), key
    assert p.beta == p2.beta


def test_seed_override_changes_output(tmp_path):
    (tmp_path / "cfg").write_text(verify_config())
    out1, out2 = tmp_path / "s1", tmp_path / "s2"
    main(["mfc-verify", "--config", str(tmp_path / "cfg"), "--out", str(out1)])
    main(["mfc-verify", "--config", str(tmp_path / "cfg"), "--seed", "99",
          "--out", str(out2)])
    a = (out1 / "mfc_residuals.csv").read_text().splitlines()
    b = (out2 / "mfc_residuals.csv").read_text().splitlines()
    assert a[2:] != b[2:]
