import json
import subprocess
import sys

import numpy as np
import pytest

from evsi_mm import io
from evsi_mm.cli import PIPELINE_FILES, main

TOY = """\
model = normal-toy
s = 3000
q = 12
n_min = 5
n_max = 60
m = 400
chains = 2
burn_in = 300
iterations = 400
"""


def _config(tmp_path, extra="", name="run.cfg"):
    p = tmp_path / name
    p.write_text(TOY + extra)
    return str(p)


@pytest.fixture(scope="module")
def toy_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = _config(root)
    out = root / "a"
    assert main(["evsi-curve", "--config", cfg, "--seed", "3", "--out", str(out)]) == 0
    return root, cfg, out


def test_pipeline_files(toy_run):
    _, _, out = toy_run
    assert sorted(p.name for p in out.iterdir()) == sorted(PIPELINE_FILES)
    for name in PIPELINE_FILES:
        raw = (out / name).read_bytes()
        assert b"\r" not in raw
        raw.decode("utf-8")
    man = json.loads((out / "manifest.json").read_text())
    assert man["seeds"]["master"] == 3
    assert man["config"]["model"] == "normal-toy"
    assert man["budget"]["model_evaluations"] <= 12 * 400 + 3000
    assert "not posterior credible intervals" in man["note"]
    grid, levels, _, evsi = io.read_curve(out / "evsi_curve.csv")
    np.testing.assert_array_equal(grid, np.arange(5, 61))
    assert 0.5 in levels and np.all(np.diff(evsi, axis=1) >= -1e-12)


def test_rerun_is_identical(toy_run):
    root, cfg, out = toy_run
    again = root / "b"
    assert main(["evsi-curve", "--config", cfg, "--seed", "3", "--out", str(again)]) == 0
    for name in PIPELINE_FILES:
        if name != "manifest.json":
            assert (out / name).read_bytes() == (again / name).read_bytes(), name
    a = json.loads((out / "manifest.json").read_text())
    b = json.loads((again / "manifest.json").read_text())
    a["config"].pop("out"), b["config"].pop("out")
    assert a == b


def test_resume_from_variance_points(toy_run, tmp_path):
    _, _, out = toy_run
    cfg = _config(tmp_path, f"variance_points = {out / 'variance_points.csv'}\n")
    resumed = tmp_path / "r"
    assert main(["evsi-curve", "--config", cfg, "--seed", "3", "--out", str(resumed)]) == 0
    assert (resumed / "evsi_curve.csv").read_bytes() == (out / "evsi_curve.csv").read_bytes()
    man = json.loads((resumed / "manifest.json").read_text())
    assert man["budget"]["posterior_evaluations"] == 0


def test_ingested_fitted_values(tmp_path):
    rng = np.random.default_rng(0)
    io.write_fitted_values(tmp_path / "f.csv", rng.normal(0, 1, 3000))
    cfg = _config(tmp_path, "fitted_values = f.csv\n")
    assert main(["evsi-curve", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["conditional"]["source"] == "ingested"


def test_fitted_values_wrong_shape(tmp_path):
    io.write_fitted_values(tmp_path / "f.csv", np.arange(10.0))
    cfg = _config(tmp_path, "fitted_values = f.csv\n")
    assert main(["evsi-curve", "--config", cfg, "--out", str(tmp_path / "o")]) == 2


def test_constant_fitted_values_is_numerical_failure(tmp_path, capsys):
    io.write_fitted_values(tmp_path / "f.csv", np.full(3000, 0.2))
    cfg = _config(tmp_path, "fitted_values = f.csv\n")
    assert main(["evsi-curve", "--config", cfg, "--out", str(tmp_path / "o")]) == 3
    assert "numerical failure" in capsys.readouterr().err


@pytest.mark.parametrize("argv", [
    ["evsi-curve", "--exercise", "9"],
    ["evsi-curve", "--q", "0"],
    ["psa", "--model", "nope"],
    ["evsi-curve", "--n-min", "50", "--n-max", "10"],
])
def test_config_errors_exit_2(argv, tmp_path, capsys):
    assert main(argv + ["--out", str(tmp_path)]) == 2
    assert "error:" in capsys.readouterr().err


def test_bad_config_file(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("q == \nunknown_key = 1\n")
    assert main(["psa", "--config", str(p)]) == 2
    assert main(["psa", "--config", str(tmp_path / "none.cfg")]) == 2


def test_single_config_commands(tmp_path):
    cfg = _config(tmp_path)
    assert main(["psa", "--config", cfg, "--config", cfg]) == 2


def test_psa_and_evppi(tmp_path):
    cfg = _config(tmp_path)
    assert main(["psa", "--config", cfg, "--out", str(tmp_path / "p")]) == 0
    header, body = io.read_table(tmp_path / "p" / "psa_summary.csv")
    assert header == ["quantity", "i", "j", "value"] and body[0][:1] == ["draws"]
    assert main(["evppi", "--config", cfg, "--out", str(tmp_path / "e")]) == 0
    man = json.loads((tmp_path / "e" / "manifest.json").read_text())
    assert man["evppi"] == pytest.approx(1 / np.sqrt(2 * np.pi), rel=0.05)


def test_oracle_command(tmp_path):
    cfg = _config(tmp_path, "oracle_s_out = 300\noracle_m_in = 100\noracle_n = 4, 16\n")
    assert main(["oracle", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    header, body = io.read_table(tmp_path / "o" / "oracle.csv")
    assert header == ["n", "evsi", "se", "s_out", "m_in", "evaluations"]
    assert [r[0] for r in body] == ["4", "16"] and body[0][-1] == str(300 * 101)


def _curve_file(path, evsi):
    grid = np.arange(1, 101, dtype=float)
    rows = [(n, 0.5, 0.0, e) for n, e in zip(grid, evsi(grid))]
    io.write_table(path, io.CURVE_HEADER, rows)


def test_compare_from_curves(tmp_path):
    _curve_file(tmp_path / "a.csv", lambda n: n / (n + 10))
    _curve_file(tmp_path / "b.csv", lambda n: 0.5 * n / (n + 10))
    a = tmp_path / "a.cfg"
    a.write_text("label = cheap\ncurve = a.csv\nper_participant_cost = 0.02\n")
    b = tmp_path / "b.cfg"
    b.write_text("label = pricey\ncurve = b.csv\nfixed_cost = 1\n")
    out = tmp_path / "cmp"
    assert main(["compare", "--config", str(a), "--config", str(b), "--out", str(out)]) == 0
    _, body = io.read_table(out / "compare_summary.csv",
                            ("label", "optimal_n", "optimal_net_value", "never_worthwhile"))
    summary = {r[0]: r for r in body}
    assert summary["cheap"][1] == "12" and summary["cheap"][3] == "0"
    assert summary["pricey"][3] == "1"
    man = json.loads((out / "manifest.json").read_text())
    assert any("pricey" in w for w in man["warnings"])


def test_compare_duplicate_labels(tmp_path):
    _curve_file(tmp_path / "a.csv", lambda n: n / (n + 10))
    a = tmp_path / "a.cfg"
    a.write_text("label = x\ncurve = a.csv\n")
    assert main(["compare", "--config", str(a), "--config", str(a),
                 "--out", str(tmp_path / "o")]) == 2


def test_module_entry_point(tmp_path):
    cfg = _config(tmp_path)
    run = subprocess.run([sys.executable, "-m", "evsi_mm", "psa", "--config", cfg,
                          "--out", str(tmp_path / "m")], capture_output=True, text=True)
    assert run.returncode == 0, run.stderr
    assert "psa: done" in run.stderr


def test_shipped_configs_validate():
    from pathlib import Path

    from evsi_mm.config import load_config
    shipped = sorted((Path(__file__).parents[1] / "configs").glob("*.cfg"))
    assert shipped
    for path in shipped:
        load_config(path)
