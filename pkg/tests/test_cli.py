import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from mgsta import cli, config, synthesis, trailer
from mgsta.errors import InvalidParams

SHORT = ["--set", "scenario.horizon=2.0"]


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert cli.main(["synth", "--out", str(out), "-q"]) == 0
    return out


def test_overrides_dotted_and_typed():
    cfg = config.apply_overrides({"a": {"b": 1}}, ["a.b=2.5", "a.c=[1, 2]", "d.e=text", "f=true"])
    assert cfg == {"a": {"b": 2.5, "c": [1, 2]}, "d": {"e": "text"}, "f": True}
    with pytest.raises(InvalidParams):
        config.apply_overrides({}, ["novalue"])


def test_default_config_builds_trailer():
    cfg = config.default_config()
    plant = config.build_plant(cfg)
    design = config.build_design(cfg, plant)
    assert plant.N == 8
    np.testing.assert_allclose(design.sigma0, [0.05, -0.2])
    assert config.build_scenario(cfg).horizon == 30.0
    np.testing.assert_array_equal(config.build_gains(cfg)["K2"], trailer.REFERENCE_K2)


def test_synth_writes_result(synth_dir):
    res = synthesis.load_result(synth_dir / "result.json")
    assert abs(res.theta - trailer.REFERENCE_THETA) / trailer.REFERENCE_THETA < 0.1


def test_synth_infeasible_exit_code(tmp_path, capsys):
    code, _, err = run(capsys, "synth", "--out", str(tmp_path), "--set", "design.omega=1e-9")
    assert code == 2
    assert "infeasible" in err


def test_malformed_config_exit_code(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    code, out, err = run(capsys, "synth", "--config", str(bad), "--out", str(tmp_path))
    assert code == 1
    assert err.startswith("error:")
    assert out == ""


def test_single_point_search_equals_synth(tmp_path, capsys, synth_dir):
    code, out, _ = run(
        capsys, "search", "--out", str(tmp_path),
        "--set", "search.alpha_range=[11, 11]", "--set", "search.rho_range=[2.1, 2.1]",
        "--set", "search.n_alpha=1", "--set", "search.n_rho=1", "--set", "search.refine_passes=0",
    )
    assert code == 0
    a = synthesis.load_result(tmp_path / "result.json")
    b = synthesis.load_result(synth_dir / "result.json")
    assert a.theta == pytest.approx(b.theta, rel=1e-6)
    with open(tmp_path / "landscape.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 1


def test_search_all_infeasible_exit_code(tmp_path, capsys):
    code, _, err = run(
        capsys, "search", "--out", str(tmp_path), "--set", "design.omega=1e-9",
        "--set", "search.n_alpha=2", "--set", "search.n_rho=2", "--set", "search.refine_passes=0",
    )
    assert code == 2
    assert "infeasible" in err


def test_analyze_passes_and_reports_delta(tmp_path, capsys, synth_dir):
    code, out, _ = run(capsys, "analyze", "--result", str(synth_dir / "result.json"), "--out", str(tmp_path))
    assert code == 0
    assert "delta =" in out
    with open(tmp_path / "report.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 5 * 24
    assert all(r["pass"] == "1" for r in rows)


def test_analyze_zeroed_k2_fails(tmp_path, capsys, synth_dir):
    d = json.loads((synth_dir / "result.json").read_text())
    d["K2"] = [[0.0, 0.0], [0.0, 0.0]]
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(d))
    code, out, err = run(capsys, "analyze", "--result", str(bad), "--out", str(tmp_path))
    assert code != 0
    assert "lemma2" in out and "FAIL" in out


def test_trailer_single_vertex(tmp_path, capsys):
    code, out, _ = run(capsys, "trailer", "--vertex", "3", "--out", str(tmp_path), *SHORT)
    assert code == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["plot.gp", "summary.csv", "vertex_3.csv"]
    assert out.splitlines()[1].startswith("3,")


def test_trailer_all_vertices_slide(tmp_path, capsys):
    code, _, _ = run(capsys, "trailer", "--out", str(tmp_path), "--no-plot", "--set", "scenario.horizon=5.0")
    assert code == 0
    assert len(list(tmp_path.glob("vertex_*.csv"))) == 8
    with open(tmp_path / "summary.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert all(r["t_s"] != "" and r["status"] == "ok" for r in rows)


def test_trailer_synthesize_pipeline(tmp_path, capsys):
    code, out, _ = run(capsys, "trailer", "--synthesize", "--vertex", "0", "--out", str(tmp_path), *SHORT)
    assert code == 0
    assert (tmp_path / "result.json").exists()
    assert "theta =" in out


def test_trailer_output_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert cli.main(["trailer", "--vertex", "5", "--out", str(d), "-q", *SHORT]) == 0
    capsys.readouterr()
    assert (a / "vertex_5.csv").read_bytes() == (b / "vertex_5.csv").read_bytes()
    assert (a / "vertex_5.csv").read_text().startswith("# mgsta ")


def test_simulate_generic_plant(tmp_path, capsys):
    cfg = {
        "plant": {"vertices": [{"A": [[-1]], "E": [[0]], "C": [[0]], "D": [[0]], "B": [[1]]}]},
        "design": {"gamma": 2.0, "alpha": 2.0, "rho": 1.0, "omega": 50.0, "H": [[1], [0]], "J": [[0], [1]],
                   "zeta0": [0.5], "sigma0": [0.5], "eta0": [0.0]},
        "simulation": {"dt": 1e-3, "horizon": 3.0, "record_stride": 10},
        "disturbance": {"amp": [0.5], "freq": [1.0]},
        "gains": {"K0": [[0.0]], "K1": [[-4.0]], "K2": [[-4.0]], "alpha": 2.0},
    }
    path = tmp_path / "scalar.json"
    path.write_text(json.dumps(cfg))
    code, out, _ = run(capsys, "simulate", "--config", str(path), "--out", str(tmp_path))
    assert code == 0
    assert out.startswith("vertex 0: t_s = ")
    assert (tmp_path / "vertex_0.csv").exists()


def test_simulate_without_gains_is_an_error(tmp_path, capsys):
    cfg = {"plant": {"vertices": [{"A": [[-1]], "E": [[0]], "C": [[0]], "D": [[0]], "B": [[1]]}]},
           "design": {"gamma": 2.0, "alpha": 2.0, "rho": 1.0, "omega": 50.0}}
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    code, _, err = run(capsys, "simulate", "--config", str(path), "--out", str(tmp_path))
    assert code == 1
    assert "gains" in err


def test_console_entry_point_version():
    out = subprocess.run([sys.executable, "-m", "mgsta.cli", "--version"], capture_output=True, text=True)
    assert out.returncode == 0
    assert out.stdout.startswith("mgsta ")
