"""Command-line front end.

The golden drainage run in ``tests/data/drainage_ddfv`` was produced with
``twophase run --config configs/drainage.ini --out tests/data/drainage_ddfv``
(fields and trace kept). Regenerate it only after an intended change of results.
"""
import json
import subprocess
import sys

import numpy as np
import pytest

from conftest import CONFIGS, ROOT
from twophase.cli import FIELD_HEADER, SWEEP_COLUMNS, TRACE_COLUMNS, main

GOLDEN = ROOT / "tests" / "data" / "drainage_ddfv"


def fields(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


def small_config(tmp_path, base="reference.ini", **replacements):
    text = (CONFIGS / base).read_text()
    for old, new in replacements.items():
        text = text.replace(old, new)
    path = tmp_path / base
    path.write_text(text)
    return path


@pytest.fixture(scope="module")
def drainage(tmp_path_factory):
    out = tmp_path_factory.mktemp("drainage")
    rc = main(["run", "--config", str(CONFIGS / "drainage.ini"), "--out", str(out), "--quiet"])
    return rc, out


# -- run ---------------------------------------------------------------
def test_drainage_matches_golden(drainage):
    rc, out = drainage
    assert rc == 0
    for ref in sorted(GOLDEN.glob("fields_*.csv")):
        got = fields(out / ref.name)
        want = fields(ref)
        assert got.shape == want.shape
        assert np.max(np.abs(got - want)) <= 1e-8, ref.name
    assert len(list(out.glob("fields_*.csv"))) == 11


def test_drainage_front_advances(drainage):
    """Gas invades the low-saturation side at every step."""
    _, out = drainage
    left = []
    for n in range(11):
        a = fields(out / f"fields_{n:04d}.csv")
        left.append(a[a[:, 0] < 0.55, 4].mean())
    assert np.all(np.diff(left) > 0)


def test_summary_records(drainage):
    _, out = drainage
    s = json.loads((out / "summary.json").read_text())
    assert s["backend"] == "ddfv" and len(s["steps"]) == 10 and "failure" not in s
    for step in s["steps"]:
        assert step["residual_norm"] <= 1e-10 and step["newton_iterations"] > 0
        assert -1e-12 <= step["sat_min"] and step["sat_max"] <= 1 + 1e-12
        e = step["energy"]
        assert e["sum_error"] <= 1e-9 * (1 + abs(e["direct_pairing"]))


def test_headers(drainage):
    _, out = drainage
    assert (out / "fields_0003.csv").read_text().splitlines()[0] == FIELD_HEADER
    assert (out / "trace.csv").read_text().splitlines()[0] == ",".join(TRACE_COLUMNS)
    assert all("[" in col for col in FIELD_HEADER.split(","))


def test_zero_case_writes_zeros(tmp_path):
    assert main(["run", "--config", str(CONFIGS / "zero.ini"), "--out", str(tmp_path), "--quiet"]) == 0
    files = sorted(tmp_path.glob("fields_*.csv"))
    assert len(files) == 4
    for f in files:
        assert np.all(fields(f)[:, 2:] == 0.0)


def test_deterministic(tmp_path):
    cfg = small_config(tmp_path, **{"t_final = 0.1": "t_final = 0.02", "nx = 8": "nx = 5",
                                    "ny = 8": "ny = 5"})
    for d in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--out", str(tmp_path / d), "--quiet"]) == 0
    names = sorted(p.name for p in (tmp_path / "a").iterdir())
    assert names == sorted(p.name for p in (tmp_path / "b").iterdir())
    for n in names:
        assert (tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes()


def test_missing_key_exit_code(tmp_path, capsys):
    cfg = small_config(tmp_path, **{"dt = 0.01": ""})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path), "--quiet"]) == 2
    assert "'dt'" in capsys.readouterr().err


def test_negative_porosity_rejected(tmp_path, capsys):
    cfg = small_config(tmp_path, **{"porosity = 0.3": "porosity = -0.3"})
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path), "--quiet"]) == 2
    assert "porosity" in capsys.readouterr().err


def test_config_required():
    assert main(["run"]) == 2


def test_entry_point(tmp_path):
    cfg = small_config(tmp_path, **{"dt = 0.01": ""})
    r = subprocess.run([sys.executable, "-m", "twophase.cli", "run", "--config", str(cfg), "--quiet"],
                       capture_output=True, text=True, cwd=tmp_path)
    assert r.returncode == 2 and "missing key 'dt'" in r.stderr


# -- verify ------------------------------------------------------------
def test_verify_orthogonal_ddfv(tmp_path):
    cfg = small_config(tmp_path, **{"lem1_samples = 10000": "lem1_samples = 2000",
                                    "norm_fields = 1000": "norm_fields = 100",
                                    "state_samples = 50": "state_samples = 10"})
    assert main(["verify", "--config", str(cfg), "--backend", "ddfv", "--out", str(tmp_path),
                 "--quiet"]) == 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    ortho = {r["name"]: r for r in rep if r["variant"] == "ddfv-orthogonal"}
    assert all(r["passed"] for r in ortho.values())
    assert ortho["gamma2_identity"]["gated"]
    assert {r["variant"] for r in rep} == {"ddfv-orthogonal", "ddfv-distorted", "fluid"}


def test_verify_negative_branch_counted(tmp_path):
    cfg = small_config(tmp_path, "anisotropic.ini")
    with open(cfg, "a") as fh:
        fh.write("\n[verify]\nlem1_samples = 500\nnorm_fields = 50\nstate_samples = 5\n")
    assert main(["verify", "--config", str(cfg), "--backend", "cvfe", "--out", str(tmp_path),
                 "--quiet"]) == 0
    rep = json.loads((tmp_path / "verify_report.json").read_text())
    neg = {r["variant"]: r["constants"]["count"] for r in rep
           if r["name"] == "negative_coefficient_branch"}
    assert neg["cvfe-acute"] > 0


# -- sweep -------------------------------------------------------------
def test_sweep_single_value_matches_run(tmp_path):
    cfg = small_config(tmp_path, **{"t_final = 0.1": "t_final = 0.01", "nx = 8": "nx = 4",
                                    "ny = 8": "ny = 4"})
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "r"), "--quiet"]) == 0
    assert main(["sweep", "--config", str(cfg), "--param", "eta", "--values", "0",
                 "--out", str(tmp_path / "s"), "--quiet"]) == 0
    text = (tmp_path / "s" / "sweep_eta.csv").read_text().splitlines()
    assert text[0] == ",".join(SWEEP_COLUMNS)
    row = text[1].split(",")
    last = (tmp_path / "r" / "trace.csv").read_text().splitlines()[-1].split(",")
    col = TRACE_COLUMNS.index
    assert row[1] == "ok"
    assert row[3:6] == [last[col("residual_norm")], last[col("sat_min")], last[col("sat_max")]]


def test_sweep_eps_and_eta(tmp_path):
    cfg = small_config(tmp_path, **{"nx = 8": "nx = 4", "ny = 8": "ny = 4"})
    assert main(["sweep", "--config", str(cfg), "--param", "eps", "--values", "1e-1", "1e-3",
                 "1e-6", "--out", str(tmp_path), "--quiet"]) == 0
    a = np.genfromtxt(tmp_path / "sweep_eps.csv", delimiter=",", names=True, dtype=None,
                      encoding="utf-8")
    assert np.all(np.isfinite(a["xi_norm"])) and np.max(a["xi_norm"]) < 1e3
    assert main(["sweep", "--config", str(cfg), "--param", "eta", "--values", "1e-3", "0",
                 "--out", str(tmp_path), "--quiet"]) == 0
    b = np.genfromtxt(tmp_path / "sweep_eta.csv", delimiter=",", names=True, dtype=None,
                      encoding="utf-8")
    assert np.all(b["sat_min"] >= -1e-12) and np.all(b["sat_max"] <= 1 + 1e-12)


# -- meshes ------------------------------------------------------------
def test_mesh_gen_and_stats(tmp_path, capsys):
    cfg = str(CONFIGS / "anisotropic.ini")
    assert main(["mesh-gen", "--config", cfg, "--out", str(tmp_path), "--quiet"]) == 0
    capsys.readouterr()
    assert main(["mesh-stats", "--mesh", str(tmp_path / "mesh.txt")]) == 0
    from_file = json.loads(capsys.readouterr().out)
    assert main(["mesh-stats", "--config", cfg]) == 0
    from_cfg = json.loads(capsys.readouterr().out)
    assert from_cfg == json.loads((tmp_path / "mesh_stats.json").read_text())
    # a mesh file carries no permeability, so only the geometry is compared
    for key in ("triangles", "vertices", "dirichlet_nodes", "area_triangles", "area_dual"):
        assert from_file[key] == from_cfg[key]
    assert from_cfg["negative_coefficients"] > 0 and from_file["negative_coefficients"] == 0


def test_mesh_stats_needs_input(capsys):
    assert main(["mesh-stats"]) == 2
