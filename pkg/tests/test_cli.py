import json
import subprocess
import sys

import numpy as np
import pytest

from bilinspa import save_system
from bilinspa.cli import main
from conftest import scalar_system
from test_balancing_reduction import paired_system


@pytest.fixture(scope="module")
def demo_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("demo")
    assert main(["demo", "--outdir", str(out), "--seed", "3"]) == 0
    return out


def run(capsys, *argv):
    code = main(list(argv))
    cap = capsys.readouterr()
    return code, cap.out, cap.err


def test_demo_outputs(demo_dir):
    cfg = json.loads((demo_dir / "config.json").read_text())
    assert cfg["manifest"] == "system.json" and cfg["order"] == 3
    manifest = json.loads((demo_dir / "system.json").read_text())
    assert manifest["dimensions"] == {"n": 6, "m": 2, "p": 1, "v": 1}
    assert manifest["control"]["kind"] == "sinusoid"


def test_validate(capsys, demo_dir):
    code, out, _ = run(capsys, "validate", "--manifest", str(demo_dir / "system.json"),
                       "--no-timestamp")
    assert code == 0
    rep = json.loads(out)
    assert rep["valid"] and rep["stable"] and rep["spectral_abscissa"] < 0
    assert "timestamp" not in rep


def test_reduce_outputs_are_reproducible(capsys, demo_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        code, out, _ = run(capsys, "--no-timestamp", "reduce", "--manifest",
                           str(demo_dir / "system.json"), "--order", "3", "--outdir",
                           str(tmp_path / name), "--dump-gramians")
        assert code == 0
        assert out.strip() == str(tmp_path / name / "diagnostics.json")
        outs.append(tmp_path / name)
    sigma = np.loadtxt(outs[0] / "sigma.csv")
    assert sigma.shape == (6,) and np.all(np.diff(sigma) < 0)
    for f in ("diagnostics.json", "rom.json", "rom_A.mtx", "sigma.csv", "P.mtx"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    diag = json.loads((outs[0] / "diagnostics.json").read_text())
    assert diag["order"] == 3 and diag["gramians"]["rel_residual_X"] < 1e-8


def test_verify_bound_from_config(capsys, demo_dir, tmp_path):
    code, out, err = run(capsys, "verify-bound", "--config", str(demo_dir / "config.json"),
                         "--paths", "300", "--outdir", str(tmp_path))
    assert code == 0, err
    assert out.strip() == str(tmp_path / "bound_report.json")
    rep = json.loads((tmp_path / "bound_report.json").read_text())
    assert rep["verdict"] == "PASS" and rep["inputs"]["sim"]["n_paths"] == 300
    assert rep["inputs"]["control"]["kind"] == "sinusoid"
    assert "verdict: PASS" in err
    first = (tmp_path / "bound_report.json").read_bytes()
    run(capsys, "verify-bound", "--config", str(demo_dir / "config.json"), "--paths", "300",
        "--outdir", str(tmp_path))
    assert (tmp_path / "bound_report.json").read_bytes() == first


def test_verify_bound_prints_json_without_outdir(capsys, demo_dir):
    code, out, _ = run(capsys, "verify-bound", "--manifest", str(demo_dir / "system.json"),
                       "--order", "2", "--paths", "100", "--control", "constant:1",
                       "--jump", "0.5:normal:0.4", "--no-timestamp")
    assert code == 0
    rep = json.loads(out)
    assert rep["inputs"]["control"] == {"kind": "constant", "horizon": 1.0,
                                        "amplitude": [1.0, 1.0]}
    assert rep["inputs"]["levy"]["jump"]["law"] == "normal"


def test_missing_manifest(capsys, tmp_path):
    code, out, err = run(capsys, "validate", "--manifest", str(tmp_path / "none.json"))
    assert code == 2 and out == ""
    assert f"file not found: {tmp_path / 'none.json'}" in err


def test_unstable_system(capsys, tmp_path):
    path = save_system(scalar_system(a=1.0), tmp_path)
    assert run(capsys, "validate", "--manifest", path)[0] == 3
    code, _, err = run(capsys, "reduce", "--manifest", path, "--order", "1", "--outdir",
                       str(tmp_path / "o"))
    assert code == 3 and "stability" in err


def test_mid_group_order(capsys, tmp_path):
    path = save_system(paired_system(), tmp_path)
    code, _, err = run(capsys, "reduce", "--manifest", path, "--order", "1", "--outdir",
                       str(tmp_path / "o"))
    assert code == 4
    assert "group boundaries: [2]" in err


def test_dimension_cap(capsys, demo_dir, tmp_path):
    code, _, err = run(capsys, "reduce", "--manifest", str(demo_dir / "system.json"),
                       "--order", "3", "--outdir", str(tmp_path), "--max-dim", "4")
    assert code == 5 and "dimension exceeds solver cap" in err


def test_bad_jump_and_config(capsys, demo_dir, tmp_path):
    code, _, err = run(capsys, "verify-bound", "--manifest", str(demo_dir / "system.json"),
                       "--order", "3", "--jump", "9:two_point:1", "--paths", "10")
    assert code == 3 and "exceeds K" in err
    bad = tmp_path / "c.json"
    bad.write_text('{"paths": 10, "colour": 1}')
    code, _, err = run(capsys, "verify-bound", "--config", str(bad))
    assert code == 2 and "unknown keys" in err


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "bilinspa", "--version"], capture_output=True,
                         text=True, check=True)
    assert res.stdout.startswith("bilinspa ")
