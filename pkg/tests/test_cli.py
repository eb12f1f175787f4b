import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from vxshape.cli import EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, main
from vxshape.config import ConfigError, RunConfig, load, parse_text
from vxshape.grid import load_pgm


def run(tmp_path, *args):
    return main([args[0], "--out", str(tmp_path), *args[1:]])


def test_info_lists_families(capsys):
    assert main(["info"]) == EXIT_OK
    out = capsys.readouterr().out
    for fam in ("translation", "rotation", "squeeze"):
        assert fam in out
    assert "resolved config" in out


def test_usage_errors(tmp_path, capsys):
    assert main(["bogus-command"]) == EXIT_USAGE
    assert run(tmp_path, "solve", "bogus=1") == EXIT_USAGE
    assert "unknown config key 'bogus'" in capsys.readouterr().err
    assert run(tmp_path, "solve", "n=4") == EXIT_USAGE
    assert main(["solve", "--config", str(tmp_path / "missing.cfg")]) == EXIT_USAGE
    assert run(tmp_path, "solve", "forcing=image", f"input={tmp_path / 'none.pgm'}") == EXIT_USAGE


def test_config_file_and_precedence(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("# comment\nn = 16\np1 = 1.5\nfield = {\"family\": \"zero\"}\nbc = natural\n")
    cfg = load(str(cfgfile), ["p1=1.7"], command="solve", seed=3)
    assert (cfg.n, cfg.p1, cfg.seed, cfg.bc) == (16, 1.7, 3, "natural")
    assert cfg.field == {"family": "zero"}
    with pytest.raises(ConfigError):
        parse_text("no equals sign")
    with pytest.raises(ConfigError):
        load(None, ["n=2.5"])
    assert RunConfig().grid_deltas() == [6 / 64, 4 / 64, 2 / 64]


def test_solve_quadratic_energy(tmp_path, capsys):
    code = run(tmp_path, "solve", "n=64", "p1=2", "p2=2", "forcing=sine", "partition=uniform", "eps_reg=0")
    assert code == EXIT_OK
    summary = json.loads((tmp_path / "summary.txt").read_text())
    assert summary["energy"] == pytest.approx(-0.125 / (1 + 2 * np.pi**2), rel=0.01)
    u = np.loadtxt(tmp_path / "u.csv", delimiter=",")
    assert u.shape == (64, 64)
    assert load_pgm(tmp_path / "u.pgm").grid.n == 64


def test_solve_zero_forcing(tmp_path):
    assert run(tmp_path, "solve", "n=16", "forcing=zero") == EXIT_OK
    assert np.all(load_pgm(tmp_path / "u.pgm").values == 0.0)


def test_non_convergence_exit_code(tmp_path):
    assert run(tmp_path, "solve", "n=32", "max_iter=1", "tol=1e-14") == EXIT_NUMERIC


def test_eps_zero_with_small_exponent_is_usage_error(tmp_path):
    assert run(tmp_path, "solve", "n=16", "eps_reg=0") == EXIT_USAGE


def test_shape_derivative_zero_field(tmp_path):
    code = run(tmp_path, "shape-derivative", "n=32", 'field={"family": "zero"}', "t_list=[0.02,0.01]")
    assert code == EXIT_OK
    rows = list(csv.reader(open(tmp_path / "report.csv")))
    vals = [float(v) for r in rows[1:] if r[0] in ("fd", "summary") for v in r[2:] if v not in ("", "nan")]
    assert vals and all(v == 0.0 for v in vals)


def test_shape_derivative_delta_range(tmp_path, capsys):
    assert run(tmp_path, "shape-derivative", "n=64", "deltas=[0.01,0.005]") == EXIT_USAGE
    assert "2h" in capsys.readouterr().err


def test_restore_constant_image(tmp_path):
    img = tmp_path / "flat.pgm"
    img.write_bytes(b"P5\n16 16\n255\n" + bytes([128]) * 256)
    out = tmp_path / "o"
    assert main(["restore", "--out", str(out), f"input={img}"]) == EXIT_OK
    assert (out / "summary.txt").read_text().splitlines()[2] == "stop: no interface"
    assert np.array_equal(load_pgm(out / "restored_000.pgm").values, load_pgm(img).values)


def test_outputs_bit_identical(tmp_path):
    for d in ("a", "b"):
        assert main(["shape-derivative", "--out", str(tmp_path / d), "n=32", "t_list=[0.02,0.01]"]) == EXIT_OK
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    # the resolved config records the output directory, which differs
    strip = lambda d: [l for l in (tmp_path / d / "summary.txt").read_text().splitlines() if not l.startswith("out =")]
    assert strip("a") == strip("b")


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "vxshape.cli", "info"], capture_output=True, text=True)
    assert proc.returncode == 0 and "deformation families" in proc.stdout
