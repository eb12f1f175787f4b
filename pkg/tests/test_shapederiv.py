import csv
import io

import numpy as np
import pytest

from vxshape.flow import ZeroField, rotation_field, translation_field
from vxshape.grid import DIRICHLET, Grid, GridFunction
from vxshape.partition import INNER, OUTER, ExponentField, RegionPartition, erode
from vxshape.shapederiv import (band_derivative, build_report, convergence_ratio, fd_derivative, interface_estimate,
                                regional_derivative, richardson, volume_derivative)
from vxshape.solver import SolverConfig, minimize

N = 32


@pytest.fixture(scope="module")
def case():
    g = Grid(N)
    p = ExponentField(RegionPartition.disk(g, (0.5, 0.5), 0.25), 1.5, 2.0)
    f = GridFunction.from_function(g, lambda x, y: 5 * np.sin(np.pi * x) * np.sin(np.pi * y) * (1 + x), bc=DIRICHLET)
    cfg = SolverConfig(eps_reg=1e-3, tol=1e-11)
    return p, f, cfg, minimize(p, f, cfg)


V = translation_field((0.6, 0.6), 0.35, 1.0, (1.0, 1.0))
W = rotation_field((0.45, 0.5), 0.3, 0.8)


def test_zero_field_gives_zero(case):
    p, f, cfg, res = case
    assert volume_derivative(res, p, f, ZeroField(), cfg.eps_reg) == 0.0
    est = interface_estimate(res.u, p, ZeroField(), [6 / N, 4 / N, 2 / N], cfg.eps_reg)
    assert est.value == 0.0


def test_volume_form_is_linear_in_field(case):
    p, f, cfg, res = case
    a, b = 0.7, -1.9
    combo = a * V + b * W
    lhs = volume_derivative(res, p, f, combo, cfg.eps_reg)
    rhs = a * volume_derivative(res, p, f, V, cfg.eps_reg) + b * volume_derivative(res, p, f, W, cfg.eps_reg)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_volume_form_matches_fd_on_coarse_grid(case):
    p, f, cfg, res = case
    vol = volume_derivative(res, p, f, V, cfg.eps_reg)
    fd = fd_derivative(p, f, V, [0.04, 0.02, 0.01], cfg, base=res)
    assert fd.converged
    assert vol == pytest.approx(fd.limit, rel=0.05)


def test_regional_plus_band_is_volume(case):
    p, f, cfg, res = case
    er = erode(p.partition, 2 / N)
    parts = [regional_derivative(res, er, s, f, V, cfg.eps_reg, p) for s in (INNER, OUTER)]
    parts.append(band_derivative(res, er, f, V, cfg.eps_reg, p))
    assert sum(parts) == pytest.approx(volume_derivative(res, p, f, V, cfg.eps_reg), abs=1e-12)


def test_delta_validation(case):
    p, f, cfg, res = case
    with pytest.raises(ValueError, match="2h"):
        interface_estimate(res.u, p, V, [0.1, 1 / N], cfg.eps_reg)
    with pytest.raises(ValueError, match="decreasing"):
        interface_estimate(res.u, p, V, [4 / N, 6 / N], cfg.eps_reg)
    with pytest.raises(ValueError, match="two"):
        interface_estimate(res.u, p, V, [4 / N], cfg.eps_reg)


def test_richardson_removes_quadratic_term():
    ts = [0.04, 0.02]
    vals = [3.0 + 7.0 * t**2 for t in ts]
    assert richardson(ts, vals) == pytest.approx(3.0, abs=1e-14)
    assert convergence_ratio([1.0 + 1.0, 1.0 + 0.25, 1.0 + 0.0625]) == pytest.approx(4.0)


def test_fd_t_list_validation(case):
    p, f, cfg, res = case
    with pytest.raises(ValueError):
        fd_derivative(p, f, V, [0.01, 0.02], cfg, base=res)


def test_report_csv(case):
    p, f, cfg, _ = case
    rep = build_report(p, f, V, cfg, [6 / N, 4 / N, 2 / N], [0.02, 0.01])
    rows = list(csv.reader(io.StringIO(rep.to_csv())))
    assert rows[0] == ["kind", "step", "value", "aux1", "aux2", "aux3"]
    kinds = [r[0] for r in rows[1:]]
    assert kinds.count("fd") == 2 and kinds.count("interface_delta") == 3
    assert kinds[-2:] == ["summary", "gaps"]
    summary = rows[-2]
    assert float(summary[2]) == rep.volume_value and float(summary[4]) == rep.fd_limit
    assert rep.converged
    assert "volume form" in rep.summary()
