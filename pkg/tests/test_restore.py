import numpy as np
import pytest

from vxshape.flow import translation_field
from vxshape.grid import NATURAL, Grid, GridFunction
from vxshape.partition import ExponentField, RegionPartition
from vxshape.restore import (DescentConfig, RestoreConfig, basis_fields, descent_field, interface_cells, restore,
                             synthetic_image)
from vxshape.shapederiv import volume_derivative
from vxshape.solver import SolverConfig, minimize
from vxshape.validate import same_trace

FAST = RestoreConfig(descent=DescentConfig(max_iter=3))


def test_constant_image_has_no_interface():
    I = GridFunction.constant(Grid(32), 0.5, NATURAL)
    u, part, trace = restore(I, FAST)
    assert trace.stop_reason == "no interface" and trace.accepted == 0
    assert np.allclose(u.values, 0.5, atol=1e-9)


def test_large_beta_marks_no_edges():
    I = synthetic_image(32, noise=0.05, seed=1)
    u, part, trace = restore(I, FAST.replace(beta=1e6))
    assert np.all(part.labels == 2) and trace.stop_reason == "no interface"


def test_image_range_checked():
    with pytest.raises(ValueError):
        restore(GridFunction.constant(Grid(16), 1.5))


@pytest.fixture(scope="module")
def state():
    g = Grid(32)
    part = RegionPartition.disk(g, (0.5, 0.5), 0.25)
    p = ExponentField(part, 1.2, 2.0)
    I = synthetic_image(32, noise=0.0)
    cfg = SolverConfig(bc=NATURAL, tol=1e-10, w_grad=p.values / 4.0, w_fid=2.0)
    return part, p, I, cfg, minimize(p, I, cfg)


def test_single_basis_direction(state):
    part, p, I, cfg, res = state
    B = translation_field((0.5, 0.25), 0.15, 1.0, (1.0, 0.0))
    Vstar, coeffs = descent_field(res, part, p, I, [B], cfg.eps_reg, cfg.w_grad, cfg.w_fid)
    X, Y = part.grid.centers()
    sup = np.max(np.hypot(*B(X, Y)))
    assert coeffs[0] != 0.0
    assert np.allclose(Vstar(X, Y), -np.sign(coeffs[0]) * B(X, Y) / sup, atol=1e-15)


def test_descent_slope_identity(state):
    part, p, I, cfg, res = state
    basis = basis_fields(part, 4, 0.15)
    assert len(basis) == 8
    Vstar, d = descent_field(res, part, p, I, basis, cfg.eps_reg, cfg.w_grad, cfg.w_fid)
    X, Y = part.grid.centers()
    raw = sum((-c * B(X, Y) for c, B in zip(d, basis)))
    sup = np.max(np.hypot(*raw))
    slope = volume_derivative(res, p, I, Vstar, cfg.eps_reg, cfg.w_grad, cfg.w_fid)
    assert slope == pytest.approx(-np.sum(d**2) / sup, rel=1e-9)
    assert slope < 0


def test_basis_centers_on_interface(state):
    part = state[0]
    cells = interface_cells(part)
    X, Y = part.grid.centers()
    for B in basis_fields(part, 6, 0.15):
        i, j = part.grid.cell_index(np.array(B.center[0]), np.array(B.center[1]))
        assert cells[i, j]


def test_equal_exponents_accept_nothing():
    I = synthetic_image(32, noise=0.05, seed=0)
    _, _, trace = restore(I, FAST.replace(p1=1.7, p2=1.7))
    assert trace.accepted == 0


def test_descent_decreases_and_is_deterministic():
    I = synthetic_image(64, noise=0.1, seed=0)
    a = restore(I, FAST)[2]
    b = restore(I, FAST)[2]
    assert a.accepted >= 1
    assert np.all(np.diff(a.values) < 0)
    assert same_trace(a, b)
    assert len(a.rows()) == len(a.records) + 1


def test_config_validation():
    with pytest.raises(ValueError):
        RestoreConfig(beta=0)
    with pytest.raises(ValueError):
        DescentConfig(radius=0.6)
    with pytest.raises(ValueError):
        DescentConfig(m=0)
