import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import optimize

from vxshape.grid import DIRICHLET, Grid, GridFunction
from vxshape.partition import ExponentField, RegionPartition, constant_exponent
from vxshape.validate import random_exponent, space_violations
from vxshape.vxspaces import conjugate_exponent, luxemburg_norm, modular, sobolev_modular

G = Grid(16)


def test_modular_of_constant():
    c, q = 0.7, 3.0
    assert modular(GridFunction.constant(G, c), constant_exponent(G, q)) == pytest.approx(c**q)


def test_constant_exponent_norm_is_lq_norm():
    rng = np.random.default_rng(3)
    u = GridFunction(G, rng.standard_normal(G.shape))
    q = 2.5
    oracle = (np.sum(np.abs(u.values) ** q) * G.cell_area) ** (1 / q)
    assert luxemburg_norm(u, constant_exponent(G, q)) == pytest.approx(oracle, rel=1e-12)


def test_unit_modular_gives_unit_norm():
    p = ExponentField(RegionPartition.disk(G), 1.3, 2.7)
    assert luxemburg_norm(GridFunction.constant(G, 1.0), p) == pytest.approx(1.0, rel=1e-12)


def test_norm_of_constant_two_against_root_solve():
    part = RegionPartition.disk(G, (0.5, 0.5), 0.3)
    p = ExponentField(part, 1.5, 3.0)
    a1 = part.area(1)
    a2 = part.area(2)
    lam = optimize.newton(lambda l: a1 * (2 / l) ** 1.5 + a2 * (2 / l) ** 3.0 - 1.0, 2.0, tol=1e-15)
    assert luxemburg_norm(GridFunction.constant(G, 2.0), p) == pytest.approx(lam, rel=1e-12)


def test_zero_norm():
    assert luxemburg_norm(GridFunction.constant(G, 0.0), constant_exponent(G, 2.0)) == 0.0


def test_conjugate_involution():
    p = ExponentField(RegionPartition.disk(G), 1.25, 4.0)
    pp = conjugate_exponent(conjugate_exponent(p))
    assert np.allclose(pp.values, p.values)
    assert conjugate_exponent(p).p1 == pytest.approx(5.0)


def test_conjugate_rejects_one():
    with pytest.raises(ValueError):
        conjugate_exponent(ExponentField(RegionPartition.disk(G), 1.0 + 1e-14, 2.0))


def test_sobolev_modular_of_sine():
    g = Grid(128)
    u = GridFunction.from_function(g, lambda x, y: np.sin(np.pi * x) * np.sin(np.pi * y), bc=DIRICHLET)
    assert sobolev_modular(u, constant_exponent(g, 2.0)) == pytest.approx(0.25 + np.pi**2 / 2, rel=0.01)


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), a=st.floats(-5, 5).filter(lambda a: abs(a) > 1e-3))
def test_norm_axioms(seed, a):
    rng = np.random.default_rng(seed)
    p = random_exponent(G, rng)
    u = GridFunction(G, rng.standard_normal(G.shape) * rng.uniform(0.1, 3))
    v = GridFunction(G, rng.standard_normal(G.shape) * rng.uniform(0.1, 3))
    assert space_violations(u, v, p, a) == []


def test_grid_mismatch_rejected():
    with pytest.raises(ValueError):
        modular(GridFunction.constant(Grid(8), 1.0), constant_exponent(G, 2.0))
