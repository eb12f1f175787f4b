import numpy as np
import pytest
from scipy.special import erf

from vxshape.grid import Grid, GridFunction
from vxshape.partition import (INNER, OUTER, ExponentField, RegionPartition, build_partition, erode,
                               gaussian_kernel, gaussian_smooth, interface)


def test_constant_image_is_all_smooth():
    g = Grid(32)
    part = build_partition(GridFunction.constant(g, 0.4), sigma=0.02, beta=0.5)
    assert np.all(part.labels == OUTER)


def test_step_smooths_to_erf():
    g = Grid(128)
    sigma = 0.03
    step = GridFunction.from_function(g, lambda x, y: (x > 0.5).astype(float) + 0 * y)
    sm = gaussian_smooth(step, sigma)
    X, _ = g.centers()
    # exp(-r^2 / (4 sigma^2)) has standard deviation sqrt(2) sigma
    oracle = 0.5 * (1 + erf((X - 0.5) / (2 * sigma)))
    interior = (X > 0.3) & (X < 0.7)
    assert np.max(np.abs(sm.values - oracle)[interior]) < 0.02


def test_kernel_unit_mass_and_symmetric():
    k = gaussian_kernel(0.05, 1 / 64)
    assert k.sum() == pytest.approx(1.0)
    assert np.allclose(k, k[::-1]) and np.allclose(k, k.T)


def test_step_edge_found():
    g = Grid(64)
    step = GridFunction.from_function(g, lambda x, y: (x > 0.5).astype(float) + 0 * y)
    part = build_partition(step, sigma=0.02, beta=2.0)
    X, _ = g.centers()
    d1 = part.mask(INNER)
    assert d1.any()
    assert np.all(np.abs(X[d1] - 0.5) < 0.1)


def test_erode_half_plane():
    g = Grid(64)
    part = RegionPartition.half_plane(g, 0.5)
    h = g.h
    er = erode(part, 4 * h)
    X, _ = g.centers()
    # inner cells keep a center-to-center distance > delta from D2
    d = 4 * h
    assert np.array_equal(er.inner, (0.5 + h / 2) - X > d + 1e-12)
    assert np.array_equal(er.outer, X - (0.5 - h / 2) > d + 1e-12)
    assert np.all(er.inner ^ er.outer ^ er.band)


def test_erode_disk():
    g = Grid(64)
    part = RegionPartition.disk(g, (0.5, 0.5), 0.25)
    er = erode(part, 3 * g.h)
    X, Y = g.centers()
    r = np.hypot(X - 0.5, Y - 0.5)
    assert np.all(r[er.inner] < 0.25 - 2 * g.h)
    assert np.all(r[er.outer] > 0.25 + 2 * g.h)


def test_erosion_monotone_and_disjoint():
    g = Grid(64)
    part = RegionPartition.disk(g, (0.45, 0.55), 0.2)
    prev = None
    for d in (2 * g.h, 4 * g.h, 8 * g.h):
        er = erode(part, d)
        assert not np.any(er.inner & er.outer)
        if prev is not None:
            assert np.all(er.inner <= prev.inner) and np.all(er.outer <= prev.outer)
        prev = er


def test_erode_rejects_small_delta():
    g = Grid(32)
    with pytest.raises(ValueError):
        erode(RegionPartition.disk(g), 0.5 * g.h)


def test_interface_length_of_disk():
    g = Grid(128)
    er = erode(RegionPartition.disk(g, (0.5, 0.5), 0.2), g.h)
    for side in (INNER, OUTER):
        it = interface(er, side)
        assert len(it) > 0
        assert np.all(np.linalg.norm(it.normals, axis=1) > 0)


def test_interface_length_undeformed():
    g = Grid(128)
    part = RegionPartition.disk(g, (0.5, 0.5), 0.2)
    er = erode(part, 2 * g.h)
    r_in = 0.2 - 2 * g.h
    L = interface(er, INNER).length
    assert L == pytest.approx(2 * np.pi * r_in, rel=0.1)


def test_exponent_field():
    g = Grid(16)
    p = ExponentField(RegionPartition.disk(g), 1.5, 2.5)
    assert p.p_minus == 1.5 and p.p_plus == 2.5
    assert set(np.unique(p.values)) == {1.5, 2.5}
    with pytest.raises(ValueError):
        ExponentField(RegionPartition.disk(g), 1.0, 2.0)


def test_labels_validated():
    g = Grid(8)
    with pytest.raises(ValueError):
        RegionPartition(g, np.zeros((8, 8)))
