import numpy as np
import pytest
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from vxshape.flow import (DeformationField, FlowError, ZeroField, advect, field_from_descriptor, flow_with_jacobian,
                          n_steps, pullback, rotation_field, squeeze_field, translation_field, transport_partition)
from vxshape.grid import Grid, GridFunction
from vxshape.partition import RegionPartition


class Linear(DeformationField):
    def __init__(self, A):
        self.A = np.asarray(A, float)

    def __call__(self, x, y):
        return np.stack([self.A[0, 0] * x + self.A[0, 1] * y, self.A[1, 0] * x + self.A[1, 1] * y])

    def jacobian(self, x, y):
        one = np.ones_like(np.asarray(x, float))
        return np.array([[self.A[0, 0] * one, self.A[0, 1] * one], [self.A[1, 0] * one, self.A[1, 1] * one]])


A = np.array([[0.3, -1.1], [0.7, -0.2]])
PTS = np.array([[0.1, 0.4, -0.3], [0.2, -0.5, 0.6]])


def test_n_steps_rule():
    assert n_steps(0.01) == 8 and n_steps(0.2) == 20 and n_steps(-0.051) == 8


def test_linear_flow_matches_expm():
    t = 0.4
    out = advect(Linear(A), PTS, t)
    assert np.allclose(out, expm(t * A) @ PTS, atol=1e-8)


def test_linear_jacobian_matches_expm():
    t = -0.3
    _, M, J = flow_with_jacobian(Linear(A), PTS, t)
    E = expm(t * A)
    for k in range(PTS.shape[1]):
        assert np.allclose(M[:, :, k], E, atol=1e-8)
    assert np.allclose(J, np.exp(t * np.trace(A)), atol=1e-8)


@pytest.mark.parametrize("V", [translation_field((0.5, 0.5), 0.3, 0.5, (1.0, 2.0)),
                               rotation_field((0.45, 0.55), 0.3, 0.5),
                               squeeze_field((0.5, 0.5), 0.3, 0.5)])
def test_bump_flow_matches_solve_ivp(V):
    x0 = np.array([0.55, 0.42])
    t = 0.15
    ref = solve_ivp(lambda s, z: V(z[0], z[1]), (0, t), x0, rtol=1e-12, atol=1e-14).y[:, -1]
    assert np.allclose(advect(V, x0.reshape(2, 1), t)[:, 0], ref, atol=1e-8)


def test_jacobian_matches_finite_difference():
    V = rotation_field((0.5, 0.5), 0.3, 0.7)
    x = np.array([[0.52], [0.41]])
    t, e = 0.2, 1e-6
    _, M, J = flow_with_jacobian(V, x, t)
    cols = [(advect(V, x + e * d, t) - advect(V, x - e * d, t))[:, 0] / (2 * e)
            for d in (np.array([[1.0], [0.0]]), np.array([[0.0], [1.0]]))]
    fd = np.stack(cols, axis=1)
    assert np.allclose(M[:, :, 0], fd, atol=1e-7)
    assert J[0] == pytest.approx(np.linalg.det(fd), abs=1e-7)


def test_flow_identity_outside_support_and_zero():
    V = translation_field((0.5, 0.5), 0.2)
    far = np.array([[0.05], [0.9]])
    assert np.array_equal(advect(V, far, 0.3), far)
    assert np.array_equal(advect(ZeroField(), PTS, 1.0), PTS)


def test_group_and_inverse():
    V = translation_field((0.5, 0.5), 0.3, 0.5, (1.0, 1.0))
    x = np.array([[0.5, 0.6], [0.45, 0.5]])
    a = advect(V, advect(V, x, 0.03), 0.05)
    b = advect(V, x, 0.08)
    assert np.max(np.abs(a - b)) < 1e-8
    assert np.max(np.abs(advect(V, advect(V, x, 0.1), -0.1) - x)) < 1e-10


def test_blow_up_detected():
    V = Linear(1e300 * np.eye(2))
    with np.errstate(over="ignore", invalid="ignore"):
        with pytest.raises(FlowError):
            advect(V, PTS, 1.0)
        with pytest.raises(FlowError):
            flow_with_jacobian(V, PTS, 1.0)


def test_transport_partition_and_back():
    g = Grid(64)
    part = RegionPartition.disk(g, (0.5, 0.5), 0.2)
    V = translation_field((0.5, 0.5), 0.35, 1.0, (1.0, 0.0))
    moved = transport_partition(part, V, 0.05)
    assert moved.area(1) != 0 and moved != part
    back = transport_partition(moved, V, -0.05)
    # nearest-cell sampling may flip a few cells along the boundary
    assert np.count_nonzero(back.labels != part.labels) <= 0.02 * part.labels.size
    assert transport_partition(part, V, 0.0) is part


def test_pullback_first_order():
    g = Grid(128)
    fn = lambda x, y: np.sin(2 * x) * np.cos(3 * y)
    u = GridFunction.from_function(g, fn)
    V = translation_field((0.5, 0.5), 0.3, 1.0, (1.0, 0.5))
    X, Y = g.centers()
    Vx = V(X, Y)
    grad = np.stack([2 * np.cos(2 * X) * np.cos(3 * Y), -3 * np.sin(2 * X) * np.sin(3 * Y)])
    errs = []
    for t in (0.02, 0.01):
        pb = pullback(u, V, t)
        taylor = fn(X, Y) - t * np.sum(grad * Vx, axis=0)
        errs.append(np.max(np.abs(pb.values - taylor)))
    assert errs[0] < 3e-3 and errs[1] < errs[0] / 2.5


def test_descriptor_round_trip():
    V = rotation_field((0.4, 0.6), 0.25, 0.3)
    W = field_from_descriptor(V.descriptor())
    x, y = np.meshgrid(np.linspace(0, 1, 7), np.linspace(0, 1, 7))
    assert np.allclose(V(x, y), W(x, y))
    assert field_from_descriptor({"family": "zero"}).is_zero()


def test_bad_fields():
    with pytest.raises(ValueError):
        translation_field((0.1, 0.5), 0.2)
    with pytest.raises(ValueError):
        field_from_descriptor({"family": "spiral"})
    with pytest.raises(ValueError):
        field_from_descriptor({"family": "rotation", "spin": 1})
