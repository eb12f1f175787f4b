"""Deformation fields, their flows, flow Jacobians, and transport of grid data.

Fields are evaluated on stacked coordinates: ``V(x, y)`` returns an array of
shape ``(2, ...)`` and ``V.jacobian(x, y)`` returns ``DV[i, j] = dV_i/dx_j``
with shape ``(2, 2, ...)``.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from vxshape.grid import Grid, GridFunction, interpolate
from vxshape.partition import RegionPartition

DT_MAX = 0.01
MIN_STEPS = 8


class FlowError(RuntimeError):
    """The flow left the admissible regime (non-finite or orientation-reversing)."""


class DeformationField:
    """Lipschitz velocity field vanishing within ``margin`` of the boundary."""

    margin: float = 0.0

    def __call__(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def jacobian(self, x, y) -> np.ndarray:
        raise NotImplementedError

    def div(self, x, y) -> np.ndarray:
        D = self.jacobian(x, y)
        return D[0, 0] + D[1, 1]

    def descriptor(self) -> dict:
        raise NotImplementedError

    def is_zero(self) -> bool:
        return False

    def __add__(self, other: "DeformationField") -> "DeformationField":
        return CombinationField([(1.0, self), (1.0, other)])

    def __rmul__(self, c: float) -> "DeformationField":
        return CombinationField([(float(c), self)])

    def __neg__(self) -> "DeformationField":
        return CombinationField([(-1.0, self)])


class ZeroField(DeformationField):
    margin = 0.5

    def __call__(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.zeros((2,) + x.shape)

    def jacobian(self, x, y):
        x = np.asarray(x, dtype=float)
        return np.zeros((2, 2) + x.shape)

    def descriptor(self):
        return {"family": "zero"}

    def is_zero(self):
        return True


def bump(x, y, center, radius):
    """``(1 - r^2/R^2)^4`` inside the disk, 0 outside; returns value and gradient."""
    dx = np.asarray(x, dtype=float) - center[0]
    dy = np.asarray(y, dtype=float) - center[1]
    s = 1.0 - (dx * dx + dy * dy) / radius**2
    inside = s > 0.0
    s = np.where(inside, s, 0.0)
    b = s**4
    db = -8.0 * s**3 / radius**2
    return b, np.stack([db * dx, db * dy])


class AffineBumpField(DeformationField):
    """``V(x) = (offset + A (x - c)) * bump(x)`` with the bump supported in a disk.

    The built-in families are special cases: translation (``A = 0``),
    rotation (``A`` skew) and radial squeeze (``A = -k I``).
    """

    def __init__(self, family: str, center, radius: float, A, offset, params: dict):
        self.family = family
        self.center = (float(center[0]), float(center[1]))
        self.radius = float(radius)
        self.A = np.asarray(A, dtype=float).reshape(2, 2)
        self.offset = np.asarray(offset, dtype=float).reshape(2)
        self._params = params
        if not self.radius > 0:
            raise ValueError("field radius must be positive")
        cx, cy = self.center
        self.margin = min(cx, cy, 1.0 - cx, 1.0 - cy) - self.radius
        if self.margin <= 0.0:
            raise ValueError(
                f"support of {family} field (center {self.center}, radius {self.radius}) "
                "must stay strictly inside the unit square"
            )

    def _affine(self, x, y):
        dx = np.asarray(x, dtype=float) - self.center[0]
        dy = np.asarray(y, dtype=float) - self.center[1]
        A, d = self.A, self.offset
        return np.stack([d[0] + A[0, 0] * dx + A[0, 1] * dy, d[1] + A[1, 0] * dx + A[1, 1] * dy])

    def __call__(self, x, y):
        b, _ = bump(x, y, self.center, self.radius)
        return self._affine(x, y) * b

    def jacobian(self, x, y):
        b, db = bump(x, y, self.center, self.radius)
        w = self._affine(x, y)
        shape = np.shape(b)
        D = np.empty((2, 2) + shape)
        for i in range(2):
            for j in range(2):
                D[i, j] = self.A[i, j] * b + w[i] * db[j]
        return D

    def descriptor(self):
        return {"family": self.family, "center": list(self.center), "radius": self.radius, **self._params}


def translation_field(center=(0.5, 0.5), radius=0.2, amplitude=1.0, direction=(1.0, 0.0)):
    d = np.asarray(direction, dtype=float)
    nd = np.linalg.norm(d)
    if nd == 0:
        raise ValueError("translation direction must be nonzero")
    d = d / nd
    return AffineBumpField("translation", center, radius, np.zeros((2, 2)), amplitude * d,
                           {"amplitude": float(amplitude), "direction": d.tolist()})


def rotation_field(center=(0.5, 0.5), radius=0.2, amplitude=1.0):
    A = amplitude * np.array([[0.0, -1.0], [1.0, 0.0]])
    return AffineBumpField("rotation", center, radius, A, (0.0, 0.0), {"amplitude": float(amplitude)})


def squeeze_field(center=(0.5, 0.5), radius=0.2, amplitude=1.0):
    A = -amplitude * np.eye(2)
    return AffineBumpField("squeeze", center, radius, A, (0.0, 0.0), {"amplitude": float(amplitude)})


FAMILIES = {
    "translation": translation_field,
    "rotation": rotation_field,
    "squeeze": squeeze_field,
}


def field_from_descriptor(desc: dict) -> DeformationField:
    """Build a field from ``{"family": ..., center, radius, amplitude, ...}``."""
    desc = dict(desc)
    family = desc.pop("family", None)
    if family == "zero":
        if desc:
            raise ValueError(f"zero field takes no parameters, got {sorted(desc)}")
        return ZeroField()
    if family == "combination":
        terms = desc.pop("terms")
        if desc:
            raise ValueError(f"unknown keys for combination field: {sorted(desc)}")
        return CombinationField([(float(c), field_from_descriptor(d)) for c, d in terms])
    if family not in FAMILIES:
        raise ValueError(f"unknown field family {family!r}; known: {sorted(FAMILIES)} and 'zero'")
    try:
        return FAMILIES[family](**desc)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {family} field: {exc}") from None


class CombinationField(DeformationField):
    """Finite linear combination of fields."""

    def __init__(self, terms: Sequence[tuple[float, DeformationField]]):
        flat = []
        for c, f in terms:
            if isinstance(f, CombinationField):
                flat.extend((c * c2, f2) for c2, f2 in f.terms)
            elif not f.is_zero():
                flat.append((float(c), f))
        self.terms = [(c, f) for c, f in flat if c != 0.0]
        self.margin = min((f.margin for _, f in self.terms), default=0.5)

    def __call__(self, x, y):
        out = ZeroField()(x, y)
        for c, f in self.terms:
            out = out + c * f(x, y)
        return out

    def jacobian(self, x, y):
        out = ZeroField().jacobian(x, y)
        for c, f in self.terms:
            out = out + c * f.jacobian(x, y)
        return out

    def descriptor(self):
        return {"family": "combination", "terms": [[c, f.descriptor()] for c, f in self.terms]}

    def is_zero(self):
        return not self.terms


class SampledField(DeformationField):
    """Cell-centered samples of ``V`` with bilinear interpolation.

    ``DV`` is taken from centered differences of the samples and
    interpolated the same way.
    """

    def __init__(self, grid: Grid, values, margin: float):
        self.grid = grid
        self.values = np.array(values, dtype=float)
        if self.values.shape != (2,) + grid.shape:
            raise ValueError(f"samples must have shape (2, {grid.n}, {grid.n})")
        X, Y = grid.centers()
        band = (X < margin) | (Y < margin) | (X > 1 - margin) | (Y > 1 - margin)
        if not margin > 0 or np.any(self.values[:, band] != 0.0):
            raise ValueError("sampled field must vanish on a boundary band of positive width")
        self.margin = float(margin)
        g = [np.gradient(self.values[i], grid.h) for i in range(2)]
        self._jac = np.array([[g[0][0], g[0][1]], [g[1][0], g[1][1]]])

    def __call__(self, x, y):
        return np.stack([interpolate(self.values[i], x, y, self.grid) for i in range(2)])

    def jacobian(self, x, y):
        return np.stack([
            np.stack([interpolate(self._jac[i, j], x, y, self.grid) for j in range(2)])
            for i in range(2)
        ])

    def descriptor(self):
        return {"family": "sampled", "n": self.grid.n, "margin": self.margin}


# --- flows -----------------------------------------------------------------


def n_steps(t: float, dt_max: float = DT_MAX) -> int:
    return max(MIN_STEPS, math.ceil(abs(t) / dt_max - 1e-12))


def _as_points(x) -> np.ndarray:
    p = np.asarray(x, dtype=float)
    if p.shape[0] != 2:
        raise ValueError("points must be stacked as an array of shape (2, ...)")
    return p


def advect(V: DeformationField, x, t: float, dt_max: float = DT_MAX) -> np.ndarray:
    """``Phi_t(x)`` by classical RK4 with a fixed step."""
    p = _as_points(x).copy()
    if t == 0.0 or V.is_zero():
        return p
    k = n_steps(t, dt_max)
    dt = t / k
    for _ in range(k):
        k1 = V(p[0], p[1])
        q = p + 0.5 * dt * k1
        k2 = V(q[0], q[1])
        q = p + 0.5 * dt * k2
        k3 = V(q[0], q[1])
        q = p + dt * k3
        k4 = V(q[0], q[1])
        p = p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    if not np.all(np.isfinite(p)):
        raise FlowError("non-finite flow result")
    return p


def _matmul(A, B):
    return np.einsum("ik...,kj...->ij...", A, B)


def flow_with_jacobian(V: DeformationField, x, t: float, dt_max: float = DT_MAX):
    """``(Phi_t(x), DPhi_t(x), JPhi_t(x))`` from the flow plus its variational equation."""
    p = _as_points(x).copy()
    shape = p.shape[1:]
    M = np.zeros((2, 2) + shape)
    M[0, 0] = M[1, 1] = 1.0
    if t != 0.0 and not V.is_zero():
        k = n_steps(t, dt_max)
        dt = t / k
        for _ in range(k):
            k1 = V(p[0], p[1])
            m1 = _matmul(V.jacobian(p[0], p[1]), M)
            q, Q = p + 0.5 * dt * k1, M + 0.5 * dt * m1
            k2 = V(q[0], q[1])
            m2 = _matmul(V.jacobian(q[0], q[1]), Q)
            q, Q = p + 0.5 * dt * k2, M + 0.5 * dt * m2
            k3 = V(q[0], q[1])
            m3 = _matmul(V.jacobian(q[0], q[1]), Q)
            q, Q = p + dt * k3, M + dt * m3
            k4 = V(q[0], q[1])
            m4 = _matmul(V.jacobian(q[0], q[1]), Q)
            p = p + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            M = M + dt / 6.0 * (m1 + 2.0 * m2 + 2.0 * m3 + m4)
    J = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(M))):
        raise FlowError("non-finite flow result")
    if np.any(J <= 0.0):
        raise FlowError(f"flow Jacobian determinant not positive (min {J.min():.3e}); step too large")
    return p, M, J


def flow_jacobian(V: DeformationField, x, t: float, dt_max: float = DT_MAX):
    """``(DPhi_t(x), JPhi_t(x))``."""
    _, M, J = flow_with_jacobian(V, x, t, dt_max)
    return M, J


def inverse_2x2(M: np.ndarray) -> np.ndarray:
    det = M[0, 0] * M[1, 1] - M[0, 1] * M[1, 0]
    if np.any(det == 0.0):
        raise FlowError("singular flow Jacobian")
    return np.stack([
        np.stack([M[1, 1] / det, -M[0, 1] / det]),
        np.stack([-M[1, 0] / det, M[0, 0] / det]),
    ])


def transport_partition(partition: RegionPartition, V: DeformationField, t: float) -> RegionPartition:
    """Labels pulled back along the inverse flow: ``label_t(x) = label(Phi_{-t}(x))``."""
    grid = partition.grid
    if t == 0.0 or V.is_zero():
        return partition
    X, Y = grid.centers()
    back = advect(V, np.stack([X, Y]), -t)
    i, j = grid.cell_index(back[0], back[1])
    return RegionPartition(grid, partition.labels[i, j])


def pullback(u: GridFunction, V: DeformationField, t: float) -> GridFunction:
    """``u o Phi_{-t}`` sampled at the cell centers (bilinear interpolation)."""
    grid = u.grid
    if t == 0.0 or V.is_zero():
        return u
    X, Y = grid.centers()
    back = advect(V, np.stack([X, Y]), -t)
    return GridFunction(grid, interpolate(u.values, back[0], back[1], grid), u.bc)
