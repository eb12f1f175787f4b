"""Two-region partitions, piecewise exponents, erosion and discrete interfaces."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage, signal

from vxshape.grid import NATURAL, Grid, GridFunction, cell_gradient

INNER = 1  # label of D1 (edges, low exponent)
OUTER = 2  # label of D2 (smooth part)


@dataclass(frozen=True, eq=False)
class RegionPartition:
    grid: Grid
    labels: np.ndarray

    def __post_init__(self):
        lab = np.array(self.labels, dtype=np.int8)
        if lab.shape != self.grid.shape:
            raise ValueError(f"labels must have shape {self.grid.shape}, got {lab.shape}")
        if not np.all((lab == INNER) | (lab == OUTER)):
            raise ValueError("labels must be 1 or 2")
        lab.setflags(write=False)
        object.__setattr__(self, "labels", lab)

    def mask(self, side: int) -> np.ndarray:
        return self.labels == side

    def area(self, side: int) -> float:
        return float(np.count_nonzero(self.labels == side)) * self.grid.cell_area

    def __eq__(self, other):
        return (
            isinstance(other, RegionPartition)
            and other.grid == self.grid
            and np.array_equal(other.labels, self.labels)
        )

    __hash__ = None

    @classmethod
    def uniform(cls, grid: Grid, side: int = OUTER) -> "RegionPartition":
        return cls(grid, np.full(grid.shape, side))

    @classmethod
    def disk(cls, grid: Grid, center=(0.5, 0.5), radius: float = 0.25) -> "RegionPartition":
        X, Y = grid.centers()
        inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 < radius**2
        return cls(grid, np.where(inside, INNER, OUTER))

    @classmethod
    def half_plane(cls, grid: Grid, x0: float = 0.5) -> "RegionPartition":
        X, _ = grid.centers()
        return cls(grid, np.where(X < x0, INNER, OUTER))

    def to_grid_function(self) -> GridFunction:
        """Mask image: D1 -> 1.0, D2 -> 0.0 (255 / 0 once saved as PGM)."""
        return GridFunction(self.grid, (self.labels == INNER).astype(float))

    @classmethod
    def from_grid_function(cls, mask: GridFunction) -> "RegionPartition":
        return cls(mask.grid, np.where(mask.values >= 0.5, INNER, OUTER))


@dataclass(frozen=True, eq=False)
class ExponentField:
    """``p = p1`` on D1 and ``p2`` on D2."""

    partition: RegionPartition
    p1: float
    p2: float

    def __post_init__(self):
        for name, p in (("p1", self.p1), ("p2", self.p2)):
            if not np.isfinite(p) or p <= 1.0:
                raise ValueError(f"{name} must be a finite exponent > 1, got {p}")
        vals = np.where(self.partition.labels == INNER, float(self.p1), float(self.p2))
        vals.setflags(write=False)
        object.__setattr__(self, "_values", vals)

    @property
    def grid(self) -> Grid:
        return self.partition.grid

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def p_minus(self) -> float:
        return float(self._values.min())

    @property
    def p_plus(self) -> float:
        return float(self._values.max())

    def exponent(self, side: int) -> float:
        return float(self.p1 if side == INNER else self.p2)

    def with_partition(self, partition: RegionPartition) -> "ExponentField":
        return ExponentField(partition, self.p1, self.p2)


def exponent_field(partition: RegionPartition, p1: float, p2: float) -> ExponentField:
    return ExponentField(partition, p1, p2)


def constant_exponent(grid: Grid, q: float) -> ExponentField:
    return ExponentField(RegionPartition.uniform(grid), q, q)


def gaussian_kernel(sigma: float, h: float) -> np.ndarray:
    """Unit-mass samples of ``exp(-|x|^2 / (4 sigma^2))`` cut at radius ``4 sqrt(2) sigma``."""
    radius = 4.0 * np.sqrt(2.0) * sigma
    m = int(np.floor(radius / h))
    k = np.arange(-m, m + 1) * h
    KX, KY = np.meshgrid(k, k, indexing="ij")
    r2 = KX**2 + KY**2
    ker = np.where(r2 <= radius**2, np.exp(-r2 / (4.0 * sigma**2)), 0.0)
    return ker / ker.sum()


def gaussian_smooth(I: GridFunction, sigma: float) -> GridFunction:
    """Convolve with the Gaussian filter, replicating the image at its edges."""
    if not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    ker = gaussian_kernel(sigma, I.grid.h)
    m = ker.shape[0] // 2
    if m == 0:
        return I.with_values(I.values)
    padded = np.pad(I.values, m, mode="edge")
    out = signal.fftconvolve(padded, ker, mode="valid")
    return I.with_values(out)


def smoothed_gradient_magnitude(I: GridFunction, sigma: float) -> np.ndarray:
    smooth = gaussian_smooth(I.with_bc(NATURAL), sigma)
    g = cell_gradient(smooth)
    return np.hypot(g[0], g[1])


def build_partition(I: GridFunction, sigma: float, beta: float) -> RegionPartition:
    """D1 = cells where the smoothed gradient exceeds ``beta`` (ties go to D2)."""
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    mag = smoothed_gradient_magnitude(I, sigma)
    return RegionPartition(I.grid, np.where(mag > beta, INNER, OUTER))


@dataclass(frozen=True, eq=False)
class ErodedPartition:
    parent: RegionPartition
    delta: float
    inner: np.ndarray  # D1^delta
    outer: np.ndarray  # D2^delta
    band: np.ndarray   # A_delta

    @property
    def grid(self) -> Grid:
        return self.parent.grid

    def mask(self, side: int) -> np.ndarray:
        return self.inner if side == INNER else self.outer


def _distance_to(mask: np.ndarray, h: float) -> np.ndarray:
    """Distance from every cell center to the nearest center in ``mask``."""
    if not mask.any():
        return np.full(mask.shape, np.inf)
    return ndimage.distance_transform_edt(~mask) * h


def erode(partition: RegionPartition, delta: float) -> ErodedPartition:
    h = partition.grid.h
    if delta < h * (1.0 - 1e-12):
        raise ValueError(f"delta={delta} is below the grid spacing h={h}")
    lab = partition.labels
    d_to_2 = _distance_to(lab == OUTER, h)
    d_to_1 = _distance_to(lab == INNER, h)
    inner = (lab == INNER) & (d_to_2 > delta)
    outer = (lab == OUTER) & (d_to_1 > delta)
    band = ~(inner | outer)
    for a in (inner, outer, band):
        a.setflags(write=False)
    return ErodedPartition(partition, float(delta), inner, outer, band)


@dataclass(frozen=True, eq=False)
class InterfaceSet:
    """Edges of ``D_side^delta`` inside the domain.

    ``normals`` are unit normals out of the region estimated from the
    smoothed indicator; ``edge_normals`` are the axis-aligned staircase
    normals; ``weights`` are ``h |normal . edge_normal|``.  ``inside`` and
    ``outside`` hold flat indices of the two cells sharing each edge.
    """

    side: int
    h: float
    positions: np.ndarray
    normals: np.ndarray
    edge_normals: np.ndarray
    weights: np.ndarray
    inside: np.ndarray
    outside: np.ndarray

    def __len__(self):
        return len(self.weights)

    @property
    def length(self) -> float:
        return float(self.weights.sum())


def _indicator_normals(mask: np.ndarray, grid: Grid) -> np.ndarray:
    smooth = ndimage.gaussian_filter(mask.astype(float), sigma=2.0, mode="nearest")
    gx, gy = np.gradient(smooth, grid.h)
    return np.stack([-gx, -gy])


def interface(eroded: ErodedPartition, side: int) -> InterfaceSet:
    grid = eroded.grid
    n, h = grid.n, grid.h
    mask = eroded.mask(side)
    nrm = _indicator_normals(mask, grid)
    idx = np.arange(n * n).reshape(n, n)

    pos, edge_nu, cont_nu, ins, outs = [], [], [], [], []
    # x-direction neighbours (vertical edges) then y-direction (horizontal edges)
    for axis in (0, 1):
        a = mask[:-1] if axis == 0 else mask[:, :-1]
        b = mask[1:] if axis == 0 else mask[:, 1:]
        ia = idx[:-1] if axis == 0 else idx[:, :-1]
        ib = idx[1:] if axis == 0 else idx[:, 1:]
        for sel, sign in ((a & ~b, 1.0), (~a & b, -1.0)):
            cin = np.where(sign > 0, ia[sel], ib[sel])
            cout = np.where(sign > 0, ib[sel], ia[sel])
            i_lo = np.minimum(cin, cout)
            ci, cj = np.divmod(i_lo, n)
            if axis == 0:
                p = np.stack([(ci + 1.0) * h, (cj + 0.5) * h], axis=1)
                e = np.tile([sign, 0.0], (len(ci), 1))
            else:
                p = np.stack([(ci + 0.5) * h, (cj + 1.0) * h], axis=1)
                e = np.tile([0.0, sign], (len(ci), 1))
            vin = nrm[:, cin // n, cin % n]
            vout = nrm[:, cout // n, cout % n]
            v = 0.5 * (vin + vout).T
            pos.append(p)
            edge_nu.append(e)
            cont_nu.append(v)
            ins.append(cin)
            outs.append(cout)

    if not pos or sum(len(p) for p in pos) == 0:
        empty = np.zeros((0, 2))
        return InterfaceSet(side, h, empty, empty, empty, np.zeros(0),
                            np.zeros(0, int), np.zeros(0, int))
    positions = np.concatenate(pos)
    edge_normals = np.concatenate(edge_nu)
    normals = np.concatenate(cont_nu)
    norm = np.linalg.norm(normals, axis=1)
    degenerate = norm < 1e-12
    normals = np.where(degenerate[:, None], edge_normals, normals / np.where(degenerate, 1.0, norm)[:, None])
    weights = h * np.abs(np.sum(normals * edge_normals, axis=1))
    return InterfaceSet(side, h, positions, normals, edge_normals, weights,
                        np.concatenate(ins), np.concatenate(outs))
