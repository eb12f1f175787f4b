"""Uniform cell-centered grids on the unit square and their discrete calculus.

Values live at cell centers ``((i + 1/2) h, (j + 1/2) h)``; array index
``[i, j]`` runs along x first.  Gradients live on cell faces, including the
wall faces, which is what makes a zero Dirichlet condition second-order
accurate on a cell-centered layout:

* x-faces have shape ``(n + 1, n)``, y-faces ``(n, n + 1)``;
* interior faces carry ``(u[i] - u[i-1]) / h``;
* wall faces carry ``+-2 u / h`` (ghost odd-reflected, wall value 0) for
  ``dirichlet_zero`` and ``0`` for ``natural``.

Face vectors are paired with the weighted inner product in which wall faces
count one half (they only cover half a cell).  With that pairing
``divergence`` is exactly the negative adjoint of ``gradient`` and
``sum_cells h^2 |grad u|^2`` equals ``<grad u, grad u>``.
"""

from __future__ import annotations

import functools
import os
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
from scipy import ndimage

DIRICHLET = "dirichlet_zero"
NATURAL = "natural"
BOUNDARY_CONDITIONS = (DIRICHLET, NATURAL)

AnalyticFunction = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Grid:
    """``n x n`` uniform grid over ``(0, 1)^2``."""

    n: int

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 8:
            raise ValueError(f"grid size must be an integer >= 8, got {self.n!r}")

    @property
    def h(self) -> float:
        return 1.0 / self.n

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n, self.n)

    @property
    def cell_area(self) -> float:
        return self.h * self.h

    def centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell-center coordinates as two ``(n, n)`` arrays (ij indexing)."""
        return _centers(self.n)

    def x_faces(self) -> tuple[np.ndarray, np.ndarray]:
        """Midpoints of the x-faces, shape ``(n + 1, n)``."""
        h = self.h
        xs = np.arange(self.n + 1) * h
        ys = (np.arange(self.n) + 0.5) * h
        return np.meshgrid(xs, ys, indexing="ij")

    def y_faces(self) -> tuple[np.ndarray, np.ndarray]:
        """Midpoints of the y-faces, shape ``(n, n + 1)``."""
        h = self.h
        xs = (np.arange(self.n) + 0.5) * h
        ys = np.arange(self.n + 1) * h
        return np.meshgrid(xs, ys, indexing="ij")

    def cell_index(self, x, y) -> tuple[np.ndarray, np.ndarray]:
        """Indices of the cells containing the points (clipped to the grid)."""
        i = np.clip(np.floor(np.asarray(x) * self.n).astype(int), 0, self.n - 1)
        j = np.clip(np.floor(np.asarray(y) * self.n).astype(int), 0, self.n - 1)
        return i, j


@functools.lru_cache(maxsize=16)
def _centers(n: int) -> tuple[np.ndarray, np.ndarray]:
    c = (np.arange(n) + 0.5) / n
    X, Y = np.meshgrid(c, c, indexing="ij")
    X.setflags(write=False)
    Y.setflags(write=False)
    return X, Y


def _check_bc(bc: str) -> str:
    if bc not in BOUNDARY_CONDITIONS:
        raise ValueError(f"unknown boundary condition {bc!r}; expected one of {BOUNDARY_CONDITIONS}")
    return bc


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if arr.shape != shape:
        raise ValueError(f"expected array of shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field values must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Scalar field sampled at cell centers.

    ``source`` optionally keeps the analytic function the samples came from;
    it is used to evaluate the field off-grid (``f o Phi_t``) exactly.
    """

    grid: Grid
    values: np.ndarray
    bc: str = NATURAL
    source: Optional[AnalyticFunction] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen(self.values, self.grid.shape))
        _check_bc(self.bc)

    @classmethod
    def from_function(cls, grid: Grid, fn: AnalyticFunction, bc: str = NATURAL) -> "GridFunction":
        X, Y = grid.centers()
        vals = np.broadcast_to(np.asarray(fn(X, Y), dtype=float), grid.shape)
        return cls(grid, vals, bc, source=fn)

    @classmethod
    def constant(cls, grid: Grid, c: float, bc: str = NATURAL) -> "GridFunction":
        return cls(grid, np.full(grid.shape, float(c)), bc)

    def with_values(self, values, bc: Optional[str] = None) -> "GridFunction":
        return GridFunction(self.grid, values, self.bc if bc is None else bc)

    def with_bc(self, bc: str) -> "GridFunction":
        return GridFunction(self.grid, self.values, bc, self.source)

    def evaluate_at(self, x, y) -> np.ndarray:
        """Off-grid values: the analytic source if known, else bilinear interpolation."""
        if self.source is not None:
            return np.broadcast_to(np.asarray(self.source(x, y), dtype=float), np.shape(x)).copy()
        return interpolate(self.values, x, y, self.grid)


def interpolate(values: np.ndarray, x, y, grid: Grid, order: int = 1) -> np.ndarray:
    """Interpolate cell-centered samples at arbitrary points (edge-extended)."""
    n = grid.n
    ci = np.asarray(x) * n - 0.5
    cj = np.asarray(y) * n - 0.5
    return ndimage.map_coordinates(np.asarray(values, dtype=float), [ci, cj], order=order, mode="nearest")


@dataclass(frozen=True, eq=False)
class VectorGridFunction:
    """Vector field on the face-staggered layout produced by :func:`gradient`."""

    grid: Grid
    x: np.ndarray
    y: np.ndarray
    bc: str = NATURAL

    def __post_init__(self):
        n = self.grid.n
        object.__setattr__(self, "x", _frozen(self.x, (n + 1, n)))
        object.__setattr__(self, "y", _frozen(self.y, (n, n + 1)))
        _check_bc(self.bc)

    def cell_mean(self) -> np.ndarray:
        """Face pairs averaged onto cells, shape ``(2, n, n)``."""
        return np.stack([0.5 * (self.x[:-1] + self.x[1:]), 0.5 * (self.y[:, :-1] + self.y[:, 1:])])

    def cell_square_norm(self) -> np.ndarray:
        """Per-cell ``|w|^2`` as the mean of the squared adjacent faces."""
        return cell_quadratic(self.x, self.y)


def face_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature weights of the face inner product (1 interior, 1/2 on walls)."""
    wx = np.ones((n + 1, n))
    wx[0] = wx[-1] = 0.5
    return wx, wx.T.copy()


def inner(a: VectorGridFunction, b: VectorGridFunction) -> float:
    """Weighted face inner product ``<a, b>``."""
    _same_grid(a.grid, b.grid)
    wx, wy = face_weights(a.grid.n)
    return a.grid.cell_area * float(np.sum(wx * a.x * b.x) + np.sum(wy * a.y * b.y))


def _same_grid(*grids: Grid) -> None:
    g0 = grids[0]
    for g in grids[1:]:
        if g != g0:
            raise ValueError(f"grid mismatch: {g0} vs {g}")


def face_differences(values: np.ndarray, h: float, bc: str) -> tuple[np.ndarray, np.ndarray]:
    """Face gradients of a raw ``(n, n)`` array."""
    n = values.shape[0]
    gx = np.zeros((n + 1, n))
    gy = np.zeros((n, n + 1))
    gx[1:-1] = (values[1:] - values[:-1]) / h
    gy[:, 1:-1] = (values[:, 1:] - values[:, :-1]) / h
    if bc == DIRICHLET:
        gx[0] = 2.0 * values[0] / h
        gx[-1] = -2.0 * values[-1] / h
        gy[:, 0] = 2.0 * values[:, 0] / h
        gy[:, -1] = -2.0 * values[:, -1] / h
    return gx, gy


def gradient(u: GridFunction) -> VectorGridFunction:
    """Face gradient of ``u`` honouring its boundary tag."""
    gx, gy = face_differences(u.values, u.grid.h, u.bc)
    return VectorGridFunction(u.grid, gx, gy, u.bc)


def divergence(w: VectorGridFunction) -> GridFunction:
    """Cell divergence, the negative adjoint of :func:`gradient`.

    Under ``natural`` the walls are no-flux: wall face values of ``w`` are
    ignored so the adjoint identity holds for both tags.
    """
    h = w.grid.h
    wx = np.array(w.x)
    wy = np.array(w.y)
    if w.bc == NATURAL:
        wx[0] = wx[-1] = 0.0
        wy[:, 0] = wy[:, -1] = 0.0
    div = (wx[1:] - wx[:-1]) / h + (wy[:, 1:] - wy[:, :-1]) / h
    return GridFunction(w.grid, div, w.bc)


def integrate(u: GridFunction) -> float:
    """Midpoint rule over the unit square."""
    return float(np.sum(u.values)) * u.grid.cell_area


def integrate_array(values: np.ndarray, h: float) -> float:
    return float(np.sum(values)) * h * h


def cell_quadratic(gx: np.ndarray, gy: np.ndarray, A: Optional[np.ndarray] = None) -> np.ndarray:
    """Per-cell quadratic form ``grad u . A grad u`` from face gradients.

    Squared components are averaged from the two adjacent faces; the mixed
    term uses the product of averaged components.  ``A`` has shape
    ``(2, 2, n, n)`` (or ``(2, 2)``); it defaults to the identity.
    """
    x2 = 0.5 * (gx[:-1] ** 2 + gx[1:] ** 2)
    y2 = 0.5 * (gy[:, :-1] ** 2 + gy[:, 1:] ** 2)
    if A is None:
        return x2 + y2
    xm = 0.5 * (gx[:-1] + gx[1:])
    ym = 0.5 * (gy[:, :-1] + gy[:, 1:])
    return A[0, 0] * x2 + A[1, 1] * y2 + (A[0, 1] + A[1, 0]) * xm * ym


def cell_gradient(u: GridFunction) -> np.ndarray:
    """Gradient averaged onto cells, shape ``(2, n, n)``."""
    return gradient(u).cell_mean()


@functools.lru_cache(maxsize=16)
def gradient_matrix(n: int, bc: str) -> sp.csr_matrix:
    """Sparse face-gradient operator; rows are x-faces (ij order) then y-faces."""
    _check_bc(bc)
    h = 1.0 / n
    idx = np.arange(n * n).reshape(n, n)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        rows.append(np.ravel(r))
        cols.append(np.ravel(c))
        vals.append(np.broadcast_to(v, np.shape(r)).ravel())

    fx = np.arange((n + 1) * n).reshape(n + 1, n)
    add(fx[1:-1], idx[1:], 1.0 / h)
    add(fx[1:-1], idx[:-1], -1.0 / h)
    off = (n + 1) * n
    fy = off + np.arange(n * (n + 1)).reshape(n, n + 1)
    add(fy[:, 1:-1], idx[:, 1:], 1.0 / h)
    add(fy[:, 1:-1], idx[:, :-1], -1.0 / h)
    if bc == DIRICHLET:
        add(fx[0], idx[0], 2.0 / h)
        add(fx[-1], idx[-1], -2.0 / h)
        add(fy[:, 0], idx[:, 0], 2.0 / h)
        add(fy[:, -1], idx[:, -1], -2.0 / h)
    G = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(2 * off, n * n),
    )
    return G


# --- PGM I/O ---------------------------------------------------------------


class PGMError(ValueError):
    """Base class for PGM problems."""


class PGMHeaderError(PGMError):
    """Malformed or unsupported PGM header/body."""


class PGMShapeError(PGMError):
    """Image is not square (or too small for a grid)."""


class PGMReadError(PGMError, OSError):
    """File could not be read."""


_TOKEN = re.compile(rb"\s*(#[^\n]*\n\s*)*(\S+)")


def _read_header(data: bytes):
    pos = 0
    tokens = []
    while len(tokens) < 4:
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PGMHeaderError("truncated PGM header")
        tokens.append(m.group(2))
        pos = m.end()
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise PGMHeaderError(f"unsupported magic number {magic!r}")
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise PGMHeaderError(f"non-integer header field: {exc}") from None
    if width <= 0 or height <= 0 or not (0 < maxval < 65536):
        raise PGMHeaderError(f"invalid header values {width}x{height} maxval={maxval}")
    return magic, width, height, maxval, pos


def load_pgm(path, bc: str = NATURAL) -> GridFunction:
    """Read a P2/P5 image as a grid function with values in ``[0, 1]``."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise PGMReadError(f"cannot read {os.fspath(path)!r}: {exc.strerror or exc}") from exc
    magic, width, height, maxval, pos = _read_header(data)
    if width != height:
        raise PGMShapeError(f"image must be square, got {width}x{height}")
    count = width * height
    if magic == b"P5":
        body = data[pos + 1:]
        dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
        need = count * np.dtype(dtype).itemsize
        if len(body) < need:
            raise PGMHeaderError(f"P5 body too short: {len(body)} < {need} bytes")
        pixels = np.frombuffer(body[:need], dtype=dtype).astype(float)
    else:
        try:
            pixels = np.array([int(t) for t in data[pos:].split()], dtype=float)
        except ValueError:
            raise PGMHeaderError("non-integer pixel value in P2 body") from None
        if pixels.size < count:
            raise PGMHeaderError(f"P2 body has {pixels.size} pixels, expected {count}")
        pixels = pixels[:count]
    if np.any(pixels > maxval):
        raise PGMHeaderError("pixel value exceeds maxval")
    # PGM rows run top to bottom; index [i, j] is (x, y) with y pointing up.
    img = pixels.reshape(height, width)[::-1].T / maxval
    try:
        grid = Grid(width)
    except ValueError as exc:
        raise PGMShapeError(str(exc)) from None
    return GridFunction(grid, img, bc)


def save_pgm(u: GridFunction, path) -> None:
    """Write ``u`` as binary P5 (values clamped to ``[0, 1]``, maxval 255)."""
    img = np.clip(np.asarray(u.values), 0.0, 1.0).T[::-1]
    pixels = np.rint(img * 255.0).astype(np.uint8)
    n = u.grid.n
    with open(path, "wb") as fh:
        fh.write(f"P5\n{n} {n}\n255\n".encode("ascii"))
        fh.write(pixels.tobytes())
