"""Minimization of epsilon-regularized variable-exponent energies.

The discrete energy of a grid function ``u`` is

    E(u) = sum_c h^2 m_c J_c [ w_c (s_c + eps^2)^(p_c/2) / p_c
                               + w_fid (u_c^2 / 2 - u_c ft_c) ]

where ``s_c`` is the cell quadratic form of the face gradient with metric
``M_c`` (identity on the reference configuration, ``B B^T`` with
``B = DPhi_t^{-1}`` for the pulled-back energy), ``J_c`` the flow Jacobian,
``ft`` the target (``f`` or ``f o Phi_t``) and ``m_c`` a cell selection mask.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from vxshape.flow import DeformationField, flow_with_jacobian, inverse_2x2
from vxshape.grid import DIRICHLET, Grid, GridFunction, gradient_matrix
from vxshape.partition import INNER, ErodedPartition, ExponentField, gaussian_smooth

log = logging.getLogger(__name__)

EPS_MACH = np.finfo(float).eps


class SolverDivergence(RuntimeError):
    """Non-finite energy or a violated coercivity bound; indicates a bug."""


@dataclass(frozen=True)
class SolverConfig:
    eps_reg: float = 1e-3
    tol: float = 1e-8
    max_iter: int = 200
    bc: str = DIRICHLET
    w_grad: Optional[object] = None  # scalar or per-cell array; None means 1
    w_fid: float = 1.0

    def __post_init__(self):
        if not self.eps_reg >= 0:
            raise ValueError(f"eps_reg must be >= 0, got {self.eps_reg}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if int(self.max_iter) < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.w_fid > 0:
            raise ValueError(f"w_fid must be > 0, got {self.w_fid}")

    def replace(self, **changes) -> "SolverConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class SolverResult:
    u: GridFunction
    energy: float
    grad_norm: float
    iterations: int
    converged: bool
    history: tuple = field(default=(), repr=False)


class _Energy:
    """Discrete energy, gradient and Hessian for one fixed configuration."""

    def __init__(self, grid: Grid, p: np.ndarray, target: np.ndarray, eps: float, bc: str,
                 w_grad=None, w_fid: float = 1.0, M=None, J=None,
                 cell_mask=None, free=None):
        n = grid.n
        self.grid, self.n, self.h = grid, n, grid.h
        self.p = np.broadcast_to(np.asarray(p, dtype=float), grid.shape)
        self.target = np.asarray(target, dtype=float)
        self.eps2 = float(eps) ** 2
        self.bc = bc
        self.w = np.broadcast_to(np.asarray(1.0 if w_grad is None else w_grad, dtype=float), grid.shape)
        self.w_fid = float(w_fid)
        self.M = M
        self.J = np.ones(grid.shape) if J is None else np.asarray(J, dtype=float)
        mask = np.ones(grid.shape) if cell_mask is None else np.asarray(cell_mask, dtype=float)
        self.coef = grid.cell_area * mask * self.J
        self.free = np.ones(n * n, bool) if free is None else np.asarray(free, bool).ravel()
        self.G = gradient_matrix(n, bc)
        self.nfx = (n + 1) * n
        # metric entries; M[0,1] and M[1,0] only enter through their mean
        if M is None:
            self.m00 = self.m11 = 1.0
            self.mc = 0.0
        else:
            self.m00, self.m11 = M[0, 0], M[1, 1]
            self.mc = 0.5 * (M[0, 1] + M[1, 0])

    def faces(self, u: np.ndarray):
        z = self.G @ u.ravel()
        n = self.n
        return z[: self.nfx].reshape(n + 1, n), z[self.nfx:].reshape(n, n + 1)

    def _s(self, gx, gy):
        x2 = 0.5 * (gx[:-1] ** 2 + gx[1:] ** 2)
        y2 = 0.5 * (gy[:, :-1] ** 2 + gy[:, 1:] ** 2)
        xm = 0.5 * (gx[:-1] + gx[1:])
        ym = 0.5 * (gy[:, :-1] + gy[:, 1:])
        return self.m00 * x2 + self.m11 * y2 + 2.0 * self.mc * xm * ym, xm, ym

    def value(self, u: np.ndarray) -> float:
        gx, gy = self.faces(u)
        s, _, _ = self._s(gx, gy)
        dens = self.w * (s + self.eps2) ** (0.5 * self.p) / self.p
        dens = dens + self.w_fid * (0.5 * u * u - u * self.target)
        return float(np.sum(self.coef * dens))

    def value_and_gradient(self, u: np.ndarray):
        n = self.n
        gx, gy = self.faces(u)
        s, xm, ym = self._s(gx, gy)
        base = s + self.eps2
        dens = self.w * base ** (0.5 * self.p) / self.p + self.w_fid * (0.5 * u * u - u * self.target)
        E = float(np.sum(self.coef * dens))
        phi = self.coef * self.w * 0.5 * base ** (0.5 * self.p - 1.0)
        dzx = np.zeros((n + 1, n))
        dzy = np.zeros((n, n + 1))
        dzx[:-1] += phi * (self.m00 * gx[:-1] + self.mc * ym)
        dzx[1:] += phi * (self.m00 * gx[1:] + self.mc * ym)
        dzy[:, :-1] += phi * (self.m11 * gy[:, :-1] + self.mc * xm)
        dzy[:, 1:] += phi * (self.m11 * gy[:, 1:] + self.mc * xm)
        dz = np.concatenate([dzx.ravel(), dzy.ravel()])
        g = (self.G.T @ dz) + (self.coef * self.w_fid * (u - self.target)).ravel()
        g[~self.free] = 0.0
        return E, g.reshape(n, n)

    def hessian(self, u: np.ndarray) -> sp.csc_matrix:
        """Exact Hessian restricted to the free cells."""
        n = self.n
        gx, gy = self.faces(u)
        s, _, _ = self._s(gx, gy)
        base = s + self.eps2
        c = self.coef * self.w
        d1 = c * 0.5 * base ** (0.5 * self.p - 1.0)
        # base = 0 only with eps = 0 and all four faces zero, where the
        # second term carries a zero factor Sz
        with np.errstate(divide="ignore", invalid="ignore"):
            d2 = np.where(base > 0.0, c * 0.25 * (self.p - 2.0) * base ** (0.5 * self.p - 2.0), 0.0)
        m00 = np.broadcast_to(self.m00, (n, n))
        m11 = np.broadcast_to(self.m11, (n, n))
        mc = np.broadcast_to(self.mc, (n, n))
        # local face vector z = (x-left, x-right, y-low, y-high); s = z^T S z
        S = np.zeros((4, 4, n, n))
        S[0, 0] = S[1, 1] = 0.5 * m00
        S[2, 2] = S[3, 3] = 0.5 * m11
        for a in (0, 1):
            for b in (2, 3):
                S[a, b] = S[b, a] = 0.25 * mc
        z = np.stack([gx[:-1], gx[1:], gy[:, :-1], gy[:, 1:]])
        Sz = np.einsum("ab...,b...->a...", S, z)
        ix = np.arange(self.nfx).reshape(n + 1, n)
        iy = self.nfx + np.arange(n * (n + 1)).reshape(n, n + 1)
        loc = np.stack([ix[:-1], ix[1:], iy[:, :-1], iy[:, 1:]])
        rows, cols, vals = [], [], []
        for a in range(4):
            for b in range(4):
                v = 2.0 * d1 * S[a, b] + 4.0 * d2 * Sz[a] * Sz[b]
                rows.append(loc[a].ravel())
                cols.append(loc[b].ravel())
                vals.append(v.ravel())
        nf = self.G.shape[0]
        Hz = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nf, nf))
        H = (self.G.T @ Hz @ self.G).tocsr()
        H = H + sp.diags((self.coef * self.w_fid).ravel())
        idx = np.flatnonzero(self.free)
        return H[idx][:, idx].tocsc()

    def lower_bound(self, u: np.ndarray) -> float:
        """Coercivity bound ``c int |grad u|^p + a int u^2 - b int ft^2`` over the selected cells."""
        gx, gy = self.faces(u)
        s_id = 0.5 * (gx[:-1] ** 2 + gx[1:] ** 2) + 0.5 * (gy[:, :-1] ** 2 + gy[:, 1:] ** 2)
        if self.M is None:
            lam = np.ones(self.grid.shape)
        else:
            tr = self.m00 + self.m11
            det = self.m00 * self.m11 - self.mc**2
            lam = 0.5 * tr - np.sqrt(np.maximum(0.25 * tr**2 - det, 0.0))
        sel = self.coef > 0
        area = self.coef / np.where(sel, self.J, 1.0)
        jmin = float(self.J[sel].min()) if sel.any() else 1.0
        jmax = float(self.J[sel].max()) if sel.any() else 1.0
        c = jmin * self.w * np.maximum(lam, 0.0) ** (0.5 * self.p) / self.p
        grad_term = np.sum(area * c * s_id ** (0.5 * self.p))
        fid = self.w_fid * (0.25 * jmin * np.sum(area * u * u) - (jmax**2 / jmin) * np.sum(area * self.target**2))
        return float(grad_term + fid)


def _norm(g: np.ndarray, h: float) -> float:
    """L2 norm of the first variation in continuum scaling."""
    return float(np.sqrt(np.sum((g / (h * h)) ** 2) * h * h))


def _run(problem: _Energy, u0: np.ndarray, config: SolverConfig) -> SolverResult:
    h = problem.h
    free = problem.free.reshape(problem.grid.shape)
    idx = np.flatnonzero(problem.free)
    u = np.array(u0, dtype=float)
    E, g = problem.value_and_gradient(u)
    if not np.isfinite(E):
        raise SolverDivergence("non-finite energy at the initial guess")
    history = [E]
    d_prev = y_prev = g_prev = None
    gnorm = _norm(g, h)
    converged = gnorm <= config.tol * (1.0 + abs(E))
    it = 0
    while not converged and it < config.max_iter:
        it += 1
        solve = spla.splu(problem.hessian(u)).solve
        y = np.zeros(u.size)
        y[idx] = solve(g.ravel()[idx])
        y = y.reshape(u.shape)
        d = -y
        if d_prev is not None:
            beta = max(0.0, float(np.sum(g * (y - y_prev))) / float(np.sum(g_prev * y_prev)))
            d = -y + beta * d_prev
            if np.sum(d * g) >= 0.0:
                d = -y
        slope = float(np.sum(d * g))
        alpha = 1.0
        accepted = False
        for _ in range(60):
            trial = u + alpha * d
            E_new, g_new = problem.value_and_gradient(trial)
            if not np.isfinite(E_new):
                alpha *= 0.5
                continue
            if E_new <= E + 1e-4 * alpha * slope:
                accepted = True
                break
            # below the resolution of the energy, rely on convexity: a step
            # that keeps the directional derivative non-positive cannot go uphill
            floor = 64.0 * EPS_MACH * (abs(E) + float(np.sum(np.abs(problem.coef))) + 1.0)
            if E_new - E <= floor and float(np.sum(g_new * d)) <= 0.0:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            log.debug("line search failed at iteration %d (|g|=%.3e)", it, gnorm)
            break
        g_prev, y_prev, d_prev = g, y, d
        u, E, g = trial, E_new, g_new
        history.append(E)
        gnorm = _norm(g, h)
        if problem.lower_bound(u) > E + 1e-9 * (1.0 + abs(E)):
            raise SolverDivergence("coercivity bound violated: energy below its proven lower bound")
        converged = gnorm <= config.tol * (1.0 + abs(E))
    if not np.isfinite(E):
        raise SolverDivergence("non-finite energy")
    uf = GridFunction(problem.grid, np.where(free, u, u0), config.bc)
    return SolverResult(uf, E, gnorm, it, bool(converged), tuple(history))


def _initial(f: GridFunction, initial) -> np.ndarray:
    if initial is None:
        return np.array(f.values)
    if isinstance(initial, SolverResult):
        initial = initial.u
    if isinstance(initial, GridFunction):
        return np.array(initial.values)
    return np.array(initial, dtype=float)


def _check_grids(*objs) -> None:
    grids = [o.grid for o in objs]
    for g in grids[1:]:
        if g != grids[0]:
            raise ValueError(f"grid mismatch: {grids[0]} vs {g}")


def energy(u: GridFunction, p: ExponentField, f: GridFunction, eps_reg: float,
           w_grad=None, w_fid: float = 1.0) -> float:
    """Reference-configuration energy of ``u`` (boundary handling from ``u.bc``)."""
    _check_grids(u, p, f)
    prob = _Energy(u.grid, p.values, f.values, eps_reg, u.bc, w_grad, w_fid)
    return prob.value(np.asarray(u.values))


def _pulled_back_problem(grid: Grid, p: ExponentField, f: GridFunction, V: DeformationField, t: float,
                         eps_reg: float, bc: str, w_grad=None, w_fid=1.0) -> _Energy:
    if t == 0.0 or V.is_zero():
        return _Energy(grid, p.values, f.values, eps_reg, bc, w_grad, w_fid)
    X, Y = grid.centers()
    phi, D, J = flow_with_jacobian(V, np.stack([X, Y]), t)
    B = inverse_2x2(D)
    M = np.einsum("ik...,jk...->ij...", B, B)
    target = f.evaluate_at(phi[0], phi[1])
    return _Energy(grid, p.values, target, eps_reg, bc, w_grad, w_fid, M=M, J=J)


def energy_t(u: GridFunction, p: ExponentField, f: GridFunction, V: DeformationField, t: float,
             eps_reg: float, w_grad=None, w_fid: float = 1.0) -> float:
    """Pulled-back energy on the fixed reference grid and exponent."""
    _check_grids(u, p, f)
    prob = _pulled_back_problem(u.grid, p, f, V, t, eps_reg, u.bc, w_grad, w_fid)
    return prob.value(np.asarray(u.values))


def first_variation(u: GridFunction, p: ExponentField, f: GridFunction, eps_reg: float,
                    w_grad=None, w_fid: float = 1.0) -> GridFunction:
    """Discrete Euler-Lagrange residual ``dE/du / h^2``."""
    prob = _Energy(u.grid, p.values, f.values, eps_reg, u.bc, w_grad, w_fid)
    _, g = prob.value_and_gradient(np.asarray(u.values))
    return GridFunction(u.grid, g / u.grid.cell_area, u.bc)


def _check_smooth(p_minus: float, eps_reg: float) -> None:
    if p_minus <= 1.0:
        raise ValueError("minimization needs p_- > 1")
    if eps_reg == 0.0 and p_minus < 2.0:
        raise ValueError("with p_- < 2 the energy is not differentiable where grad u = 0; use eps_reg > 0")


def mollified_forcing(f: GridFunction, eps_reg: float) -> GridFunction:
    """Smooth approximant of ``f`` for the regularized region problems (width ``eps_reg``).

    The Gaussian support is below one cell unless ``eps_reg`` is comparable
    to ``h``, in which case ``f`` is returned unchanged.
    """
    if eps_reg <= 0.0:
        return f
    return gaussian_smooth(f, eps_reg)


def minimize(p: ExponentField, f: GridFunction, config: SolverConfig = SolverConfig(),
             initial=None) -> SolverResult:
    """Minimize the reference energy over grid functions with ``config.bc``."""
    _check_grids(p, f)
    _check_smooth(p.p_minus, config.eps_reg)
    prob = _Energy(p.grid, p.values, f.values, config.eps_reg, config.bc, config.w_grad, config.w_fid)
    return _run(prob, _initial(f, initial), config)


def minimize_t(p: ExponentField, f: GridFunction, V: DeformationField, t: float,
               config: SolverConfig = SolverConfig(), initial=None) -> SolverResult:
    """Minimize the pulled-back energy; its minimum value is ``s(t)``."""
    _check_grids(p, f)
    _check_smooth(p.p_minus, config.eps_reg)
    prob = _pulled_back_problem(p.grid, p, f, V, t, config.eps_reg, config.bc, config.w_grad, config.w_fid)
    return _run(prob, _initial(f, initial), config)


def region_cells(free: np.ndarray) -> np.ndarray:
    """Cells whose energy density involves a free cell (free set plus face neighbours)."""
    cross = ndimage.generate_binary_structure(2, 1)
    return ndimage.binary_dilation(free, structure=cross)


def solve_region(eroded: ErodedPartition, side: int, boundary_data: GridFunction, f: GridFunction,
                 p_i: float, config: SolverConfig = SolverConfig()) -> SolverResult:
    """Constant-exponent Dirichlet problem on ``D_side^delta``.

    Cells outside the region keep ``boundary_data``; walls follow
    ``config.bc``.  Only densities touching the region enter the energy.
    """
    _check_grids(eroded, boundary_data, f)
    free = eroded.mask(side)
    if not free.any():
        raise ValueError(f"region D{side}^delta is empty (delta={eroded.delta})")
    _check_smooth(float(p_i), config.eps_reg)
    f_eps = mollified_forcing(f, config.eps_reg)
    prob = _Energy(eroded.grid, p_i, f_eps.values, config.eps_reg, config.bc, config.w_grad, config.w_fid,
                   cell_mask=region_cells(free), free=free)
    return _run(prob, np.array(boundary_data.values), config)


def region_energy(u: GridFunction, eroded: ErodedPartition, side: int, f: GridFunction,
                  p_i: float, eps_reg: float) -> float:
    free = eroded.mask(side)
    prob = _Energy(u.grid, p_i, f.values, eps_reg, u.bc, cell_mask=region_cells(free), free=free)
    return prob.value(np.asarray(u.values))


def side_exponent(p: ExponentField, side: int) -> float:
    return p.p1 if side == INNER else p.p2
