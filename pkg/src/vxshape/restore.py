"""Edge-aware image restoration by steepest descent on the region partition.

The restored image minimizes

    J(v) = 1/(2 beta) int |grad v|^p(x) + beta/2 int (v - I)^2

with ``p = p1`` on the edge region D1 and ``p2`` elsewhere.  D1 starts as the
set where the smoothed image gradient exceeds ``beta`` and is then moved
along deformation fields that make the shape derivative of ``J`` negative.
"""

from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from vxshape.flow import CombinationField, FlowError, ZeroField, flow_with_jacobian, translation_field, transport_partition
from vxshape.grid import NATURAL, GridFunction
from vxshape.partition import INNER, OUTER, ExponentField, RegionPartition, build_partition
from vxshape.shapederiv import volume_derivative
from vxshape.solver import SolverConfig, SolverResult, minimize

log = logging.getLogger(__name__)


class RestoreError(RuntimeError):
    """Inner solver failure; ``trace`` holds the iterations completed so far."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class DescentConfig:
    dt: float = 0.03           # initial step, in units of domain length
    m: int = 8                 # number of basis centers (two translation fields each)
    max_iter: int = 20
    threshold: float = 1e-7    # stop once |dJ/dt along V*| falls below this
    radius: float = 0.15       # support radius of the basis bumps
    min_dt_factor: float = 1.0 / 32.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"descent step dt must be > 0, got {self.dt}")
        if int(self.m) < 1:
            raise ValueError(f"basis count m must be >= 1, got {self.m}")
        if int(self.max_iter) < 0:
            raise ValueError(f"max_iter must be >= 0, got {self.max_iter}")
        if not self.threshold >= 0:
            raise ValueError(f"threshold must be >= 0, got {self.threshold}")
        if not 0 < self.radius < 0.5:
            raise ValueError(f"basis radius must lie in (0, 0.5), got {self.radius}")
        if not 0 < self.min_dt_factor < 1:
            raise ValueError(f"min_dt_factor must lie in (0, 1), got {self.min_dt_factor}")


@dataclass(frozen=True)
class RestoreConfig:
    beta: float = 2.0
    sigma: float = 0.02
    k: float = 0.0  # kept for provenance only
    p1: float = 1.2
    p2: float = 2.0
    descent: DescentConfig = DescentConfig()
    solver: SolverConfig = SolverConfig(bc=NATURAL, tol=1e-8)

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be > 0, got {self.beta}")
        if not self.sigma > 0:
            raise ValueError(f"sigma must be > 0, got {self.sigma}")
        if not self.k >= 0:
            raise ValueError(f"k must be >= 0, got {self.k}")
        for name, p in (("p1", self.p1), ("p2", self.p2)):
            if not p > 1:
                raise ValueError(f"{name} must exceed 1, got {p}")

    def replace(self, **changes) -> "RestoreConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class TraceRecord:
    iteration: int
    J: float
    derivative: float   # dJ/dt along the field that produced this state (nan for the start)
    dt: float
    coefficients: tuple
    labels: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)
    solver_iterations: int = 0


@dataclass
class RestoreTrace:
    records: list = field(default_factory=list)
    rejected: int = 0
    stop_reason: str = ""

    @property
    def accepted(self) -> int:
        return max(0, len(self.records) - 1)

    @property
    def values(self) -> list:
        return [r.J for r in self.records]

    def rows(self) -> list:
        out = [["iteration", "J", "derivative", "dt", "d1_area", "coefficients"]]
        for r in self.records:
            area = float(np.count_nonzero(r.labels == INNER)) / r.labels.size
            out.append([r.iteration, repr(r.J), repr(r.derivative), repr(r.dt), repr(area),
                        " ".join(repr(c) for c in r.coefficients)])
        return out


def _weights(p: ExponentField, beta: float) -> np.ndarray:
    return p.values / (2.0 * beta)


def functional(u: GridFunction, result_energy: float, I: GridFunction, beta: float) -> float:
    """``J`` from the solver energy: the fidelity differs by the constant ``beta/2 int I^2``."""
    return result_energy + 0.5 * beta * float(np.sum(np.asarray(I.values) ** 2)) * I.grid.cell_area


def _solve(I: GridFunction, partition: RegionPartition, config: RestoreConfig, initial=None):
    p = ExponentField(partition, config.p1, config.p2)
    scfg = config.solver.replace(bc=NATURAL, w_grad=_weights(p, config.beta), w_fid=config.beta)
    res = minimize(p, I.with_bc(NATURAL), scfg, initial=initial)
    return p, res


def interface_cells(partition: RegionPartition) -> np.ndarray:
    """D1 cells with a D2 face neighbour."""
    lab = partition.labels
    m1 = lab == INNER
    nb = np.zeros_like(m1)
    nb[1:] |= lab[:-1] == OUTER
    nb[:-1] |= lab[1:] == OUTER
    nb[:, 1:] |= lab[:, :-1] == OUTER
    nb[:, :-1] |= lab[:, 1:] == OUTER
    return m1 & nb


def basis_fields(partition: RegionPartition, m: int, radius: float) -> list:
    """x and y translation bumps at ``m`` spread-out interface cells.

    Centers are picked by deterministic farthest-point sampling among
    interface cells whose bump support stays inside the domain.
    """
    grid = partition.grid
    X, Y = grid.centers()
    cand = interface_cells(partition)
    lo, hi = radius + grid.h, 1.0 - radius - grid.h
    cand &= (X > lo) & (X < hi) & (Y > lo) & (Y < hi)
    pts = np.stack([X[cand], Y[cand]], axis=1)
    if len(pts) == 0:
        return []
    chosen = [0]
    dist = np.linalg.norm(pts - pts[0], axis=1)
    while len(chosen) < min(m, len(pts)):
        j = int(np.argmax(dist))
        if dist[j] == 0.0:
            break
        chosen.append(j)
        dist = np.minimum(dist, np.linalg.norm(pts - pts[j], axis=1))
    fields = []
    for j in chosen:
        c = (float(pts[j, 0]), float(pts[j, 1]))
        fields.append(translation_field(center=c, radius=radius, direction=(1.0, 0.0)))
        fields.append(translation_field(center=c, radius=radius, direction=(0.0, 1.0)))
    return fields


def descent_field(u, partition: RegionPartition, p: ExponentField, f: GridFunction, basis: list,
                  eps_reg: float, w_grad=None, w_fid: float = 1.0):
    """Steepest-descent combination ``V* = -sum d_j V_j`` with unit sup norm on the grid."""
    coeffs = np.array([volume_derivative(u, p, f, V, eps_reg, w_grad, w_fid) for V in basis])
    if len(basis) == 0 or not np.any(coeffs):
        return ZeroField(), coeffs
    V = CombinationField([(-float(c), B) for c, B in zip(coeffs, basis)])
    X, Y = partition.grid.centers()
    sup = float(np.max(np.hypot(*V(X, Y))))
    if sup == 0.0:
        return ZeroField(), coeffs
    return CombinationField([(-float(c) / sup, B) for c, B in zip(coeffs, basis)]), coeffs


def restore(I: GridFunction, config: RestoreConfig = RestoreConfig()):
    """Run partition building, minimization and the descent loop.

    Returns ``(u, partition, trace)``.  Only steps that strictly decrease
    ``J`` are recorded; a rejected step halves ``dt`` and the step size
    resets for every new descent direction.
    """
    vals = np.asarray(I.values)
    if vals.min() < 0.0 or vals.max() > 1.0:
        raise ValueError("image values must lie in [0, 1]")
    I = I.with_bc(NATURAL)
    dc = config.descent
    partition = build_partition(I, config.sigma, config.beta)
    p, res = _solve(I, partition, config)
    _require(res)
    J = functional(res.u, res.energy, I, config.beta)
    trace = RestoreTrace()
    trace.records.append(TraceRecord(0, J, float("nan"), 0.0, (), partition.labels, np.asarray(res.u.values),
                                     res.iterations))

    if partition.area(INNER) == 0.0 or partition.area(OUTER) == 0.0:
        trace.stop_reason = "no interface"
        return res.u, partition, trace
    basis = basis_fields(partition, dc.m, dc.radius)
    if not basis:
        trace.stop_reason = "no interface cells away from the boundary"
        return res.u, partition, trace

    eps = config.solver.eps_reg
    it = 0
    while True:
        if it >= dc.max_iter:
            trace.stop_reason = "max iterations"
            break
        Vstar, coeffs = descent_field(res, partition, p, I, basis, eps, _weights(p, config.beta), config.beta)
        slope = volume_derivative(res, p, I, Vstar, eps, _weights(p, config.beta), config.beta)
        if Vstar.is_zero() or abs(slope) <= dc.threshold:
            trace.stop_reason = "derivative below threshold"
            break
        dt = dc.dt
        step = None
        while dt >= dc.dt * dc.min_dt_factor:
            try:
                flow_with_jacobian(Vstar, np.stack(partition.grid.centers()), -dt)
            except FlowError:  # fold-over: treat as a rejected step
                trace.rejected += 1
                dt *= 0.5
                continue
            trial = transport_partition(partition, Vstar, dt)
            if trial.area(INNER) == 0.0 or trial.area(OUTER) == 0.0:
                trace.stop_reason = "partition degenerated"
                return res.u, partition, trace
            if trial != partition:
                p_new, res_new = _solve(I, trial, config, initial=res)
                _require(res_new, trace)
                J_new = functional(res_new.u, res_new.energy, I, config.beta)
                if J_new < J:
                    step = (trial, p_new, res_new, J_new)
                    break
            trace.rejected += 1
            dt *= 0.5
        if step is None:
            trace.stop_reason = "step size underflow"
            break
        it += 1
        partition, p, res, J = step
        trace.records.append(TraceRecord(it, J, slope, dt, tuple(float(c) for c in coeffs), partition.labels,
                                         np.asarray(res.u.values), res.iterations))
        log.info("restore iteration %d: J=%.10g dt=%.4g slope=%.3e", it, J, dt, slope)
    return res.u, partition, trace


def _require(res: SolverResult, trace: Optional[RestoreTrace] = None) -> None:
    if not res.converged:
        raise RestoreError(f"inner minimization did not converge (residual {res.grad_norm:.3e})", trace)


def synthetic_image(n: int = 64, noise: float = 0.1, seed: int = 0) -> GridFunction:
    """Piecewise-constant test image (square and disk on a dark background) plus Gaussian noise."""
    from vxshape.grid import Grid

    grid = Grid(n)
    X, Y = grid.centers()
    img = np.full(grid.shape, 0.2)
    img[(np.abs(X - 0.32) < 0.16) & (np.abs(Y - 0.35) < 0.18)] = 0.8
    img[(X - 0.68) ** 2 + (Y - 0.62) ** 2 < 0.18**2] = 0.6
    rng = np.random.default_rng(seed)
    img = np.clip(img + noise * rng.standard_normal(grid.shape), 0.0, 1.0)
    return GridFunction(grid, img, NATURAL)
