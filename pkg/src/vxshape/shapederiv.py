"""Shape derivative of the optimal energy: volume form, interface form, FD reference.

All forms differentiate the same epsilon-regularized energy that the solver
minimizes, so with ``eps_reg > 0`` every ``|grad u|^2`` below is read as
``|grad u|^2 + eps^2``.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from vxshape.flow import DeformationField
from vxshape.grid import GridFunction, cell_gradient, cell_quadratic, face_differences
from vxshape.partition import INNER, OUTER, ErodedPartition, ExponentField, erode, interface
from vxshape.solver import SolverConfig, SolverResult, minimize, minimize_t


def _as_u(u):
    if isinstance(u, SolverResult):
        if not u.converged:
            warnings.warn(
                f"minimizer not converged (residual {u.grad_norm:.3e}); the derivative formula "
                "holds only at the extremal",
                RuntimeWarning,
                stacklevel=3,
            )
        return u.u
    return u


def _check(*objs):
    g0 = objs[0].grid
    for o in objs[1:]:
        if o.grid != g0:
            raise ValueError(f"grid mismatch: {g0} vs {o.grid}")


def forcing_gradient(f: GridFunction) -> np.ndarray:
    """``grad f`` at cell centers: from the analytic source if present, else centered differences."""
    X, Y = f.grid.centers()
    if f.source is not None:
        step = 1e-6
        fx = (f.evaluate_at(X + step, Y) - f.evaluate_at(X - step, Y)) / (2 * step)
        fy = (f.evaluate_at(X, Y + step) - f.evaluate_at(X, Y - step)) / (2 * step)
        return np.stack([fx, fy])
    gx, gy = np.gradient(np.asarray(f.values), f.grid.h)
    return np.stack([gx, gy])


def _r_integrand(u: GridFunction, p: np.ndarray, V: DeformationField, eps_reg: float,
                 w_grad=None, w_fid: float = 1.0) -> np.ndarray:
    grid = u.grid
    X, Y = grid.centers()
    gx, gy = face_differences(np.asarray(u.values), grid.h, u.bc)
    base = cell_quadratic(gx, gy) + eps_reg**2
    DV = V.jacobian(X, Y)
    divV = DV[0, 0] + DV[1, 1]
    grad_dv_grad = cell_quadratic(gx, gy, DV)
    w = 1.0 if w_grad is None else np.asarray(w_grad, dtype=float)
    stiff = w * (base ** (0.5 * p) / p * divV - base ** (0.5 * p - 1.0) * grad_dv_grad)
    return stiff + w_fid * divV * 0.5 * np.asarray(u.values) ** 2


def _volume_integrand(u: GridFunction, p: np.ndarray, f: GridFunction, V: DeformationField,
                      eps_reg: float, w_grad=None, w_fid: float = 1.0) -> np.ndarray:
    X, Y = u.grid.centers()
    Vc = V(X, Y)
    divV = V.div(X, Y)
    gf = forcing_gradient(f)
    uu = np.asarray(u.values)
    data = uu * np.asarray(f.values) * divV + uu * (gf[0] * Vc[0] + gf[1] * Vc[1])
    return _r_integrand(u, p, V, eps_reg, w_grad, w_fid) - w_fid * data


def r_functional(u, p: ExponentField, V: DeformationField, eps_reg: float,
                 w_grad=None, w_fid: float = 1.0) -> float:
    """Quadrature of the stiffness/mass part of the volume-form derivative."""
    u = _as_u(u)
    _check(u, p)
    if V.is_zero():
        return 0.0
    return float(np.sum(_r_integrand(u, p.values, V, eps_reg, w_grad, w_fid))) * u.grid.cell_area


def volume_derivative(u, p: ExponentField, f: GridFunction, V: DeformationField, eps_reg: float,
                      w_grad=None, w_fid: float = 1.0) -> float:
    """``R(u) - int u f div V - int u grad f . V`` at the minimizer ``u``."""
    u = _as_u(u)
    _check(u, p, f)
    if V.is_zero():
        return 0.0
    return float(np.sum(_volume_integrand(u, p.values, f, V, eps_reg, w_grad, w_fid))) * u.grid.cell_area


def regional_derivative(u, eroded: ErodedPartition, side: int, f: GridFunction, V: DeformationField,
                        eps_reg: float, p: ExponentField) -> float:
    """The volume integrand summed over ``D_side^delta`` only."""
    u = _as_u(u)
    _check(u, eroded, f, p)
    mask = eroded.mask(side)
    if not mask.any():
        raise ValueError(f"region D{side}^delta is empty (delta={eroded.delta})")
    if V.is_zero():
        return 0.0
    vals = _volume_integrand(u, p.values, f, V, eps_reg)
    return float(np.sum(vals[mask])) * u.grid.cell_area


def band_derivative(u, eroded: ErodedPartition, f: GridFunction, V: DeformationField,
                    eps_reg: float, p: ExponentField) -> float:
    """The volume integrand summed over the band ``A_delta``."""
    u = _as_u(u)
    if V.is_zero():
        return 0.0
    vals = _volume_integrand(u, p.values, f, V, eps_reg)
    return float(np.sum(vals[eroded.band])) * u.grid.cell_area


# --- interface form ----------------------------------------------------------


@dataclass(frozen=True)
class InterfaceSums:
    delta: float
    side1: float       # sum over Gamma_1^delta with its outward normal
    side2: float       # sum over Gamma_2^delta with its outward normal
    omitted: float     # u^2/2 - u f flux terms left out of the limit formula
    length1: float
    length2: float

    @property
    def jump(self) -> float:
        return self.side1 + self.side2


@dataclass(frozen=True)
class InterfaceEstimate:
    value: float
    sums: tuple

    @property
    def deltas(self):
        return [s.delta for s in self.sums]


def _edge_gradient(u: GridFunction, cin: np.ndarray, cout: np.ndarray, edge_normals: np.ndarray) -> np.ndarray:
    """``grad u`` at edge midpoints from the two cells sharing the edge.

    Across the edge: the face difference; along the edge: the mean of the
    two cells' centered differences.  Both cells lie in the same region.
    """
    n, h = u.grid.n, u.grid.h
    vals = np.asarray(u.values).ravel()
    cg = cell_gradient(u).reshape(2, n * n)
    g = 0.5 * (cg[:, cin] + cg[:, cout])
    # across-edge component, oriented along +axis
    across = (vals[cout] - vals[cin]) / h
    vertical = edge_normals[:, 0] != 0.0
    g[0, vertical] = across[vertical] * edge_normals[vertical, 0]
    g[1, ~vertical] = across[~vertical] * edge_normals[~vertical, 1]
    return g


def interface_sums(u, eroded: ErodedPartition, p: ExponentField, V: DeformationField,
                   eps_reg: float, f: Optional[GridFunction] = None) -> InterfaceSums:
    u = _as_u(u)
    vals = np.asarray(u.values).ravel()
    out = {}
    lengths = {}
    omitted = 0.0
    for side in (INNER, OUTER):
        gam = interface(eroded, side)
        lengths[side] = gam.length
        if len(gam) == 0:
            out[side] = 0.0
            continue
        exp_i = p.exponent(side)
        x, y = gam.positions[:, 0], gam.positions[:, 1]
        Vs = V(x, y)
        g = _edge_gradient(u, gam.inside, gam.outside, gam.edge_normals)
        nu = gam.normals.T
        base = g[0] ** 2 + g[1] ** 2 + eps_reg**2
        v_nu = Vs[0] * nu[0] + Vs[1] * nu[1]
        gu_nu = g[0] * nu[0] + g[1] * nu[1]
        gu_v = g[0] * Vs[0] + g[1] * Vs[1]
        integrand = base ** (0.5 * exp_i) / exp_i * v_nu - base ** (0.5 * exp_i - 1.0) * gu_nu * gu_v
        out[side] = float(np.sum(gam.weights * integrand))
        if f is not None:
            ue = 0.5 * (vals[gam.inside] + vals[gam.outside])
            fe = f.evaluate_at(x, y)
            omitted += float(np.sum(gam.weights * (0.5 * ue**2 - ue * fe) * v_nu))
    return InterfaceSums(eroded.delta, out[INNER], out[OUTER], omitted, lengths[INNER], lengths[OUTER])


def interface_estimate(u, p: ExponentField, V: DeformationField, delta_list: Sequence[float],
                       eps_reg: float, f: Optional[GridFunction] = None,
                       order: int = 1) -> InterfaceEstimate:
    """Jump-bracket interface form extrapolated to ``delta -> 0``.

    A polynomial of degree ``order`` (1 = linear fit) is fitted to the last
    three ``A(delta)``.  ``p`` carries the partition as well as the two
    exponents.  ``f`` is only used to report the zero-order flux terms that
    the limit formula leaves out.
    """
    if order not in (1, 2):
        raise ValueError(f"order must be 1 or 2, got {order}")
    u = _as_u(u)
    _check(u, p)
    partition = p.partition
    h = partition.grid.h
    deltas = [float(d) for d in delta_list]
    if any(d < 2.0 * h * (1.0 - 1e-9) for d in deltas):
        raise ValueError(f"every delta must be >= 2h = {2 * h:.6g}; got {deltas}")
    if len(deltas) < 2:
        raise ValueError("need at least two delta values to extrapolate")
    if any(b >= a for a, b in zip(deltas, deltas[1:])):
        raise ValueError(f"delta_list must be strictly decreasing; got {deltas}")
    sums = []
    for d in deltas:
        er = erode(partition, d)
        s = interface_sums(u, er, p, V, eps_reg, f)
        if s.length1 == 0.0 or s.length2 == 0.0:
            raise ValueError(f"empty interface at delta={d}")
        sums.append(s)
    if V.is_zero():
        return InterfaceEstimate(0.0, tuple(sums))
    tail = sums[-3:]
    coeffs = np.polyfit([s.delta for s in tail], [s.jump for s in tail], min(order, len(tail) - 1))
    return InterfaceEstimate(float(coeffs[-1]), tuple(sums))


def interface_derivative(u, p: ExponentField, V: DeformationField, delta_list: Sequence[float],
                         eps_reg: float) -> float:
    return interface_estimate(u, p, V, delta_list, eps_reg).value


# --- finite-difference reference ---------------------------------------------


@dataclass(frozen=True)
class FDEntry:
    t: float
    estimate: float
    s_plus: float
    s_minus: float
    converged: bool


@dataclass(frozen=True)
class FDResult:
    entries: tuple
    limit: float
    ratio: float  # successive-difference ratio of the last three entries (nan if < 3)

    @property
    def converged(self) -> bool:
        return all(e.converged for e in self.entries)


def richardson(ts: Sequence[float], values: Sequence[float]) -> float:
    """Eliminate the ``t^2`` term using the last two entries."""
    if len(values) == 1:
        return float(values[0])
    t1, t2 = ts[-2], ts[-1]
    e1, e2 = values[-2], values[-1]
    return float((t1**2 * e2 - t2**2 * e1) / (t1**2 - t2**2))


def convergence_ratio(values: Sequence[float]) -> float:
    if len(values) < 3:
        return float("nan")
    a, b, c = values[-3:]
    if c == b:
        return float("inf") if a != b else float("nan")
    return float((a - b) / (b - c))


def fd_derivative(p: ExponentField, f: GridFunction, V: DeformationField, t_list: Sequence[float],
                  config: SolverConfig = SolverConfig(), base: Optional[SolverResult] = None) -> FDResult:
    """Central differences ``(s(t) - s(-t)) / 2t`` of the pulled-back optimal energy."""
    ts = [float(t) for t in t_list]
    if not ts or any(t <= 0 for t in ts) or any(b >= a for a, b in zip(ts, ts[1:])):
        raise ValueError(f"t_list must be positive and strictly decreasing; got {ts}")
    if base is None:
        base = minimize(p, f, config)
    entries = []
    for t in ts:
        rp = minimize_t(p, f, V, t, config, initial=base)
        rm = minimize_t(p, f, V, -t, config, initial=base)
        est = (rp.energy - rm.energy) / (2.0 * t)
        entries.append(FDEntry(t, est, rp.energy, rm.energy, rp.converged and rm.converged))
    ests = [e.estimate for e in entries]
    return FDResult(tuple(entries), richardson(ts, ests), convergence_ratio(ests))


# --- report --------------------------------------------------------------------


@dataclass
class ShapeDerivativeReport:
    volume_value: float
    interface_value: float
    regional_values: tuple
    fd_estimates: list
    fd_limit: float
    fd_ratio: float
    interface_sums: list
    params: dict
    solver_converged: bool
    fd_converged: bool
    extra: dict = field(default_factory=dict)

    @property
    def converged(self) -> bool:
        return self.solver_converged and self.fd_converged

    def relative_gaps(self) -> dict:
        def rel(a, b):
            return abs(a - b) / abs(b) if b != 0 else (0.0 if a == b else float("inf"))

        return {
            "volume_vs_fd": rel(self.volume_value, self.fd_limit),
            "interface_vs_fd": rel(self.interface_value, self.fd_limit),
            "interface_vs_volume": rel(self.interface_value, self.volume_value),
        }

    def csv_rows(self) -> list:
        rows = [["kind", "step", "value", "aux1", "aux2", "aux3"]]
        for t, est in self.fd_estimates:
            rows.append(["fd", t, est, "", "", ""])
        for s in self.interface_sums:
            rows.append(["interface_delta", s.delta, s.jump, s.side1, s.side2, s.omitted])
        rows.append(["regional", self.params.get("regional_delta", ""), sum(self.regional_values),
                     self.regional_values[0], self.regional_values[1], ""])
        gaps = self.relative_gaps()
        rows.append(["summary", "", self.volume_value, self.interface_value, self.fd_limit, self.fd_ratio])
        rows.append(["gaps", "", gaps["volume_vs_fd"], gaps["interface_vs_fd"], gaps["interface_vs_volume"], ""])
        return rows

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        csv.writer(buf).writerows(self.csv_rows())
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def summary(self) -> str:
        g = self.relative_gaps()
        lines = [
            "shape derivative report",
            f"  h={self.params.get('h')} eps_reg={self.params.get('eps_reg')} "
            f"deltas={self.params.get('deltas')} t={self.params.get('t_list')}",
            f"  field: {self.params.get('field')}",
            f"  volume form     {self.volume_value: .10e}",
            f"  interface form  {self.interface_value: .10e}",
            f"  fd (Richardson) {self.fd_limit: .10e}  ratio {self.fd_ratio:.3f}",
            f"  regional (D1, D2) {self.regional_values[0]: .6e} {self.regional_values[1]: .6e}",
            f"  |vol-fd|/|fd| = {g['volume_vs_fd']:.3e}  |int-fd|/|fd| = {g['interface_vs_fd']:.3e}  "
            f"|int-vol|/|vol| = {g['interface_vs_volume']:.3e}",
            f"  converged: solver={self.solver_converged} fd={self.fd_converged}",
        ]
        return "\n".join(lines)


def build_report(p: ExponentField, f: GridFunction, V: DeformationField, config: SolverConfig,
                 delta_list: Sequence[float], t_list: Sequence[float],
                 interface_order: int = 1) -> ShapeDerivativeReport:
    base = minimize(p, f, config)
    u = base.u
    vol = volume_derivative(base, p, f, V, config.eps_reg)
    est = interface_estimate(u, p, V, delta_list, config.eps_reg, f, order=interface_order)
    d_min = min(delta_list)
    er = erode(p.partition, d_min)
    regional = []
    for side in (INNER, OUTER):
        regional.append(regional_derivative(u, er, side, f, V, config.eps_reg, p) if er.mask(side).any() else 0.0)
    fd = fd_derivative(p, f, V, t_list, config, base=base)
    params = {
        "h": p.grid.h,
        "n": p.grid.n,
        "eps_reg": config.eps_reg,
        "tol": config.tol,
        "deltas": [float(d) for d in delta_list],
        "t_list": [float(t) for t in t_list],
        "regional_delta": d_min,
        "p1": p.p1,
        "p2": p.p2,
        "field": V.descriptor(),
        "interface_order": interface_order,
    }
    return ShapeDerivativeReport(
        volume_value=vol,
        interface_value=est.value,
        regional_values=tuple(regional),
        fd_estimates=[(e.t, e.estimate) for e in fd.entries],
        fd_limit=fd.limit,
        fd_ratio=fd.ratio,
        interface_sums=list(est.sums),
        params=params,
        solver_converged=base.converged,
        fd_converged=fd.converged,
        extra={"energy": base.energy, "band": band_derivative(u, er, f, V, config.eps_reg, p)},
    )
