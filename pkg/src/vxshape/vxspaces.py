"""Modulars and Luxemburg norms of variable-exponent Lebesgue/Sobolev spaces."""

from __future__ import annotations

import numpy as np
from scipy import optimize

from vxshape.grid import GridFunction, gradient, integrate_array
from vxshape.partition import ExponentField


def _check(u: GridFunction, p: ExponentField) -> None:
    if u.grid != p.grid:
        raise ValueError(f"grid mismatch: {u.grid} vs {p.grid}")


def _modular_values(values: np.ndarray, p: np.ndarray, h: float) -> float:
    return integrate_array(np.abs(values) ** p, h)


def modular(u: GridFunction, p: ExponentField) -> float:
    """``rho(u) = int |u|^p(x) dx``."""
    _check(u, p)
    return _modular_values(u.values, p.values, u.grid.h)


def sobolev_modular(u: GridFunction, p: ExponentField) -> float:
    """``int |u|^p + |grad u|^p``, with ``|grad u|`` from the face gradient."""
    _check(u, p)
    grad_sq = gradient(u).cell_square_norm()
    h = u.grid.h
    return _modular_values(u.values, p.values, h) + integrate_array(grad_sq ** (0.5 * p.values), h)


def luxemburg_norm(u: GridFunction, p: ExponentField, rtol: float = 1e-13) -> float:
    """The ``lambda`` with ``rho(u / lambda) = 1`` (0 for the zero field).

    Found by Brent's method inside the guaranteed bracket
    ``[min(rho^(1/p-), rho^(1/p+)), max(...)]``.
    """
    _check(u, p)
    return _luxemburg(u.values, p.values, u.grid.h, rtol)


def _luxemburg(values: np.ndarray, p: np.ndarray, h: float, rtol: float = 1e-13) -> float:
    a = np.abs(values)
    rho = _modular_values(a, p, h)
    if rho == 0.0:
        return 0.0
    pm, pp = float(p.min()), float(p.max())
    lo = min(rho ** (1.0 / pm), rho ** (1.0 / pp))
    hi = max(rho ** (1.0 / pm), rho ** (1.0 / pp))
    # tiny widening against rounding in rho itself
    lo *= 1.0 - 1e-12
    hi *= 1.0 + 1e-12

    def excess(lam):
        return _modular_values(a / lam, p, h) - 1.0

    if excess(lo) <= 0.0:
        return lo
    if excess(hi) >= 0.0:
        return hi
    return float(optimize.brentq(excess, lo, hi, xtol=1e-300, rtol=max(rtol, 4.0 * np.finfo(float).eps)))


def conjugate_exponent(p: ExponentField) -> ExponentField:
    """``p' = p / (p - 1)`` region by region."""
    if p.p_minus <= 1.0 + 1e-12:
        raise ValueError(f"conjugate exponent needs p_- > 1, got {p.p_minus}")
    return ExponentField(p.partition, p.p1 / (p.p1 - 1.0), p.p2 / (p.p2 - 1.0))
