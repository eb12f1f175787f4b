"""Shape derivatives of variable-exponent restoration energies on a 2D grid."""

from vxshape.grid import (
    DIRICHLET,
    NATURAL,
    Grid,
    GridFunction,
    VectorGridFunction,
    divergence,
    gradient,
    integrate,
    load_pgm,
    save_pgm,
)

__all__ = [
    "DIRICHLET",
    "NATURAL",
    "Grid",
    "GridFunction",
    "VectorGridFunction",
    "divergence",
    "gradient",
    "integrate",
    "load_pgm",
    "save_pgm",
]

__version__ = "0.1.0"
