"""``vxshape <command> --config <path> [--out dir] [--seed N] [key=value ...]``.

Exit codes: 0 success, 1 usage/config/I-O error, 2 numerical
non-convergence (or, for ``validate``, a failed criterion).
"""

from __future__ import annotations

import argparse
import csv
import inspect
import json
import logging
import os
import sys

import numpy as np

from vxshape import config as cfgmod
from vxshape.flow import FAMILIES, FlowError, field_from_descriptor
from vxshape.grid import BOUNDARY_CONDITIONS, NATURAL, Grid, GridFunction, PGMError, load_pgm, save_pgm
from vxshape.partition import ExponentField, RegionPartition
from vxshape.solver import SolverDivergence

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("vxshape")


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vxshape", description="Variable-exponent energies and their shape derivatives.")
    ap.add_argument("command", choices=cfgmod.COMMANDS)
    ap.add_argument("--config", help="key = value configuration file")
    ap.add_argument("--out", help="output directory (default from config, 'out')")
    ap.add_argument("--seed", type=int, help="seed for synthetic data")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    ap.add_argument("overrides", nargs="*", metavar="key=value", help="config overrides")
    return ap


# --- builders ------------------------------------------------------------------


def _load_image(path: str, n: int = None) -> GridFunction:
    img = load_pgm(path)
    if n is not None and img.grid.n != n:
        raise cfgmod.ConfigError(f"{path} is {img.grid.n}x{img.grid.n} but n = {n}")
    return img


def build_exponent(cfg: cfgmod.RunConfig) -> ExponentField:
    grid = Grid(cfg.n)
    if cfg.partition == "disk":
        part = RegionPartition.disk(grid, tuple(cfg.disk_center), cfg.disk_radius)
    elif cfg.partition == "half_plane":
        part = RegionPartition.half_plane(grid, cfg.half_plane_x)
    elif cfg.partition == "uniform":
        part = RegionPartition.uniform(grid)
    else:
        part = RegionPartition.from_grid_function(_load_image(cfg.mask, cfg.n))
    return ExponentField(part, cfg.p1, cfg.p2)


def build_forcing(cfg: cfgmod.RunConfig) -> GridFunction:
    grid = Grid(cfg.n)
    a = cfg.forcing_amplitude
    if cfg.forcing == "zero":
        return GridFunction.constant(grid, 0.0, cfg.bc)
    if cfg.forcing == "sine":
        return GridFunction.from_function(grid, lambda x, y: a * np.sin(np.pi * x) * np.sin(np.pi * y), bc=cfg.bc)
    if cfg.forcing == "flagship":
        return GridFunction.from_function(
            grid, lambda x, y: 5.0 * a * np.sin(np.pi * x) * np.sin(np.pi * y) * (1.0 + x), bc=cfg.bc)
    img = _load_image(cfg.input, cfg.n)
    return img.with_values(a * np.asarray(img.values)).with_bc(cfg.bc)


def solver_config(cfg: cfgmod.RunConfig):
    from vxshape.solver import SolverConfig

    return SolverConfig(eps_reg=cfg.eps_reg, tol=cfg.tol, max_iter=cfg.max_iter, bc=cfg.bc)


def _write(out: str, name: str, text: str) -> str:
    path = os.path.join(out, name)
    with open(path, "w") as fh:
        fh.write(text)
    return path


def _write_csv(out: str, name: str, rows) -> str:
    path = os.path.join(out, name)
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    return path


# --- commands --------------------------------------------------------------------


def cmd_solve(cfg: cfgmod.RunConfig) -> int:
    from vxshape.solver import minimize

    p = build_exponent(cfg)
    f = build_forcing(cfg)
    res = minimize(p, f, solver_config(cfg))
    save_pgm(res.u, os.path.join(cfg.out, "u.pgm"))
    np.savetxt(os.path.join(cfg.out, "u.csv"), np.asarray(res.u.values), fmt="%.17g", delimiter=",")
    summary = {"energy": res.energy, "iterations": res.iterations, "residual": res.grad_norm,
               "converged": res.converged, "config": cfg.resolved()}
    text = json.dumps(summary, indent=2) + "\n"
    _write(cfg.out, "summary.txt", text)
    print(json.dumps({k: summary[k] for k in ("energy", "iterations", "residual", "converged")}))
    return EXIT_OK if res.converged else EXIT_NUMERIC


def cmd_shape_derivative(cfg: cfgmod.RunConfig) -> int:
    from vxshape.shapederiv import build_report

    p = build_exponent(cfg)
    f = build_forcing(cfg)
    V = field_from_descriptor(cfg.field)
    report = build_report(p, f, V, solver_config(cfg), cfg.grid_deltas(), cfg.t_list,
                          interface_order=cfg.interface_order)
    report.to_csv(os.path.join(cfg.out, "report.csv"))
    text = report.summary() + "\n\n# resolved config\n" + cfg.text()
    _write(cfg.out, "summary.txt", text)
    print(report.summary())
    return EXIT_OK if report.converged else EXIT_NUMERIC


def cmd_restore(cfg: cfgmod.RunConfig) -> int:
    from vxshape import restore as rs

    if cfg.input:
        I = _load_image(cfg.input)
    else:
        I = rs.synthetic_image(cfg.n, cfg.noise, cfg.seed)
        save_pgm(I, os.path.join(cfg.out, "input.pgm"))
    rc = rs.RestoreConfig(
        beta=cfg.beta, sigma=cfg.sigma, k=cfg.k, p1=cfg.p1, p2=cfg.p2,
        descent=rs.DescentConfig(dt=cfg.descent_dt, m=cfg.descent_m, max_iter=cfg.descent_max_iter,
                                 threshold=cfg.descent_threshold, radius=cfg.descent_radius),
        solver=solver_config(cfg).replace(bc=NATURAL),
    )
    code = EXIT_OK
    try:
        u, part, trace = rs.restore(I, rc)
    except rs.RestoreError as exc:
        print(f"error: {exc}", file=sys.stderr)
        trace, code = exc.trace, EXIT_NUMERIC
        if trace is None:
            return code
        u = part = None
    for r in trace.records if cfg.snapshots else trace.records[-1:]:
        save_pgm(GridFunction(I.grid, r.u, NATURAL), os.path.join(cfg.out, f"restored_{r.iteration:03d}.pgm"))
        mask = RegionPartition(I.grid, r.labels).to_grid_function()
        save_pgm(mask, os.path.join(cfg.out, f"mask_{r.iteration:03d}.pgm"))
    _write_csv(cfg.out, "trace.csv", trace.rows())
    if u is not None:
        save_pgm(u, os.path.join(cfg.out, "restored.pgm"))
        save_pgm(part.to_grid_function(), os.path.join(cfg.out, "mask.pgm"))
    lines = [f"accepted steps: {trace.accepted}", f"rejected trials: {trace.rejected}",
             f"stop: {trace.stop_reason}", "J: " + " ".join(repr(v) for v in trace.values)]
    _write(cfg.out, "summary.txt", "\n".join(lines) + "\n\n# resolved config\n" + cfg.text())
    print("\n".join(lines))
    return code


def cmd_validate(cfg: cfgmod.RunConfig) -> int:
    from vxshape import validate

    results = validate.run(cfg.criteria, seed=cfg.seed, echo=print)
    failed = [r.number for r in results if not r.passed]
    lines = [r.line(timing=False) for r in results]
    lines.append(f"{len(results) - len(failed)}/{len(results)} criteria passed"
                 + (f"; failed: {failed}" if failed else ""))
    _write(cfg.out, "validate.txt", "\n".join(lines) + "\n")
    print(lines[-1])
    return EXIT_NUMERIC if failed else EXIT_OK


def cmd_info(cfg: cfgmod.RunConfig) -> int:
    grid = Grid(cfg.n)
    print(f"grid: {grid.n} x {grid.n} cells, h = {grid.h:.6g}")
    print("boundary conditions: " + ", ".join(BOUNDARY_CONDITIONS))
    print("forcings: " + ", ".join(cfgmod.FORCINGS))
    print("partitions: " + ", ".join(cfgmod.PARTITIONS))
    print("deformation families:")
    for name, mk in FAMILIES.items():
        params = ", ".join(f"{k}={v.default}" for k, v in inspect.signature(mk).parameters.items())
        print(f"  {name}({params})")
    print("resolved config:")
    sys.stdout.write("".join("  " + line + "\n" for line in cfg.text().splitlines()))
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "shape-derivative": cmd_shape_derivative,
    "restore": cmd_restore,
    "validate": cmd_validate,
    "info": cmd_info,
}


def main(argv=None) -> int:
    ap = _parser()
    try:
        args = ap.parse_intermixed_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = cfgmod.load(args.config, args.overrides, command=args.command, out=args.out, seed=args.seed)
        if args.command != "info":
            os.makedirs(cfg.out, exist_ok=True)
        return COMMANDS[args.command](cfg)
    except (cfgmod.ConfigError, PGMError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverDivergence, FlowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
