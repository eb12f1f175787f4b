"""Run configuration: a ``key = value`` text file plus command-line overrides.

Values are parsed as JSON when possible (numbers, lists, objects, true/false,
null) and kept as bare strings otherwise.  Blank lines and ``#`` comments are
ignored.  Unknown keys are rejected.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, fields
from typing import Optional

COMMANDS = ("solve", "restore", "shape-derivative", "validate", "info")
FORCINGS = ("zero", "sine", "flagship", "image")
PARTITIONS = ("disk", "half_plane", "uniform", "mask")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str = "info"
    out: str = "out"
    seed: int = 0
    # grid, regions, exponents
    n: int = 64
    partition: str = "disk"
    disk_center: list = dataclasses.field(default_factory=lambda: [0.5, 0.5])
    disk_radius: float = 0.25
    half_plane_x: float = 0.5
    mask: Optional[str] = None
    p1: float = 1.2
    p2: float = 2.0
    # forcing
    forcing: str = "flagship"
    forcing_amplitude: float = 1.0
    input: Optional[str] = None
    # solver
    eps_reg: float = 1e-3
    tol: float = 1e-8
    max_iter: int = 200
    bc: str = "dirichlet_zero"
    # shape derivative
    field: dict = dataclasses.field(default_factory=lambda: {
        "family": "translation", "center": [0.6, 0.6], "radius": 0.35, "amplitude": 1.0, "direction": [1.0, 1.0]})
    deltas: Optional[list] = None      # absolute lengths; default 6h, 4h, 2h
    t_list: list = dataclasses.field(default_factory=lambda: [0.04, 0.02, 0.01])
    interface_order: int = 1
    # restoration
    beta: float = 2.0
    sigma: float = 0.02
    k: float = 0.0
    noise: float = 0.1
    descent_dt: float = 0.03
    descent_m: int = 8
    descent_max_iter: int = 20
    descent_threshold: float = 1e-7
    descent_radius: float = 0.15
    snapshots: bool = True
    # validation
    criteria: Optional[list] = None

    def resolved(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def text(self) -> str:
        return "".join(f"{k} = {json.dumps(v)}\n" for k, v in self.resolved().items())

    def grid_deltas(self) -> list:
        h = 1.0 / self.n
        return list(self.deltas) if self.deltas is not None else [6 * h, 4 * h, 2 * h]


_FIELDS = {f.name: f for f in fields(RunConfig)}
_NUMERIC = {"n": int, "seed": int, "max_iter": int, "interface_order": int, "descent_m": int,
            "descent_max_iter": int}


def parse_value(raw: str):
    raw = raw.strip()
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_text(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = parse_value(value)
    return out


def read_file(path: str) -> dict:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_text(text, path)


def _coerce(key: str, value):
    if key in _NUMERIC:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    default = _FIELDS[key].default
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if isinstance(default, bool) and not isinstance(value, bool):
        raise ConfigError(f"{key} must be true or false, got {value!r}")
    return value


def build(values: dict) -> RunConfig:
    cfg = RunConfig()
    for key, value in values.items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        setattr(cfg, key, _coerce(key, value))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if cfg.command not in COMMANDS:
        raise ConfigError(f"command must be one of {COMMANDS}, got {cfg.command!r}")
    if cfg.n < 8:
        raise ConfigError(f"n must be >= 8, got {cfg.n}")
    if cfg.partition not in PARTITIONS:
        raise ConfigError(f"partition must be one of {PARTITIONS}, got {cfg.partition!r}")
    if cfg.partition == "mask" and not cfg.mask:
        raise ConfigError("partition = mask needs a 'mask' PGM path")
    if cfg.forcing not in FORCINGS:
        raise ConfigError(f"forcing must be one of {FORCINGS}, got {cfg.forcing!r}")
    if cfg.forcing == "image" and not cfg.input:
        raise ConfigError("forcing = image needs an 'input' PGM path")
    for name in ("p1", "p2"):
        if not getattr(cfg, name) > 1:
            raise ConfigError(f"{name} must exceed 1, got {getattr(cfg, name)}")
    if cfg.bc not in ("dirichlet_zero", "natural"):
        raise ConfigError(f"bc must be dirichlet_zero or natural, got {cfg.bc!r}")
    if not cfg.eps_reg >= 0 or not cfg.tol > 0 or cfg.max_iter < 1:
        raise ConfigError("need eps_reg >= 0, tol > 0 and max_iter >= 1")
    if not isinstance(cfg.field, dict):
        raise ConfigError(f"field must be a JSON object, got {cfg.field!r}")
    for name in ("t_list",) + (("deltas",) if cfg.deltas is not None else ()):
        seq = getattr(cfg, name)
        if not isinstance(seq, list) or not seq or not all(isinstance(x, (int, float)) for x in seq):
            raise ConfigError(f"{name} must be a non-empty list of numbers, got {seq!r}")
    if not (isinstance(cfg.disk_center, list) and len(cfg.disk_center) == 2):
        raise ConfigError(f"disk_center must be a pair, got {cfg.disk_center!r}")
    if cfg.interface_order not in (1, 2):
        raise ConfigError(f"interface_order must be 1 or 2, got {cfg.interface_order}")
    if cfg.criteria is not None and (not isinstance(cfg.criteria, list)
                                     or not all(c in range(1, 10) for c in cfg.criteria)):
        raise ConfigError(f"criteria must be a list drawn from 1..9, got {cfg.criteria!r}")
    for path_key in ("input", "mask"):
        path = getattr(cfg, path_key)
        if path is not None and not os.path.isfile(path):
            raise ConfigError(f"{path_key} file not found: {path}")
    if cfg.noise < 0:
        raise ConfigError(f"noise must be >= 0, got {cfg.noise}")


def load(path: Optional[str], overrides: list, **explicit) -> RunConfig:
    """File values, then ``key=value`` overrides, then explicit flags."""
    values = read_file(path) if path else {}
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, value = item.split("=", 1)
        values[key.strip()] = parse_value(value)
    for key, value in explicit.items():
        if value is not None:
            values[key] = value
    return build(values)
