"""Sectioned key=value run configuration.

The format is INI-style: `[section]` headers, `key = value` lines, `#` or `;`
comments.  Unknown sections or keys are errors; invariant violations are
reported with the offending line number.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ConfigError

_SCHEMA = {
    "problem": {"n", "k"},
    "domain": {"kind", "r_max", "z_max", "profile_z", "profile_r"},
    "weight": {"kind", "a0", "beta", "kappas", "offsets"},
    "schedule": {"eps_start", "eps_ratio", "eps_count"},
    "grid": {"resolution", "cells_per_delta", "max_resolution", "gamma"},
    "solver": {"newton_tol", "max_iter"},
    "quadrature": {"tol_abs", "tol_rel"},
    "init": {"t", "d", "s"},
    "checks": {"enable"},
    "run": {"seed", "out", "jobs", "tolerance_scale"},
}

KNOWN_CHECKS = (
    "constants",
    "kernel",
    "reduced",
    "projection",
    "error-rate",
    "expansion-c0",
    "expansion-c1",
    "tower",
)


@dataclass
class RunConfig:
    n: int = 4
    k: int = 1
    domain_kind: str = "slab"
    r_max: float = 1.0
    z_max: float = 1.0
    profile_z: tuple = ()
    profile_r: tuple = ()
    weight_kind: str = "affine"
    a0: float = 1.0
    beta: float = 1.0
    kappas: tuple = (1.0,)
    offsets: tuple = (1.0,)
    eps_start: float = 0.1
    eps_ratio: float = 0.5623413251903491
    eps_count: int = 5
    resolution: int = 128
    cells_per_delta: float = 40.0
    max_resolution: int = 768
    gamma: float = 0.06
    newton_tol: float = 1e-9
    max_iter: int = 40
    quad_tol_abs: float = 1e-8
    quad_tol_rel: float = 1e-9
    init_t: float = 1.0
    init_d: tuple = ()
    init_s: tuple = ()
    checks: tuple = KNOWN_CHECKS
    seed: int = 0
    out: str = "out"
    jobs: int = 1
    tolerance_scale: float = 1.0
    sha256: str = ""
    raw_text: str = ""

    def eps_schedule(self) -> list:
        return [self.eps_start * self.eps_ratio**i for i in range(self.eps_count)]


def _fail(line_no: int, msg: str):
    raise ConfigError(f"line {line_no}: {msg}")


def _parse_scalar(value: str, line_no: int, kind: type):
    try:
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
    except ValueError:
        _fail(line_no, f"expected {kind.__name__}, got {value!r}")
    return value


def _parse_list(value: str, line_no: int) -> tuple:
    try:
        return tuple(float(v.strip()) for v in value.split(",") if v.strip())
    except ValueError:
        _fail(line_no, f"expected a comma-separated list of numbers, got {value!r}")


def parse_config(text: str) -> RunConfig:
    entries = {}
    section = None
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].split(";", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                _fail(line_no, f"unknown section [{section}]")
            continue
        if "=" not in line:
            _fail(line_no, f"expected 'key = value', got {raw.strip()!r}")
        if section is None:
            _fail(line_no, "key outside of any [section]")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _SCHEMA[section]:
            _fail(line_no, f"unknown key {key!r} in section [{section}]")
        entries[(section, key)] = (value, line_no)

    cfg = RunConfig()
    cfg.raw_text = text
    cfg.sha256 = hashlib.sha256(text.encode()).hexdigest()

    def get(section, key, kind, default=None, required=False):
        if (section, key) not in entries:
            if required:
                raise ConfigError(f"missing required key {key!r} in section [{section}]")
            return default
        value, line_no = entries[(section, key)]
        if kind is tuple:
            return _parse_list(value, line_no)
        if kind is str:
            return value
        return _parse_scalar(value, line_no, kind)

    def line_of(section, key, fallback=0):
        return entries.get((section, key), (None, fallback))[1]

    cfg.n = get("problem", "n", int, required=True)
    cfg.k = get("problem", "k", int, required=True)
    if cfg.n < 4:
        _fail(line_of("problem", "n"), f"unsupported dimension n={cfg.n}: the construction requires n >= 4")
    if cfg.k < 1:
        _fail(line_of("problem", "k"), f"tower height k={cfg.k} must be >= 1")

    cfg.domain_kind = get("domain", "kind", str, cfg.domain_kind)
    if cfg.domain_kind not in ("slab", "ball", "profile"):
        _fail(line_of("domain", "kind"), f"unknown domain kind {cfg.domain_kind!r}")
    cfg.r_max = get("domain", "r_max", float, cfg.r_max)
    cfg.z_max = get("domain", "z_max", float, cfg.z_max)
    cfg.profile_z = get("domain", "profile_z", tuple, cfg.profile_z)
    cfg.profile_r = get("domain", "profile_r", tuple, cfg.profile_r)
    if cfg.r_max <= 0 or cfg.z_max <= 0:
        _fail(line_of("domain", "r_max", line_of("domain", "z_max")), "domain extents must be positive")

    cfg.weight_kind = get("weight", "kind", str, cfg.weight_kind)
    if cfg.weight_kind not in ("affine", "product"):
        _fail(line_of("weight", "kind"), f"unknown weight kind {cfg.weight_kind!r}")
    cfg.a0 = get("weight", "a0", float, cfg.a0)
    cfg.beta = get("weight", "beta", float, cfg.beta)
    cfg.kappas = get("weight", "kappas", tuple, cfg.kappas)
    cfg.offsets = get("weight", "offsets", tuple, cfg.offsets)
    if cfg.weight_kind == "affine":
        if cfg.a0 <= 0:
            _fail(line_of("weight", "a0"), "weight a0 must be positive")
        if cfg.beta <= 0:
            _fail(line_of("weight", "beta"), "weight beta must be positive (inward normal derivative)")
    else:
        if any(o <= 0 for o in cfg.offsets):
            _fail(line_of("weight", "offsets"), "product weight offsets must be positive")
        if any(kp <= 0 for kp in cfg.kappas):
            _fail(line_of("weight", "kappas"), "product weight exponents must be positive")

    cfg.eps_start = get("schedule", "eps_start", float, cfg.eps_start)
    cfg.eps_ratio = get("schedule", "eps_ratio", float, cfg.eps_ratio)
    cfg.eps_count = get("schedule", "eps_count", int, cfg.eps_count)
    if not 0 < cfg.eps_start < 4.0 / (cfg.n - 2):
        _fail(line_of("schedule", "eps_start"), f"eps_start must lie in (0, {4.0 / (cfg.n - 2)})")
    if not 0 < cfg.eps_ratio < 1:
        _fail(line_of("schedule", "eps_ratio"), "eps_ratio must lie in (0, 1) for a decreasing schedule")
    if cfg.eps_count < 1:
        _fail(line_of("schedule", "eps_count"), "eps_count must be >= 1")

    cfg.resolution = get("grid", "resolution", int, cfg.resolution)
    cfg.cells_per_delta = get("grid", "cells_per_delta", float, cfg.cells_per_delta)
    cfg.max_resolution = get("grid", "max_resolution", int, cfg.max_resolution)
    cfg.gamma = get("grid", "gamma", float, cfg.gamma)
    if cfg.resolution != 0 and cfg.resolution < 16:
        _fail(line_of("grid", "resolution"), "resolution must be 0 (auto) or >= 16")

    cfg.newton_tol = get("solver", "newton_tol", float, cfg.newton_tol)
    cfg.max_iter = get("solver", "max_iter", int, cfg.max_iter)
    cfg.quad_tol_abs = get("quadrature", "tol_abs", float, cfg.quad_tol_abs)
    cfg.quad_tol_rel = get("quadrature", "tol_rel", float, cfg.quad_tol_rel)

    cfg.init_t = get("init", "t", float, cfg.init_t)
    cfg.init_d = get("init", "d", tuple, tuple(2.0 ** -(i + 1) for i in range(cfg.k)))
    cfg.init_s = get("init", "s", tuple, (0.0,) * (cfg.k - 1))
    if cfg.init_t <= 0:
        _fail(line_of("init", "t"), "initial t must be positive (admissible set)")
    if len(cfg.init_d) != cfg.k:
        _fail(line_of("init", "d"), f"need {cfg.k} initial amplitudes d")
    if any(d <= 0 for d in cfg.init_d):
        _fail(line_of("init", "d"), "initial d values must be positive (admissible set)")
    if len(cfg.init_s) != cfg.k - 1:
        _fail(line_of("init", "s"), f"need {cfg.k - 1} initial offsets s")

    enable = get("checks", "enable", str, None)
    if enable is not None:
        names = tuple(v.strip() for v in enable.split(",") if v.strip())
        for name in names:
            if name not in KNOWN_CHECKS:
                _fail(line_of("checks", "enable"), f"unknown check {name!r} (known: {', '.join(KNOWN_CHECKS)})")
        cfg.checks = names

    cfg.seed = get("run", "seed", int, cfg.seed)
    cfg.out = get("run", "out", str, cfg.out)
    cfg.jobs = get("run", "jobs", int, cfg.jobs)
    cfg.tolerance_scale = get("run", "tolerance_scale", float, cfg.tolerance_scale)
    if cfg.jobs < 1:
        _fail(line_of("run", "jobs"), "jobs must be >= 1")
    if cfg.tolerance_scale <= 0:
        _fail(line_of("run", "tolerance_scale"), "tolerance_scale must be positive")
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
