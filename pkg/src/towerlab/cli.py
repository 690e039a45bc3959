"""Batch front door: subcommands over a parsed run configuration, CSV and
report emission with atomic writes, deterministic output for a fixed seed.
"""

from __future__ import annotations

import argparse
import os
import sys
import tempfile

import numpy as np

from .analytic import dims_constants
from .config import RunConfig, load_config
from .energy import (
    TowerConfig,
    expansion_constants,
    find_critical_point,
    phi,
)
from .errors import ConfigError, NoConvergenceError, SolverError, TowerlabError
from .grid import BallDomain, ProfileDomain, SlabDomain
from .pde import (
    DiscreteProblem,
    continue_in_epsilon,
    export_field_csv,
    fit_concentration,
    solve_tower,
    tower_grid,
)
from .verify import (
    StudySetup,
    check_constants_oracle,
    check_error_rate,
    check_expansion_C0,
    check_expansion_C1,
    check_kernel_residuals,
    check_projection_bounds,
    check_reduced_energy,
    check_tower_construction,
    reports_csv,
    reports_summary,
)
from .weights import affine_weight, product_weight

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_CONFIG_ERROR = 2
EXIT_SOLVER_ERROR = 3


def atomic_write(path: str, text: str):
    """Write-temp-then-rename so outputs are never observed half-written."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", text=True)
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def build_domain(cfg: RunConfig):
    if cfg.domain_kind == "slab":
        return SlabDomain(r_max=cfg.r_max, z_max=cfg.z_max)
    if cfg.domain_kind == "ball":
        return BallDomain()
    return ProfileDomain(z_knots=cfg.profile_z, r_values=cfg.profile_r)


def build_weight(cfg: RunConfig):
    z_extent = cfg.z_max if cfg.domain_kind == "slab" else 2.0
    if cfg.weight_kind == "affine":
        return affine_weight(cfg.n, cfg.a0, cfg.beta, z_extent=z_extent)
    return product_weight(cfg.n, cfg.kappas, cfg.offsets, z_extent=z_extent)


def build_setup(cfg: RunConfig) -> StudySetup:
    dims = dims_constants(cfg.n)
    weight = build_weight(cfg)
    ec = expansion_constants(cfg.n, cfg.k)
    init = TowerConfig(k=cfg.k, d=cfg.init_d, t=cfg.init_t, s=cfg.init_s)
    cp = find_critical_point(cfg.n, cfg.k, weight, init=init, ec=ec)
    return StudySetup(
        dims=dims,
        k=cfg.k,
        weight=weight,
        ec=ec,
        cp=cp,
        domain_kind="ball" if cfg.domain_kind == "ball" else "half_space",
        quad_tol_abs=cfg.quad_tol_abs,
        quad_tol_rel=cfg.quad_tol_rel,
        grid_domain=build_domain(cfg),
        resolution=None if cfg.resolution == 0 else cfg.resolution,
        cells_per_delta=cfg.cells_per_delta,
        max_resolution=cfg.max_resolution,
        tolerance_scale=cfg.tolerance_scale,
    )


def _csv(header: str, rows, config_hash: str, tag: str) -> str:
    lines = [f"# config_sha256={config_hash}", f"# check={tag}", header]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------

def cmd_constants(cfg: RunConfig, out: str) -> int:
    ec = expansion_constants(cfg.n, cfg.k, check=True)
    header = "n,k,a1,a2,a3,c1,c2,c3,c4,c5,c6,c7"
    row = [cfg.n, cfg.k] + [getattr(ec, f) for f in ("a1", "a2", "a3", "c1", "c2", "c3", "c4", "c5", "c6", "c7")]
    atomic_write(os.path.join(out, "constants.csv"), _csv(header, [row], cfg.sha256, "expansion-constants"))
    print(f"a1={ec.a1:.17g} a2={ec.a2:.17g} a3={ec.a3:.17g}")
    return EXIT_OK


def cmd_phi_crit(cfg: RunConfig, out: str) -> int:
    setup = build_setup(cfg)
    cp = setup.cp
    header = "t," + ",".join(f"d{i + 1}" for i in range(cfg.k))
    header += ("," + ",".join(f"s{i + 1}" for i in range(cfg.k - 1))) if cfg.k > 1 else ""
    header += ",phi,gradient_norm,inertia_pos,inertia_neg,inertia_zero"
    row = (
        [cp.config.t]
        + list(cp.config.d)
        + list(cp.config.s)
        + [cp.phi_value, cp.gradient_norm, *cp.hessian_inertia]
    )
    atomic_write(os.path.join(out, "phi_crit.csv"), _csv(header, [row], cfg.sha256, "reduced-energy-critical-point"))
    coords = ", ".join(
        [f"t={cp.config.t:.6f}"]
        + [f"d{i + 1}={d:.6f}" for i, d in enumerate(cp.config.d)]
        + [f"s{i + 1}={s:.6f}" for i, s in enumerate(cp.config.s)]
    )
    print(f"{coords}  inertia={cp.hessian_inertia}  min-max={cp.is_minmax}")
    return EXIT_OK


def cmd_phi_landscape(cfg: RunConfig, out: str) -> int:
    setup = build_setup(cfg)
    cp = setup.cp
    t_grid = cp.config.t * np.exp(np.linspace(-1.0, 1.0, 41))
    d_grid = cp.config.d[0] * np.exp(np.linspace(-1.0, 1.0, 41))
    rows = []
    for t in t_grid:
        for d1 in d_grid:
            d = (d1,) + cp.config.d[1:]
            value = phi(TowerConfig(k=cfg.k, d=d, t=float(t), s=cp.config.s), setup.weight, setup.ec)
            rows.append([t, d1, value])
    atomic_write(os.path.join(out, "phi_landscape.csv"), _csv("t,d1,phi", rows, cfg.sha256, "reduced-energy-landscape"))
    print(f"wrote {len(rows)} landscape samples (other coordinates pinned at the critical point)")
    return EXIT_OK


def cmd_build_tower(cfg: RunConfig, out: str) -> int:
    setup = build_setup(cfg)
    eps = cfg.eps_start
    tower_cfg = setup.cp.config.with_epsilon(eps)
    grid = tower_grid(
        setup.grid_domain, setup.dims, tower_cfg,
        resolution=setup.resolution, cells_per_delta=cfg.cells_per_delta,
        gamma=cfg.gamma, max_resolution=cfg.max_resolution,
    )
    prob = DiscreteProblem(grid, setup.weight, eps, setup.dims)
    ts = solve_tower(prob, tower_cfg, tol=cfg.newton_tol)
    export_field_csv(ts.result.u, os.path.join(out, "field.csv"), k=cfg.k, n=cfg.n)
    header = "epsilon,converged,iterations,residual_norm,correction_norm,phi_norm"
    row = [eps, ts.result.converged, ts.result.iterations, ts.result.residual_norm,
           ts.result.correction_norm, ts.phi_norm]
    atomic_write(os.path.join(out, "build_tower.csv"), _csv(header, [row], cfg.sha256, "tower-single-solve"))
    print(
        f"epsilon={eps:g} converged={ts.result.converged} residual={ts.result.residual_norm:.3e} "
        f"correction={ts.result.correction_norm:.6f}"
    )
    return EXIT_OK if ts.result.converged else EXIT_SOLVER_ERROR


def cmd_continue(cfg: RunConfig, out: str) -> int:
    setup = build_setup(cfg)
    steps = continue_in_epsilon(
        setup.grid_domain, setup.weight, setup.dims, setup.cp.config, cfg.eps_schedule(),
        resolution=setup.resolution, cells_per_delta=cfg.cells_per_delta,
        gamma=cfg.gamma, max_resolution=cfg.max_resolution, newton_tol=cfg.newton_tol,
        max_iter=cfg.max_iter,
    )
    fits = fit_concentration(steps, setup.dims, cfg.k) if len(steps) >= 4 else []
    fit_rows = [[f.level, f.slope, f.intercept, f.r_squared] for f in fits]
    atomic_write(
        os.path.join(out, "fit.csv"),
        _csv("level,slope,intercept,r_squared", fit_rows, cfg.sha256, "concentration-rates"),
    )
    diag_rows = [
        [st.epsilon, st.result.iterations, st.result.residual_norm, st.result.correction_norm,
         st.nodal_radii] + [p.delta_hat for p in st.peaks]
        for st in steps
    ]
    header = "epsilon,iterations,residual_norm,correction_norm,nodal_radii," + ",".join(
        f"delta_hat_{i + 1}" for i in range(cfg.k)
    )
    atomic_write(os.path.join(out, "continue_diagnostics.csv"), _csv(header, diag_rows, cfg.sha256, "continuation-diagnostics"))
    export_field_csv(steps[-1].result.u, os.path.join(out, "field.csv"), k=cfg.k, n=cfg.n)
    for f in fits:
        print(f"level {f.level}: slope={f.slope:.4f} intercept={f.intercept:.4f} R2={f.r_squared:.5f}")
    return EXIT_OK


def run_one_check(cfg: RunConfig, name: str):
    """Build the study fresh and run a single named check (worker-safe)."""
    setup = build_setup(cfg)
    schedule = cfg.eps_schedule()
    if name == "constants":
        return [check_constants_oracle()]
    if name == "kernel":
        return [check_kernel_residuals(cfg.n)]
    if name == "reduced":
        return [check_reduced_energy(setup.weight, cfg.n, seed=cfg.seed)]
    if name == "projection":
        return [check_projection_bounds(setup, schedule)]
    if name == "error-rate":
        reports = []
        for k in (1, 2):
            sub = build_setup(_with_k(cfg, k))
            reports.append(check_error_rate(sub, schedule, k=k))
        return reports
    if name == "expansion-c0":
        return [check_expansion_C0(setup, schedule)]
    if name == "expansion-c1":
        return [check_expansion_C1(setup, schedule)]
    if name == "tower":
        schedules = {1: schedule, 2: [e for e in schedule if e >= schedule[0] * cfg.eps_ratio ** (cfg.eps_count - 1)]}
        return check_tower_construction(setup, schedules, resolution=cfg.resolution or 128)
    raise ConfigError(f"unknown check {name!r}")


def _with_k(cfg: RunConfig, k: int) -> RunConfig:
    import copy

    out = copy.copy(cfg)
    out.k = k
    out.init_d = tuple(2.0 ** -(i + 1) for i in range(k))
    out.init_s = (0.0,) * (k - 1)
    return out


def cmd_verify(cfg: RunConfig, out: str) -> int:
    reports = []
    if cfg.jobs > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            futures = [(name, pool.submit(run_one_check, cfg, name)) for name in cfg.checks]
            for _, fut in futures:
                reports.extend(fut.result())
    else:
        for name in cfg.checks:
            reports.extend(run_one_check(cfg, name))
    atomic_write(os.path.join(out, "report.csv"), reports_csv(reports, cfg.sha256, "verify-suite"))
    summary = reports_summary(reports)
    atomic_write(os.path.join(out, "summary.txt"), summary)
    print(summary, end="")
    if not all(r.passed for r in reports):
        failed = [r for r in reports if not r.passed]
        atomic_write(
            os.path.join(out, "failures.csv"),
            reports_csv(failed, cfg.sha256, "verify-failures"),
        )
        return EXIT_CHECK_FAILED
    return EXIT_OK


COMMANDS = {
    "constants": cmd_constants,
    "phi-crit": cmd_phi_crit,
    "phi-landscape": cmd_phi_landscape,
    "build-tower": cmd_build_tower,
    "continue": cmd_continue,
    "verify": cmd_verify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="towerlab",
        description="Construct and verify alternating-sign bubble towers of the "
        "weighted almost-critical problem.",
    )
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the run configuration")
    parser.add_argument("--out", default=None, help="output directory (overrides config)")
    parser.add_argument("--seed", type=int, default=None, help="seed override")
    parser.add_argument("--jobs", type=int, default=None, help="parallel verify jobs")
    parser.add_argument("--tolerance-scale", type=float, default=None, help="scale all check tolerances")
    args = parser.parse_args(argv)

    try:
        cfg = load_config(args.config)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    if args.out is not None:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.tolerance_scale is not None:
        cfg.tolerance_scale = args.tolerance_scale

    try:
        return COMMANDS[args.command](cfg, cfg.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except (NoConvergenceError, SolverError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER_ERROR
    except TowerlabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECK_FAILED


if __name__ == "__main__":
    sys.exit(main())
