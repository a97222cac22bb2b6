"""Experiment driver: presets and config files in, CSV/JSON artifacts out.

Verbs: lqg, bridge, sweep, density, guidance-check, validate.
Exit codes: 0 ok, 1 validation/config error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .errors import ConfigError, NumericalError
from .greens import build_tables
from .guidance import fixed_point_guidance, linear_guidance, pwc_guidance
from .lqg import LqgProblem, ia_baseline, lqg_metrics, solve_lqg
from .presets import MODE_NAMES, ExperimentConfig, load_config, preset, validate_config
from .score import ScoreContext, marginal_density
from .simulate import SimConfig, run_bridge

__all__ = ["main", "run_experiment"]

AFFINE_FIT_SLICES = 49
DENSITY_GRID_POINTS = 501


# ----------------------------------------------------------------------------
# small writers
# ----------------------------------------------------------------------------

def _write_csv(path: Path, header: list, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _write_json(path: Path, obj: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------------------
# single bridge run and its artifacts
# ----------------------------------------------------------------------------

def _sim_config(config: ExperimentConfig, mode: str, sweep_value=None, **extra) -> SimConfig:
    initial, target = config.mixtures(sweep_value)
    return SimConfig(
        target=target,
        schedule=config.schedule(),
        initial=initial,
        guidance_mode=MODE_NAMES[mode],
        n_particles=config.n_particles,
        n_steps=config.n_steps,
        seed=config.seed,
        **extra,
    )


def _affine_fit_rows(mode: str, report, sim_cfg: SimConfig):
    """Least-squares fit u ~ -S x - s per time slice, with R^2 (1-d runs)."""
    guidance_mode = sim_cfg.guidance_mode
    from .simulate import guidance_for_mode

    tables = build_tables(sim_cfg.schedule, guidance_for_mode(sim_cfg).pwc_values(sim_cfg.schedule), sim_cfg.n_steps)
    ctx = ScoreContext(tables, sim_cfg.target, sim_cfg.initial)
    rows = []
    for t_s in sorted(report.snapshots):
        X = report.snapshots[t_s]
        u = ctx.score_batch(t_s, X, report.shifts)[:, 0]
        x = X[:, 0]
        A = np.column_stack([-x, -np.ones_like(x)])
        coef, *_ = np.linalg.lstsq(A, u, rcond=None)
        resid = u - A @ coef
        ss_tot = float(np.sum((u - u.mean()) ** 2))
        r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
        rows.append([mode, f"{t_s:.6f}", f"{coef[0]:.8g}", f"{coef[1]:.8g}", f"{r2:.8g}"])
    return rows


def _dump_coefficients(path: Path, sim_cfg: SimConfig) -> None:
    from .simulate import guidance_for_mode

    tables = build_tables(sim_cfg.schedule, guidance_for_mode(sim_cfg).pwc_values(sim_cfg.schedule), sim_cfg.n_steps)
    table = tables.sample(np.arange(1, sim_cfg.n_steps, max(1, sim_cfg.n_steps // 500)) / sim_cfg.n_steps)
    d = tables.dim
    header = (["t", "a_plus", "a_minus", "b_minus", "c_minus"]
              + [f"theta_plus_{i}" for i in range(d)] + [f"theta_x_{i}" for i in range(d)]
              + [f"theta_y_{i}" for i in range(d)] + ["lambda_plus", "lambda_x", "lambda_y"])
    rows = []
    for j, t in enumerate(table["t"]):
        rows.append([f"{t:.6f}"]
                    + [f"{table[k][j]:.10g}" for k in ("a_plus", "a_minus", "b_minus", "c_minus")]
                    + [f"{v:.10g}" for v in table["theta_plus"][j]]
                    + [f"{v:.10g}" for v in table["theta_x"][j]]
                    + [f"{v:.10g}" for v in table["theta_y"][j]]
                    + [f"{table[k][j]:.10g}" for k in ("lambda_plus", "lambda_x", "lambda_y")])
    _write_csv(path, header, rows)


def _run_point(config: ExperimentConfig, sweep_value, out_dir: Path, dump_coefficients: bool = False) -> dict:
    """Run every guidance mode at one sweep point and write its artifacts."""
    out_dir.mkdir(parents=True, exist_ok=True)
    d = config.dim_for(sweep_value)
    affine = d == 1
    snap_times = tuple(np.linspace(0.01, 0.99, AFFINE_FIT_SLICES)) if affine else ()

    reports = {}
    t_wall = time.perf_counter()
    for mode in config.modes:
        sim_cfg = _sim_config(config, mode, sweep_value, snapshot_times=snap_times)
        reports[mode] = (run_bridge(sim_cfg), sim_cfg)
        if dump_coefficients:
            _dump_coefficients(out_dir / f"coefficients_{mode}.csv", sim_cfg)
    wall = time.perf_counter() - t_wall

    n = config.n_steps
    stride = max(1, n // 500)
    ts = np.arange(n + 1) / n

    # energy.csv: t then P_/E_ per mode
    header = ["t"] + [f"P_{m}" for m in config.modes] + [f"E_{m}" for m in config.modes]
    rows = []
    for j in range(0, n + 1, stride):
        row = [f"{ts[j]:.6f}"]
        for m in config.modes:
            rep = reports[m][0]
            p = rep.power[min(j, n - 1)]
            row.append(f"{p:.8g}")
        for m in config.modes:
            row.append(f"{reports[m][0].energy_trace[j]:.8g}")
        rows.append(row)
    _write_csv(out_dir / "energy.csv", header, rows)

    # terminal.csv: per-component moments per mode
    rows = []
    for m in config.modes:
        rep = reports[m][0]
        for k, (e, se, cnt) in rep.component_energy.items():
            mean = rep.terminal_mean.get(k)
            std = rep.terminal_std.get(k)
            rows.append([
                m, k, cnt, f"{cnt / config.n_particles:.6f}",
                " ".join(f"{v:.6g}" for v in np.atleast_1d(mean)) if mean is not None else "",
                " ".join(f"{v:.6g}" for v in np.atleast_1d(std)) if std is not None else "",
                f"{e:.8g}", f"{se:.4g}",
            ])
    _write_csv(out_dir / "terminal.csv",
               ["mode", "component", "count", "fraction", "terminal_mean", "terminal_std", "energy", "energy_stderr"],
               rows)

    # trajectories.csv: subsampled paths
    rows = []
    for m in config.modes:
        rep = reports[m][0]
        for pid in range(rep.trajectories.shape[0]):
            for j in range(0, n + 1, stride):
                rows.append([m, pid, f"{ts[j]:.6f}"] + [f"{v:.6g}" for v in rep.trajectories[pid, j]])
    _write_csv(out_dir / "trajectories.csv",
               ["mode", "path", "t"] + [f"x_{i}" for i in range(d)], rows)

    if affine:
        rows = []
        for m in config.modes:
            rows.extend(_affine_fit_rows(m, reports[m][0], reports[m][1]))
        _write_csv(out_dir / "affine_fit.csv", ["mode", "t", "S", "s", "R2"], rows)

    if d > 1:
        rows = [[m, z, f"{reports[m][0].zone_energy[z]:.8g}"] for m in config.modes for z in range(d)]
        _write_csv(out_dir / "zone_energy.csv", ["mode", "zone", "energy"], rows)
        rows = []
        for m in config.modes:
            rep = reports[m][0]
            for j in range(0, n + 1, stride):
                for z in range(d):
                    rows.append([m, f"{ts[j]:.6f}", z, f"{rep.mean_trace[j, z]:.6g}"])
        _write_csv(out_dir / "zone_means.csv", ["mode", "t", "zone", "mean"], rows)

    totals = {m: reports[m][0].total for m in config.modes}
    saving = None
    if "mf" in totals and "ia0" in totals:
        saving = 1.0 - totals["mf"] / totals["ia0"]
    summary = {
        "sweep_value": sweep_value,
        "d": d,
        "totals": totals,
        "totals_per_zone": {m: totals[m] / d for m in totals},
        "saving_vs_ia0": saving,
        "wall_seconds": wall,
        "modes": {m: reports[m][0].summary() for m in config.modes},
        "config": config.echo(),
    }
    _write_json(out_dir / "summary.json", summary)

    row = {"value": sweep_value, "d": d, "wall_seconds": wall, "saving": saving}
    for m in config.modes:
        row[f"E_per_zone_{m}"] = totals[m] / d
    return row


def _point_dir(out: Path, config: ExperimentConfig, value) -> Path:
    if config.sweep_axis == "none":
        return out
    tag = {"dimension": "d", "components": "K", "ar-rho": "rho"}[config.sweep_axis]
    return out / f"{tag}={value:g}" if isinstance(value, float) else out / f"{tag}={value}"


def run_experiment(config: ExperimentConfig, out_dir, parallel: bool = False,
                   dump_coefficients: bool = False) -> Path:
    """Run a config (single point or sweep); returns the output directory."""
    errors = validate_config(config)
    if errors:
        raise ConfigError("; ".join(errors))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    if config.lqg is not None:
        _run_lqg(config, out)
        return out

    values = config.sweep_values if config.sweep_axis != "none" else [None]
    if config.sweep_axis in ("dimension", "components"):
        values = [int(v) for v in values]
    jobs = [(config, v, _point_dir(out, config, v), dump_coefficients) for v in values]
    if parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            rows = list(pool.map(_run_point_star, jobs))
    else:
        rows = [_run_point(*job) for job in jobs]

    if config.sweep_axis != "none":
        header = ["value", "d"] + [f"E_per_zone_{m}" for m in config.modes] + ["saving_pct", "wall_seconds"]
        table = []
        for row in rows:
            table.append(
                [row["value"], row["d"]]
                + [f"{row[f'E_per_zone_{m}']:.6g}" for m in config.modes]
                + [f"{100 * row['saving']:.2f}" if row["saving"] is not None else "", f"{row['wall_seconds']:.1f}"]
            )
        _write_csv(out / "sweep_table.csv", header, table)
    return out


def _run_point_star(job):
    return _run_point(*job)


# ----------------------------------------------------------------------------
# lqg verb
# ----------------------------------------------------------------------------

def _run_lqg(config: ExperimentConfig, out: Path) -> None:
    spec = config.lqg
    problem = LqgProblem(spec.kappa, spec.q, spec.m_tar, spec.sigma_tar)
    sol = solve_lqg(problem)
    ia0 = ia_baseline(problem, sol, 0.0)
    iam = ia_baseline(problem, sol, spec.m_tar)

    mf = lqg_metrics(sol)
    e0 = lqg_metrics(sol, s_of_t=ia0.s, m_of_t=ia0.m)
    em = lqg_metrics(sol, s_of_t=iam.s, m_of_t=iam.m)

    grid = mf.grid
    stride = max(1, (grid.size - 1) // 1000)
    rows = []
    for j in range(0, grid.size, stride):
        t = grid[j]
        rows.append([
            f"{t:.6f}", f"{sol.S(t):.8g}", f"{sol.Sigma(t):.8g}",
            f"{sol.m(t):.8g}", f"{sol.s(t):.8g}", f"{ia0.s(t):.8g}", f"{iam.s(t):.8g}",
            f"{mf.power[j]:.8g}", f"{e0.power[j]:.8g}", f"{em.power[j]:.8g}",
            f"{mf.energy[j]:.8g}", f"{e0.energy[j]:.8g}", f"{em.energy[j]:.8g}",
        ])
    _write_csv(out / "lqg.csv",
               ["t", "S", "Sigma", "m_mf", "s_mf", "s_ia0", "s_iam",
                "P_mf", "P_ia0", "P_iam", "E_mf", "E_ia0", "E_iam"],
               rows)

    sweep_rows = []
    for m_bar in spec.m_bar_grid:
        ia = ia_baseline(problem, sol, float(m_bar))
        e = lqg_metrics(sol, s_of_t=ia.s, m_of_t=ia.m)
        sweep_rows.append([f"{m_bar:.6g}", f"{e.total:.8g}"])
    _write_csv(out / "lqg_mbar_sweep.csv", ["m_bar", "E_total"], sweep_rows)

    _write_json(out / "summary.json", {
        "kappa": spec.kappa, "q": spec.q, "m_tar": spec.m_tar, "sigma_tar": spec.sigma_tar,
        "delta": sol.delta, "rho": None if np.isnan(sol.rho) else sol.rho, "S1": sol.S1,
        "E_mf": mf.total, "E_ia0": e0.total, "E_iam": em.total,
        "config": config.echo(),
    })


# ----------------------------------------------------------------------------
# density and guidance-check verbs
# ----------------------------------------------------------------------------

def _run_density(config: ExperimentConfig, times, out: Path) -> None:
    initial, target = config.mixtures()
    if target.dim != 1:
        raise ConfigError("density emission is 1-d only")
    sched = config.schedule()
    lo = float(np.min(target.means)) - 4 * max(config.target.sigmas)
    hi = float(np.max(target.means)) + 4 * max(config.target.sigmas)
    if initial is not None:
        lo = min(lo, float(np.min(initial.means)) - 4 * max(config.initial.sigmas))
        hi = max(hi, float(np.max(initial.means)) + 4 * max(config.initial.sigmas))
    xs = np.linspace(lo, hi, DENSITY_GRID_POINTS)[:, None]

    from .simulate import guidance_for_mode

    cols = {}
    for mode in config.modes:
        sim_cfg = _sim_config(config, mode)
        tables = build_tables(sim_cfg.schedule, guidance_for_mode(sim_cfg).pwc_values(sched), config.n_steps)
        ctx = ScoreContext(tables, target, initial)
        for t in times:
            t_eval = ctx.clip_t(t)
            cols[(mode, t)] = marginal_density(ctx, t_eval, xs)

    rows = []
    for t in times:
        for i, x in enumerate(xs[:, 0]):
            rows.append([f"{t:.4f}", f"{x:.6f}"] + [f"{cols[(m, t)][i]:.8g}" for m in config.modes])
    _write_csv(out / "density.csv", ["t", "x"] + [f"p_{m}" for m in config.modes], rows)


def _run_guidance_check(config: ExperimentConfig, out: Path, tol: float = 2e-4, max_iter: int = 15) -> dict:
    initial, target = config.mixtures()
    sched = config.schedule()
    mids = sched.midpoints()
    mid_steps = np.clip(np.round(mids * config.n_steps).astype(int), 0, config.n_steps)

    def mean_map(nu_values):
        traj = pwc_guidance(sched, nu_values)
        sim_cfg = SimConfig(
            target=target, schedule=sched, initial=initial,
            guidance_mode="mf-linear", guidance=traj,
            n_particles=config.n_particles, n_steps=config.n_steps, seed=config.seed,
        )
        rep = run_bridge(sim_cfg)
        return rep.mean_trace[mid_steps]

    d = target.dim
    nu0 = np.repeat(target.mean[None, :], sched.n_intervals, axis=0)
    result = fixed_point_guidance(sched, mean_map, nu0, tol=tol, max_iter=max_iter)

    lin = linear_guidance(initial.mean if initial is not None else np.zeros(d), target.mean)
    lin_mid = np.atleast_2d(lin(mids))
    resid = result.guidance.values - lin_mid

    _write_csv(out / "guidance_check.csv", ["iteration", "max_update"],
               [[i + 1, f"{u:.8g}"] for i, u in enumerate(result.max_updates)])
    rows = []
    for i, tm in enumerate(mids):
        rows.append([i, f"{tm:.6f}",
                     " ".join(f"{v:.8g}" for v in result.guidance.values[i]),
                     " ".join(f"{v:.8g}" for v in lin_mid[i]),
                     f"{np.linalg.norm(resid[i]):.8g}"])
    _write_csv(out / "midpoint_residuals.csv", ["interval", "t_mid", "nu_fixed_point", "nu_linear", "residual"], rows)

    summary = {
        "converged": result.converged,
        "iterations": result.n_iterations,
        "tolerance": tol,
        "max_updates": result.max_updates,
        "max_residual_vs_linear": float(np.max(np.linalg.norm(resid, axis=1))),
        "config": config.echo(),
    }
    _write_json(out / "summary.json", summary)
    return summary


# ----------------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # map usage errors to exit code 1
        raise ConfigError(message)


def _load(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
    elif getattr(args, "preset", None):
        cfg = preset(args.preset)
    elif getattr(args, "scenario", None):
        cfg = preset(f"scenario-{args.scenario.lower()}")
    else:
        raise ConfigError("need --preset NAME or --config PATH")
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    if getattr(args, "modes", None):
        cfg.modes = [m.strip() for m in args.modes.split(",") if m.strip()]
        unknown = [m for m in cfg.modes if m not in MODE_NAMES]
        if unknown:
            raise ConfigError(f"unknown modes {unknown}; choose from {sorted(MODE_NAMES)}")
    if getattr(args, "values", None):
        cfg.sweep_values = [float(v) for v in args.values.split(",") if v.strip()]
    if getattr(args, "particles", None):
        cfg.n_particles = args.particles
    if getattr(args, "steps", None):
        cfg.n_steps = args.steps
    return cfg


def _build_parser() -> _Parser:
    parser = _Parser(prog="mfbridge", description=__doc__)
    sub = parser.add_subparsers(dest="verb", required=True)

    def common(p, preset_default=None):
        p.add_argument("--preset", default=preset_default)
        p.add_argument("--config")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", default="out")
        p.add_argument("--modes", help="comma list from mf,ia0,iam,cl")
        p.add_argument("--particles", type=int, help="override sim.particles")
        p.add_argument("--steps", type=int, help="override sim.steps")

    p = sub.add_parser("lqg", help="closed-form scalar thermostat benchmark")
    common(p, preset_default="lqg-tcl")
    p.add_argument("--kappa", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--m-tar", type=float, dest="m_tar")
    p.add_argument("--sigma-tar", type=float, dest="sigma_tar")
    p.add_argument("--m-bar-grid", dest="m_bar_grid", help="comma list of centres")

    p = sub.add_parser("bridge", help="single scenario run")
    common(p)
    p.add_argument("--dump-coefficients", action="store_true", dest="dump_coefficients",
                   help="also write the dense kernel-coefficient tables per mode")

    p = sub.add_parser("sweep", help="dimension / components / ar-rho sweep")
    common(p)
    p.add_argument("--values", help="override sweep values, comma list")
    p.add_argument("--parallel", action="store_true")

    p = sub.add_parser("density", help="analytic marginal density curves")
    common(p)
    p.add_argument("--scenario", choices=["A", "B", "a", "b"])
    p.add_argument("--times", default="0.1,0.3,0.5,0.7,1.0")

    p = sub.add_parser("guidance-check", help="fixed-point iteration diagnostics")
    common(p)
    p.add_argument("--tol", type=float, default=2e-4)
    p.add_argument("--max-iter", type=int, default=15, dest="max_iter")

    p = sub.add_parser("validate", help="validate a config / preset")
    common(p)
    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        out = Path(args.out)

        if args.verb == "validate":
            cfg = _load(args)
            errors = validate_config(cfg)
            if errors:
                for e in errors:
                    print(f"error: {e}", file=sys.stderr)
                return 1
            print("ok")
            return 0

        if args.verb == "lqg":
            cfg = _load(args)
            if cfg.lqg is None:
                from .presets import LqgSpec

                cfg.lqg = LqgSpec()
            for field_name in ("kappa", "q", "m_tar", "sigma_tar"):
                v = getattr(args, field_name, None)
                if v is not None:
                    setattr(cfg.lqg, field_name, v)
            if args.m_bar_grid:
                cfg.lqg.m_bar_grid = [float(v) for v in args.m_bar_grid.split(",")]
            run_experiment(cfg, out)
            print(f"wrote {out}/lqg.csv")
            return 0

        if args.verb == "bridge":
            cfg = _load(args)
            cfg.sweep_axis = "none"
            run_experiment(cfg, out, dump_coefficients=args.dump_coefficients)
            print(f"wrote {out}/summary.json")
            return 0

        if args.verb == "sweep":
            cfg = _load(args)
            if cfg.sweep_axis == "none":
                raise ConfigError(f"config {cfg.name!r} has no sweep axis")
            run_experiment(cfg, out, parallel=args.parallel)
            print(f"wrote {out}/sweep_table.csv")
            return 0

        if args.verb == "density":
            cfg = _load(args)
            errors = validate_config(cfg)
            if errors:
                raise ConfigError("; ".join(errors))
            times = [float(v) for v in args.times.split(",") if v.strip()]
            out.mkdir(parents=True, exist_ok=True)
            _run_density(cfg, times, out)
            print(f"wrote {out}/density.csv")
            return 0

        if args.verb == "guidance-check":
            cfg = _load(args)
            errors = validate_config(cfg)
            if errors:
                raise ConfigError("; ".join(errors))
            out.mkdir(parents=True, exist_ok=True)
            summary = _run_guidance_check(cfg, out, tol=args.tol, max_iter=args.max_iter)
            status = "converged" if summary["converged"] else "NOT converged"
            print(f"{status} in {summary['iterations']} iterations; "
                  f"max residual vs linear {summary['max_residual_vs_linear']:.4g}")
            return 0

        raise ConfigError(f"unknown verb {args.verb!r}")
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
