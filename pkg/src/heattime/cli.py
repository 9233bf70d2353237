"""Command-line front end.

Examples
--------
::

    heattime time-optimal --set K=0.5 --set M=1 --out run1
    heattime --config study.ini study-thm1
    heattime --write-defaults defaults.ini
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import COMMANDS, ConfigError, RunConfig, defaults_reference, parse_config
from .dual_objective import DualObjectiveSpec
from .errors import (
    HypothesisError,
    InfeasibleBracketError,
    NonConvergenceError,
    UniqueContinuationError,
)
from .heat_dynamics import TimeGrid, solve_forward
from .io import write_csv
from .norm_control import minimal_norm
from .perturbation_lab import (
    MinimizerRow,
    PerturbationStudySpec,
    minimizer_convergence_study,
    run_theorem1_study,
    run_theorem2_study,
)
from .time_control import optimal_time

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_HYPOTHESIS = 2
EXIT_NONCONVERGENCE = 3
EXIT_INFEASIBLE = 4


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="heattime",
        description="Time-optimal and minimal-norm control of the 1-D heat equation with a potential.",
    )
    p.add_argument("command", nargs="?", choices=COMMANDS, help="operation to run (overrides the config)")
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                   help="override one configuration key (repeatable)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides the config)")
    p.add_argument("--quiet", action="store_true", help="suppress the summary block")
    p.add_argument("--write-defaults", metavar="PATH",
                   help="write the reference of keys and defaults to PATH and exit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return p


def _summary(title: str, items) -> str:
    width = max(len(k) for k, _ in items)
    lines = [f"== {title} =="]
    for k, v in items:
        if isinstance(v, float):
            v = f"{v:.8g}"
        lines.append(f"  {k:<{width}} : {v}")
    return "\n".join(lines)


def _run_forward(cfg: RunConfig, problem, out: Path):
    tg = TimeGrid.for_horizon(cfg.T, cfg.dt)
    traj = solve_forward(problem.y0, None, problem.potential, tg)
    traj.to_csv(out / "trajectory.csv", comment=cfg.header())
    norms = traj.norms()
    return _summary("forward", [
        ("T", tg.t_final), ("steps", tg.n_steps), ("|y0|", float(norms[0])),
        ("|y(T)|", float(norms[-1])), ("K", cfg.K), ("inside ball", bool(norms[-1] <= cfg.K)),
    ])


def _run_min_norm(cfg: RunConfig, problem, out: Path):
    spec = DualObjectiveSpec.from_problem(problem, cfg.T, cfg.dt)
    res = minimal_norm(spec, tol_gap=cfg.tol_gap, max_iters=cfg.max_iters, strict=True,
                       record_trace=cfg.emit_trace)
    m = res.minimizer
    write_csv(out / "min_norm.csv",
              ["T", "M_T", "M_lower", "gap", "rel_gap", "reach_error", "iterations"],
              [[res.T, res.M_T, m.M_lower, m.gap, m.rel_gap, res.reach_error, m.iterations]],
              cfg.header())
    res.control.to_csv(out / "control.csv", comment=cfg.header())
    if cfg.emit_trace:
        m.write_trace(out / "trace.csv", comment=cfg.header())
    return _summary("min-norm", [
        ("T", res.T), ("M_T", res.M_T), ("gap", m.gap), ("rel_gap", m.rel_gap),
        ("reach_error", res.reach_error), ("iterations", m.iterations),
    ])


def _run_time_optimal(cfg: RunConfig, problem, out: Path):
    res = optimal_time(problem, tol_T=cfg.tol_T, tol_gap=cfg.tol_gap, dt=cfg.dt,
                       t_max=cfg.t_max, max_iters=cfg.max_iters)
    reach = res.reach_error
    write_csv(out / "time_optimal.csv",
              ["T_star", "M", "M_residual", "bracket_lo", "bracket_hi", "gap", "reach_error", "inner_solves"],
              [[res.T_star, res.M, res.M_residual, res.bracket[0], res.bracket[1],
                res.norm_result.gap, reach, res.inner_solves]],
              cfg.header())
    res.control.to_csv(out / "control.csv", comment=cfg.header())
    return _summary("time-optimal", [
        ("T*", res.T_star), ("M", res.M), ("M_T at T*", res.norm_result.M_T),
        ("gap", res.norm_result.gap), ("reach_error", reach), ("inner solves", res.inner_solves),
    ])


def _study_spec(cfg: RunConfig, problem, base_dir) -> PerturbationStudySpec:
    try:
        return PerturbationStudySpec(
            base=problem,
            direction=cfg.build_direction(base_dir),
            epsilons=cfg.epsilons,
            eta=cfg.eta,
            eta_fraction=cfg.eta_fraction,
            tol_T=cfg.study_tol_T,
            tol_gap=cfg.study_tol_gap,
            dt=cfg.dt,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _table_head(columns, rows, limit: int = 6) -> list:
    lines = ["  " + "  ".join(f"{c:>12}" for c in columns)]
    for r in rows[:limit]:
        cells = []
        for v in r:
            if v is None:
                cells.append(f"{'-':>12}")
            elif isinstance(v, str):
                cells.append(f"{v or '-':>12}")
            else:
                cells.append(f"{v:>12.5g}")
        lines.append("  " + "  ".join(cells))
    return lines


def _run_study(cfg: RunConfig, problem, out: Path, base_dir):
    spec = _study_spec(cfg, problem, base_dir)
    header = f"{cfg.header()} spec_hash={spec.digest()}"
    if cfg.command == "study-minimizers":
        rows = minimizer_convergence_study(spec, cfg.horizons)
        cols = MinimizerRow.columns()
        write_csv(out / "study_minimizers.csv", cols, [r.values() for r in rows], header)
        for T in cfg.horizons:
            sel = [(r.eps, r.diff) for r in rows if r.T == T and r.eps > 0 and not r.flag]
            if sel:
                write_csv(out / f"minimizers_T{T:g}_diff.csv", ["eps", "diff"], sel, header)
        return "\n".join(["== study-minimizers =="] + _table_head(["T", "eps", "diff", "flag"],
                          [[r.T, r.eps, r.diff, r.flag] for r in rows]))

    runner = run_theorem1_study if cfg.command == "study-thm1" else run_theorem2_study
    study = runner(spec)
    stem = "study_thm1" if cfg.command == "study-thm1" else "study_thm2"
    study.write(out / f"{stem}.csv", prefix=cfg.header())
    cols = ["dT", "err_L2", "err_sup"] if cfg.command == "study-thm1" else ["dM", "dT2", "err_L2", "err_sup"]
    study.write_plot_data(out, stem, cols, header)
    show = ["eps"] + cols + ["flag"]
    table = [[getattr(r, c) for c in show] for r in study.rows]
    return "\n".join(
        [f"== {cfg.command} ==", f"  T* = {study.T_star:.10g}   M = {study.M:.8g}   eta = {study.eta:.6g}"]
        + _table_head(show, table)
    )


def dispatch(cfg: RunConfig, base_dir: Path | None = None, quiet: bool = False, stream=None) -> int:
    """Run ``cfg.command`` and write its artifacts under ``cfg.out``.

    Returns the process exit status.
    """
    stream = stream or sys.stdout
    err = sys.stderr
    out = Path(cfg.out)
    try:
        problem = cfg.build_problem(base_dir)
    except ValueError as exc:  # includes ConfigError
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    try:
        out.mkdir(parents=True, exist_ok=True)
        if cfg.command == "forward":
            text = _run_forward(cfg, problem, out)
        elif cfg.command == "min-norm":
            text = _run_min_norm(cfg, problem, out)
        elif cfg.command == "time-optimal":
            text = _run_time_optimal(cfg, problem, out)
        else:
            text = _run_study(cfg, problem, out, base_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=err)
        return EXIT_CONFIG
    except HypothesisError as exc:
        print(f"hypothesis check failed: {exc}", file=err)
        return EXIT_HYPOTHESIS
    except (NonConvergenceError, UniqueContinuationError) as exc:
        print(f"non-convergence: {exc}", file=err)
        return EXIT_NONCONVERGENCE
    except InfeasibleBracketError as exc:
        print(f"infeasible: {exc}", file=err)
        return EXIT_INFEASIBLE
    if not quiet:
        print(text, file=stream)
        print(f"  outputs in {out}", file=stream)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.write_defaults:
        Path(args.write_defaults).write_text(defaults_reference())
        return EXIT_OK
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"out={args.out}")
    try:
        cfg = parse_config(args.config, overrides, command=args.command)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    base_dir = Path(args.config).resolve().parent if args.config else None
    return dispatch(cfg, base_dir, quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
