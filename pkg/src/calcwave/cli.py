"""Command-line entry point: ``calcwave {mesh,converge,simulate,check}``.

Exit codes: 0 success, 1 usage or validation error, 2 numerical instability.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

EXIT_OK, EXIT_INVALID, EXIT_UNSTABLE = 0, 1, 2
THREADS_ENV = "CALCWAVE_THREADS"

log = logging.getLogger("calcwave")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _length(text: str) -> float:
    from .config import _to_float
    try:
        v = _to_float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    return v


def _threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise UsageError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _load_config(args):
    from .config import parse_config
    from .scenarios import builtin_scenario
    cfg = parse_config(args.config) if args.config else builtin_scenario(args.scenario)
    return cfg.with_overrides(dt=getattr(args, "dt", None), h=getattr(args, "h", None),
                              t_end=getattr(args, "t_end", None), directory=getattr(args, "out", None))


def cmd_mesh(args) -> int:
    from .mesh import generate_geometry, validate_mesh, write_mesh
    cyto, er, imap = generate_geometry(args.r_inner, args.r_outer, args.h)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    status = EXIT_OK
    for mesh, name in ((cyto, "cytosol"), (er, "er")):
        rep = validate_mesh(mesh)
        path = out / f"{name}.mesh"
        write_mesh(mesh, path)
        print(f"{path}: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles, "
              f"min angle {rep.min_angle_deg:.1f} deg, violations {rep.violations}")
        if not rep.ok:
            status = EXIT_INVALID
    print(f"interface: {len(imap)} paired nodes")
    return status


def cmd_converge(args) -> int:
    from .verification import convergence_study, default_levels
    report = convergence_study(args.example, default_levels(args.levels), threads=_threads())
    print(report.table())
    if args.csv:
        Path(args.csv).parent.mkdir(parents=True, exist_ok=True)
        report.write_csv(args.csv)
        print(f"wrote {args.csv}")
    return EXIT_OK


def _write_outputs(cfg, disc, result, out: Path):
    from .config import write_config
    from .io import write_snapshot_vtk, write_timeseries_csv
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.ini")
    write_timeseries_csv(result.series, out / "timeseries.csv")
    for k, snap in enumerate(result.snapshots):
        write_snapshot_vtk(snap.state, disc, out / f"snap_{k:02d}_t{snap.requested:g}")


def cmd_simulate(args) -> int:
    from .scenarios import build_discretization, run_scenario
    from .stepper import InstabilityError
    cfg = _load_config(args)
    if args.no_snapshots:
        from dataclasses import replace
        cfg = replace(cfg, output=replace(cfg.output, snapshot_times=()))
    out = Path(cfg.output.directory)
    disc = build_discretization(cfg)
    nm = cfg.numerics
    print(f"{cfg.name}: h={cfg.geometry.h:.6g}, dt={nm.dt:g}, T={nm.t_end:g}, {nm.n_steps} steps, "
          f"{disc.cyto.n_vertices}+{disc.er.n_vertices} nodes")
    t0 = time.perf_counter()
    try:
        sr = run_scenario(cfg, threads=_threads(), disc=disc)
    except InstabilityError as exc:
        if exc.result is not None:
            _write_outputs(cfg, disc, exc.result, out)
        print(f"unstable: {exc} (blow-up step {exc.step})", file=sys.stderr)
        return EXIT_UNSTABLE
    _write_outputs(cfg, disc, sr.result, out)
    series = sr.result.series
    peak = max(series, key=lambda r: r.u_mean)
    st = sr.plan.stats
    print(f"done in {time.perf_counter() - t0:.1f} s (step {st.step_time:.1f} s, solves {st.solve_time:.1f} s)")
    print(f"max u {max(r.u_max for r in series):.6g}, peak mean u {peak.u_mean:.6g} at t={peak.t:g}, "
          f"min ue {min(r.ue_min for r in series):.6g}, max P {max(r.p_max for r in series):.6g}")
    print(f"wrote {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .gating import open_probability
    from .mesh import interface_map, validate_mesh
    from .scenarios import build_discretization, build_problem, initial_state
    from .stepper import InstabilityError, build_plan, run

    cfg = _load_config(args)
    ok = True

    def report(name, passed, detail=""):
        nonlocal ok
        ok &= bool(passed)
        print(f"{'ok  ' if passed else 'FAIL'} {name}{': ' + detail if detail else ''}")

    report("config invariants", True, f"{cfg.name}, {cfg.numerics.n_steps} steps")
    disc = build_discretization(cfg)
    for mesh in (disc.cyto, disc.er):
        rep = validate_mesh(mesh)
        report(f"mesh {mesh.domain.value}", rep.ok, f"min angle {rep.min_angle_deg:.1f} deg")
    recovered = interface_map(disc.cyto, disc.er)
    same = np.array_equal(np.sort(recovered.pairs, axis=0), np.sort(disc.interface.pairs, axis=0))
    report("interface pairing", same, f"{len(disc.interface)} nodes")
    plan = build_plan(disc, build_problem(cfg), cfg.numerics.dt, tol=cfg.numerics.tol,
                      blowup=cfg.numerics.blowup, negative_floor=cfg.numerics.negative_floor)
    report("system matrices symmetric positive definite", plan.assembly_count == 3)
    s0 = initial_state(cfg, disc)
    mass0 = float(disc.mass_weights_c @ s0.U + disc.mass_weights_e @ s0.Ue)
    n = min(args.steps, cfg.numerics.n_steps)
    try:
        res = run(s0, plan, n)
        fin = res.final
        p = open_probability(fin.gating)
        report(f"{n} steps finite and non-negative", fin.all_finite() and fin.U.min() >= 0 and fin.Ue.min() >= 0)
        report("gating in simplex", p.min() >= 0 and p.max() <= 1)
        mass1 = float(disc.mass_weights_c @ fin.U + disc.mass_weights_e @ fin.Ue)
        print(f"     total calcium {mass0:.10g} -> {mass1:.10g}")
    except InstabilityError as exc:
        report(f"{n} steps stable", False, str(exc))
    return EXIT_OK if ok else EXIT_INVALID


def _add_source(p):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--scenario", choices=("ex3", "ex4"), help="built-in scenario")
    g.add_argument("--config", help="scenario INI file")
    p.add_argument("--dt", type=float, help="override time step")
    p.add_argument("--h", type=_length, help="override mesh size (accepts pi/N)")
    p.add_argument("--t-end", type=float, dest="t_end", help="override final time")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="calcwave", description="Cytosol/ER calcium wave simulator (P1 FEM, IMEX).")
    ap.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("mesh", help="generate and write the two meshes")
    p.add_argument("--r-inner", type=float, default=1.0)
    p.add_argument("--r-outer", type=float, default=2.0)
    p.add_argument("--h", type=_length, default=_length("pi/8"))
    p.add_argument("--out", default="meshes")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("converge", help="manufactured-solution convergence study")
    p.add_argument("--example", type=int, choices=(1, 2), required=True)
    p.add_argument("--levels", type=int, default=4, help="number of levels from h=pi/8, halving")
    p.add_argument("--csv", help="write the report as CSV")
    p.set_defaults(func=cmd_converge)

    p = sub.add_parser("simulate", help="run a calcium-wave scenario")
    _add_source(p)
    p.add_argument("--out", help="output directory (overrides the config)")
    p.add_argument("--no-snapshots", action="store_true", help="skip VTK snapshots")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="validate a scenario without a full run")
    _add_source(p)
    p.add_argument("--steps", type=int, default=5, help="number of trial steps")
    p.set_defaults(func=cmd_check)
    return ap


def main(argv=None) -> int:
    from .config import ConfigError
    from .scenarios import ScenarioError

    ap = build_parser()
    try:
        args = ap.parse_args(argv)
        if args.command is None:
            ap.print_help(sys.stderr)
            return EXIT_INVALID
        logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command == "converge" and args.levels < 2:
            raise UsageError("converge: --levels must be at least 2")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except (ConfigError, ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
