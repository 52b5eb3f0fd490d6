#!/usr/bin/env python3
"""
csdflow command line.

    python app.py mesh gen --kind icosphere --level 4 --radius 1 --out sphere.obj
    python app.py flow run configs/sphere_sd.ini
    python app.py analyze runs/dumbbell --epsilon0 2.5 --rho 0.1 0.2
    python app.py oracle run --profile dumbbell --neck 0.12 --length 1.2
    python app.py check inequalities --check all
"""
from __future__ import annotations
import argparse
import csv
import json
import logging
import math
from pathlib import Path
from typing import Iterable, List, Optional, Tuple

from flow_engine import FlowSimulator
from utils.axisym import ProfileSpec, axisym_run, make_profile, write_profile
from utils.config_io import load_config, save_config
from utils.diagnostics import CHECKERS, analyze_snapshots, inequality_suite
from utils.errors import (ConfigInvalid, CsdFlowError, InsufficientSamples, MeshError,
                          TrajectoryError)
from utils.mesh import TriMesh, load_mesh, write_obj, write_ply_binary
from utils.metrics import MonitorCollector, Trajectory
from utils.primitives import generate_primitive, primitive_catalogue
from utils.protocol import ConstraintSpec, MonitorSpec, PrimitiveSpec, RunConfig, SchemeSpec, StopReason

logger = logging.getLogger("csdflow")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _fmt(value) -> str:
    if isinstance(value, float):
        return "%.17g" % value
    return str(value)


def mesh_from_config(cfg: RunConfig) -> TriMesh:
    if cfg.mesh_path:
        try:
            return load_mesh(cfg.mesh_path)
        except MeshError as e:
            raise ConfigInvalid(f"mesh file {cfg.mesh_path} is unusable: {e}") from e
    return generate_primitive(cfg.mesh)


# --- mesh gen -----------------------------------------------------------------

def cmd_mesh_gen(args) -> int:
    spec = PrimitiveSpec(kind=args.kind, level=args.level, radius=args.radius, a=args.a, b=args.b, c=args.c,
                         bulb_radius=args.bulb, neck_radius=args.neck, neck_length=args.length,
                         resolution=args.res, R=args.R, r=args.r, amplitude=args.amplitude, seed=args.seed)
    try:
        mesh = generate_primitive(spec)
    except ConfigInvalid as e:
        logger.error("invalid primitive: %s", e)
        return 2
    out = Path(args.out)
    if out.suffix.lower() == ".ply":
        write_ply_binary(mesh, out)
    else:
        write_obj(mesh, out)
    print(f"wrote {out}")
    for key, value in mesh.summary().items():
        print(f"  {key}: {_fmt(value)}")
    return 0


# --- flow run -----------------------------------------------------------------

def cmd_flow_run(args) -> int:
    cfg = load_config(args.config)
    if args.output:
        cfg.output_dir = args.output
    if args.threads:
        cfg.threads = args.threads

    mesh = mesh_from_config(cfg)
    sim = FlowSimulator(cfg, output_dir=cfg.output_dir)
    sim.save_initial_state(mesh)
    sim.reset()
    result = sim.run()
    out = sim.write_outputs()
    save_config(cfg, out / "config.json")

    last = result.records[-1]
    print(f"{cfg.name}: {result.stop_reason.value} at t = {_fmt(last.t)} after {result.final_state.step_index} steps")
    for column in ("vol", "area", "intH"):
        stats = sim.metrics.drift(column)
        print(f"  {column}: {_fmt(stats.initial)} -> {_fmt(stats.final)} (max relative drift {stats.max_relative_drift:.3e})")
    print(f"outputs in {out}")
    if result.stop_reason == StopReason.SOLVER_FAILURE:
        return 4
    return 0


# --- analyze ------------------------------------------------------------------

def trajectory_snapshots(trajectory: Trajectory) -> List[Tuple[float, TriMesh]]:
    """Snapshot meshes with their times; final.obj closes the series when present."""
    directory = Path(trajectory.source).parent
    records = trajectory.records
    snapshots = []
    for entry in trajectory.snapshots:
        path = Path(entry['path']) if entry['path'] else None
        if path is not None and not path.is_absolute() and not path.exists():
            path = directory / path.name
        if path is None or not path.exists():
            raise TrajectoryError(f"snapshot for step {entry['step']} not found")
        t = entry['t']
        if t is None or math.isnan(t):
            # per-step rows: row i is step i
            if entry['step'] >= len(records):
                raise TrajectoryError(f"no monitor row for snapshot step {entry['step']}")
            t = records[entry['step']].t
        try:
            snapshots.append((float(t), load_mesh(path)))
        except MeshError as e:
            raise TrajectoryError(f"corrupt snapshot {path}: {e}")
    final = directory / "final.obj"
    if final.exists() and records and (not snapshots or snapshots[-1][0] < records[-1].t):
        try:
            snapshots.append((records[-1].t, load_mesh(final)))
        except MeshError as e:
            raise TrajectoryError(f"corrupt final mesh {final}: {e}")
    return snapshots


def write_concentration_csv(report, path: Path) -> Path:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["t", "rho", "p", "eta", "x", "y", "z", "total"])
        for snap in report['concentration']:
            for row in snap['concentration']:
                writer.writerow([_fmt(float(snap['t'])), _fmt(row['rho']), _fmt(row['p']), _fmt(row['eta']),
                                 *(_fmt(float(x)) for x in row['argmax']), _fmt(row['total'])])
        for row in report['lifespan_radius']:
            writer.writerow([_fmt(float(row['t'])), _fmt(row['rho']), "", _fmt(row['eta']), "", "", "",
                             _fmt(row['total'])])
    return path


def cmd_analyze(args) -> int:
    trajectory = Trajectory.load(args.trajectory)
    snapshots = trajectory_snapshots(trajectory)
    checkers = list(CHECKERS) if "all" in args.check else [c for c in args.check if c != "none"]
    try:
        report = analyze_snapshots(snapshots, args.epsilon0, args.rho, p=args.p, grid=args.grid,
                                   checkers=checkers, threads=args.threads)
    except InsufficientSamples as e:
        raise TrajectoryError(str(e))
    report['source'] = trajectory.source
    report['stop_reason'] = trajectory.stop_reason

    out = Path(args.out) if args.out else Path(trajectory.source).parent / "analysis.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w") as f:
        json.dump(report, f, indent=2, default=float)
    write_concentration_csv(report, out.with_suffix(".csv"))

    fit = report['lifespan_fit']
    print(f"{len(snapshots)} snapshot(s), epsilon0 = {_fmt(report['epsilon0'])}")
    if fit.get('flag'):
        print(f"  lifespan fit: {fit['flag']}")
    if fit.get('c') is not None:
        print(f"  lifespan fit: c = {_fmt(fit['c'])}, T = {_fmt(fit['t_est'])}, R^2 = {_fmt(fit['r_squared'])}")
    inequalities = report['inequalities']
    for rep in inequalities['reports']:
        print(f"  {rep['name']}: ratio {rep['ratio']:.4g} {'ok' if rep['holds'] else 'VIOLATED'}")
    print(f"report written to {out}")
    return 0


# --- oracle run ---------------------------------------------------------------

def cmd_oracle_run(args) -> int:
    if args.config:
        cfg = load_config(args.config)
        scheme, constraint, monitor = cfg.scheme, cfg.constraint, cfg.monitor
    else:
        scheme = SchemeSpec(kind=args.scheme, dt_init=args.dt, dt_min=args.dt_min, dt_max=args.dt_max,
                            t_end=args.t_end, max_steps=args.max_steps)
        constraint = ConstraintSpec(kind=args.constraint, expression=args.expression)
        monitor = MonitorSpec(sample_interval=args.sample_interval)
    problems = scheme.validate() + constraint.validate() + monitor.validate()
    spec = ProfileSpec(kind=args.profile, radius=args.radius, a=args.a, c=args.c, bulb_radius=args.bulb,
                       neck_radius=args.neck, neck_length=args.length, nodes=args.nodes, csv_path=args.csv)
    problems += spec.validate()
    if problems:
        raise ConfigInvalid(problems)

    collector = MonitorCollector()
    result = axisym_run(make_profile(spec), scheme, constraint, monitor, collector)

    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    collector.export_to_csv(str(out / "monitor.csv"))
    collector.export_to_json(str(out / "monitor.json"), extra={
        'profile': vars(spec), 'pinch_time': result.pinch_time(),
        'neck_series': [[t, None if math.isnan(n) else n] for t, n in result.neck_series],
    })
    write_profile(result.final_profile, out / "final_profile.csv")
    for i, (t, profile) in enumerate(result.snapshots):
        write_profile(profile, out / f"profile_{i:04d}.csv")
    if args.mesh_theta:
        write_obj(result.final_profile.to_mesh(args.mesh_theta), out / "final.obj")

    last = result.records[-1]
    print(f"oracle {spec.kind}: {result.stop_reason.value} at t = {_fmt(last.t)}")
    if result.stop_reason == StopReason.NECK_COLLAPSE:
        print(f"  pinch time: {_fmt(result.pinch_time())}")
    print(f"outputs in {out}")
    if result.stop_reason == StopReason.SOLVER_FAILURE:
        return 4
    return 0


# --- check inequalities ---------------------------------------------------------

def cmd_check_inequalities(args) -> int:
    surfaces = {} if args.no_catalogue else primitive_catalogue(args.perturbed, args.level, seed=args.seed)
    for path in args.mesh or []:
        surfaces[Path(path).stem] = load_mesh(path)
    if not surfaces:
        raise ConfigInvalid("no surfaces to check")
    checkers = list(CHECKERS) if "all" in args.check else args.check
    summary = inequality_suite(surfaces, checkers, threads=args.threads)
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w") as f:
            json.dump(summary, f, indent=2, default=float)
    print(f"{len(surfaces)} surface(s), checkers: {', '.join(checkers)}")
    for name, ratio in sorted(summary['worst_ratio'].items()):
        print(f"  worst {name} ratio: {ratio:.4g}")
    if summary['failures']:
        print(f"  violated on: {', '.join(summary['failures'])}")
        return 1
    print("  all ratios <= 1")
    return 0


# --- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="csdflow", description="Constrained surface diffusion flow lab",
                                     allow_abbrev=False)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    mesh = commands.add_parser("mesh").add_subparsers(dest="action", required=True)
    gen = mesh.add_parser("gen", help="write a primitive mesh", allow_abbrev=False)
    gen.add_argument("--kind", default="icosphere",
                     choices=("icosphere", "ellipsoid", "dumbbell", "torus", "perturbed_icosphere"))
    gen.add_argument("--level", type=int, default=3)
    gen.add_argument("--radius", type=float, default=1.0)
    gen.add_argument("--a", type=float, default=1.0)
    gen.add_argument("--b", type=float, default=1.0)
    gen.add_argument("--c", type=float, default=1.0)
    gen.add_argument("--bulb", type=float, default=1.0, help="dumbbell bulb radius")
    gen.add_argument("--neck", type=float, default=0.2, help="dumbbell neck radius")
    gen.add_argument("--length", type=float, default=1.0, help="dumbbell neck length")
    gen.add_argument("--res", type=int, default=32, help="angular resolution")
    gen.add_argument("--R", type=float, default=2.0, help="torus major radius")
    gen.add_argument("--r", type=float, default=1.0, help="torus minor radius")
    gen.add_argument("--amplitude", type=float, default=0.05)
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", default="mesh.obj", help="OBJ, or binary PLY by suffix")
    gen.set_defaults(handler=cmd_mesh_gen)

    flow = commands.add_parser("flow").add_subparsers(dest="action", required=True)
    run = flow.add_parser("run", help="run a flow from a config file", allow_abbrev=False)
    run.add_argument("config")
    run.add_argument("--output", help="override output_dir")
    run.add_argument("--threads", type=int)
    run.set_defaults(handler=cmd_flow_run)

    analyze = commands.add_parser("analyze", help="concentration and lifespan analysis of a run",
                                  allow_abbrev=False)
    analyze.add_argument("trajectory", help="run directory, monitor.csv or monitor.json")
    analyze.add_argument("--epsilon0", type=float, help="default: half the initial total curvature")
    analyze.add_argument("--rho", type=float, nargs="*", default=[])
    analyze.add_argument("--p", type=float, default=2.0)
    analyze.add_argument("--grid", type=int, default=16)
    analyze.add_argument("--check", nargs="*", default=["all"], choices=(*CHECKERS, "all", "none"))
    analyze.add_argument("--threads", type=int)
    analyze.add_argument("--out", help="report JSON; a CSV is written next to it")
    analyze.set_defaults(handler=cmd_analyze)

    oracle = commands.add_parser("oracle").add_subparsers(dest="action", required=True)
    orun = oracle.add_parser("run", help="axisymmetric reference solver", allow_abbrev=False)
    orun.add_argument("--profile", default="dumbbell", choices=("sphere", "ellipsoid", "dumbbell", "csv"))
    orun.add_argument("--radius", type=float, default=1.0)
    orun.add_argument("--a", type=float, default=1.0)
    orun.add_argument("--c", type=float, default=1.2)
    orun.add_argument("--bulb", type=float, default=1.0)
    orun.add_argument("--neck", type=float, default=0.12)
    orun.add_argument("--length", type=float, default=1.2)
    orun.add_argument("--nodes", type=int, default=256)
    orun.add_argument("--csv", help="(r, z) profile table for --profile csv")
    orun.add_argument("--config", help="take scheme, constraint and monitor from a run config")
    orun.add_argument("--scheme", default="SemiImplicit", choices=("SemiImplicit", "ExplicitEuler"))
    orun.add_argument("--constraint", default="Zero")
    orun.add_argument("--expression", help="TimeFunction h(t)")
    orun.add_argument("--dt", type=float, default=1e-7)
    orun.add_argument("--dt-min", type=float, default=1e-14)
    orun.add_argument("--dt-max", type=float, default=1e-4)
    orun.add_argument("--t-end", type=float, default=0.5)
    orun.add_argument("--max-steps", type=int, default=200000)
    orun.add_argument("--sample-interval", type=float, default=0.0)
    orun.add_argument("--mesh-theta", type=int, default=0, help="also write the final profile revolved to OBJ")
    orun.add_argument("--output", default="runs/oracle")
    orun.set_defaults(handler=cmd_oracle_run)

    check = commands.add_parser("check").add_subparsers(dest="action", required=True)
    ineq = check.add_parser("inequalities", help="geometric inequality checkers", allow_abbrev=False)
    ineq.add_argument("--check", nargs="+", default=["all"], choices=(*CHECKERS, "all"))
    ineq.add_argument("--mesh", nargs="*", help="extra OBJ/PLY surfaces")
    ineq.add_argument("--no-catalogue", action="store_true", help="only check --mesh surfaces")
    ineq.add_argument("--perturbed", type=int, default=100)
    ineq.add_argument("--level", type=int, default=2)
    ineq.add_argument("--seed", type=int, default=0)
    ineq.add_argument("--threads", type=int)
    ineq.add_argument("--out", help="summary JSON")
    ineq.set_defaults(handler=cmd_check_inequalities)
    return parser


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT)


def main(argv: Optional[Iterable[str]] = None) -> int:
    args = build_parser().parse_args(list(argv) if argv is not None else None)
    configure_logging(args.verbose, args.quiet)
    try:
        return args.handler(args)
    except CsdFlowError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return e.exit_code


if __name__ == "__main__":
    raise SystemExit(main())
