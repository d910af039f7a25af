"""Command line entry point: ``sastt validate|run|check|plot|demo``.

Exit codes: 0 success, 1 validation/check failure or aborted run,
2 unreadable input or malformed/truncated trace.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

from .engine import SimConfig, SimulationAborted, run_simulation
from .monitors import run_monitors
from .scenario import ScenarioError, load_scenario, validate_scenario
from .traceio import TraceFormatError, read_trace, write_trace

OK, FAILED, BAD_INPUT = 0, 1, 2
DEMO_SCENARIOS = ("hardware_swap", "crossing_2d", "uav_3d")

log = logging.getLogger("sastt")


def shipped_scenarios() -> dict[str, Path]:
    root = resources.files("sastt") / "scenarios"
    return {Path(p.name).stem: Path(str(p)) for p in root.iterdir() if p.name.endswith(".yaml")}


def resolve_scenario(name) -> Path:
    """A file path, or the name of a shipped scenario."""
    path = Path(name)
    if path.exists():
        return path
    shipped = shipped_scenarios()
    stem = path.stem if path.suffix == ".yaml" else str(name)
    if stem in shipped and path.parent == Path("."):
        return shipped[stem]
    raise FileNotFoundError(f"no such scenario file: {name}")


def _load(name):
    path = resolve_scenario(name)
    return path, load_scenario(path)


def _stamps(text):
    if text is None or not text.strip():
        return None
    return [float(v) for v in text.replace(" ", ",").split(",") if v]


def cmd_validate(args) -> int:
    try:
        path, sc = _load(args.scenario)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    report = validate_scenario(sc, args.dt)
    print(f"{path}: {len(sc.agents)} agents, {len(sc.obstacles)} obstacles, n={sc.n}")
    print(report)
    return OK if report.ok else FAILED


def cmd_run(args) -> int:
    try:
        path, sc = _load(args.scenario)
        cfg = SimConfig.from_scenario(sc, dt=args.dt, t_end=args.t_end, seed=args.seed)
        cfg.check(sc)
    except (OSError, ScenarioError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return FAILED
    report = validate_scenario(sc, cfg.dt)
    if not report.ok:
        print(report)
        if not args.force:
            print("scenario failed validation; use --force to run anyway", file=sys.stderr)
            return FAILED
        print("warning: running despite failed validation (--force)", file=sys.stderr)

    out = Path(args.out or Path("runs") / (sc.name or path.stem))
    overrides = {k: v for k, v in (("dt", args.dt), ("t_end", args.t_end), ("seed", args.seed))
                 if v is not None}
    code = OK
    try:
        trace = run_simulation(sc, cfg, validate=False)
    except SimulationAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        trace, code = exc.trace, FAILED
    try:
        write_trace(trace, out, scenario_source=path, config=asdict(cfg), seed=cfg.seed,
                    forced=bool(args.force), expected_rows=cfg.steps() // cfg.record_stride + 1,
                    overrides=overrides)
    except OSError as exc:
        print(f"error: cannot write {out}: {exc}", file=sys.stderr)
        return BAD_INPUT
    print(f"{trace.status}: {len(trace.t)} rows, {len(trace.events)} events -> {out}")
    return code


def cmd_check(args) -> int:
    try:
        trace = read_trace(args.trace)
    except TraceFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    report = run_monitors(trace)
    print(report.text())
    if trace.status != "complete":
        print(f"trace status: {trace.status}", file=sys.stderr)
        return FAILED
    return OK if report.tras_ok else FAILED


def cmd_plot(args) -> int:
    from .plotting import plot_all  # matplotlib is slow to import

    try:
        trace = read_trace(args.trace)
        stamps = _stamps(args.stamps)
    except (TraceFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return BAD_INPUT
    trace_dir = Path(args.trace) if Path(args.trace).is_dir() else Path(args.trace).parent
    out = Path(args.out) if args.out else trace_dir / "plots"
    for p in plot_all(trace, out, stamps):
        print(p)
    return OK


def cmd_demo(args) -> int:
    root = Path(args.out or "runs")
    worst = OK
    for name in DEMO_SCENARIOS:
        run_dir = root / name
        print(f"== {name}")
        steps = [
            (cmd_run, replace_ns(args, scenario=name, out=str(run_dir))),
            (cmd_check, replace_ns(args, trace=str(run_dir))),
            (cmd_plot, replace_ns(args, trace=str(run_dir), out=str(run_dir / "plots"))),
        ]
        for fn, ns in steps:
            code = fn(ns)
            worst = max(worst, code)
            if code != OK:
                break
    return worst


def replace_ns(ns, **kw):
    return argparse.Namespace(**{**vars(ns), **kw})


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sastt", description="Socially aware spatiotemporal tubes.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def sim_flags(q):
        q.add_argument("--dt", type=float, help="integration step (s)")
        q.add_argument("--t-end", type=float, help="simulated horizon (s)")
        q.add_argument("--seed", type=int, help="disturbance seed")
        q.add_argument("--force", action="store_true", help="run even if validation fails")

    q = sub.add_parser("validate", help="check a scenario's assumptions")
    q.add_argument("scenario")
    q.add_argument("--dt", type=float)
    q.set_defaults(func=cmd_validate)

    q = sub.add_parser("run", help="simulate a scenario and write a trace")
    q.add_argument("scenario")
    sim_flags(q)
    q.add_argument("--out", help="output directory (default runs/<name>)")
    q.set_defaults(func=cmd_run)

    q = sub.add_parser("check", help="run the monitors on a trace")
    q.add_argument("trace", help="run directory or its trace.csv")
    q.set_defaults(func=cmd_check)

    q = sub.add_parser("plot", help="draw SVG figures of a trace")
    q.add_argument("trace")
    q.add_argument("--out", help="figure directory (default <trace>/plots)")
    q.add_argument("--stamps", help="comma separated times for the trajectory panels")
    q.set_defaults(func=cmd_plot)

    q = sub.add_parser("demo", help="run, check and plot the shipped scenarios")
    sim_flags(q)
    q.add_argument("--out", help="root directory (default runs/)")
    q.add_argument("--stamps")
    q.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
