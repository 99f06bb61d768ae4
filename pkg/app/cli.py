"""Command-line entry point: experiments, sweeps, trace tooling, checks, plots and the HTTP service."""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app.channel import band_name, generate_traces
from app.checks import run_checks
from app.config import Config
from app.errors import ConfigurationError, TraceFormatError
from app.experiment import run_experiment, write_plot_columns
from app.scenario import PROFILES, dump_scenario, load_scenario
from app.storage import load_trace, save_trace

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="beamsim", description="Dual-band beam management simulator")
    parser.add_argument("--log-level", default=Config.LOG_LEVEL, help="Logging level (default from LOG_LEVEL)")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p: argparse.ArgumentParser) -> None:
        p.add_argument("--profile", choices=PROFILES, default=Config.DEFAULT_PROFILE)
        p.add_argument("--seed", type=int, default=None, help="Base seed")
        p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                       help="Dotted override such as env.m_dt=5; repeatable")

    run = sub.add_parser("run", help="Run an experiment")
    run.add_argument("config", nargs="?", help="Scenario YAML merged over the profile")
    scenario_args(run)
    run.add_argument("--out-dir", default=None)
    run.add_argument("--workers", type=int, default=Config.WORKERS, help="Worker processes (default from WORKERS)")
    run.add_argument("--policy", action="append", default=None,
                     choices=["genie", "greedy", "three_threshold", "hrl"], help="Restrict to a policy; repeatable")

    sweep = sub.add_parser("sweep", help="Run an experiment over one sweep axis")
    sweep.add_argument("axis", choices=["power", "rvq_bits", "vehicle_density", "upper_period"])
    sweep.add_argument("values", nargs="+", type=float)
    sweep.add_argument("--config", default=None)
    scenario_args(sweep)
    sweep.add_argument("--out-dir", default=None)
    sweep.add_argument("--workers", type=int, default=Config.WORKERS)
    sweep.add_argument("--policy", action="append", default=None,
                       choices=["genie", "greedy", "three_threshold", "hrl"])

    trace = sub.add_parser("trace", help="Channel trace tooling")
    trace_sub = trace.add_subparsers(dest="trace_command", required=True)
    gen = trace_sub.add_parser("gen", help="Generate and save one band's trace")
    gen.add_argument("file")
    gen.add_argument("--band", choices=["sub6", "mmwave"], default="mmwave")
    gen.add_argument("--config", default=None)
    gen.add_argument("--slots", type=int, default=None, help="Defaults to the episode slot budget")
    scenario_args(gen)
    info = trace_sub.add_parser("info", help="Print a trace header")
    info.add_argument("file")

    sub.add_parser("check", help="Run closed-form and oracle self-checks")

    plot = sub.add_parser("plot", help="Write gnuplot columns from metrics.csv")
    plot.add_argument("metrics")
    plot.add_argument("-o", "--output", default=None)

    serve = sub.add_parser("serve", help="Run the HTTP service")
    serve.add_argument("--host", default=Config.HOST)
    serve.add_argument("--port", type=int, default=Config.PORT)
    return parser


def _scenario(args: argparse.Namespace, path: Optional[str], extra: Optional[List[str]] = None):
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"experiment.seed={args.seed}")
    if getattr(args, "workers", 1) > 1:
        overrides.append(f"experiment.workers={args.workers}")
    overrides.extend(extra or [])
    return load_scenario(path, profile=args.profile, overrides=overrides)


def _echo_config(cfg) -> None:
    print("# effective config")
    for line in dump_scenario(cfg).splitlines():
        print(f"#   {line}")


def _run(args: argparse.Namespace, path: Optional[str], extra: Optional[List[str]] = None) -> int:
    cfg = _scenario(args, path, extra)
    _echo_config(cfg)
    paths = run_experiment(cfg, args.out_dir, args.policy)
    for name, p in paths.items():
        print(f"{name}: {p}")
    return 0


def _trace(args: argparse.Namespace) -> int:
    if args.trace_command == "info":
        trace = load_trace(args.file)
        print(f"band: {trace.band}")
        print(f"antennas: tx={trace.n_tx} rx={trace.n_rx}")
        print(f"subcarriers: {trace.n_subcarriers}")
        print(f"slots: {trace.n_slots}")
        print(f"bandwidth_hz: {trace.bandwidth_hz}")
        print(f"los_fraction: {float(trace.los_flag.mean()):.4f}")
        return 0
    cfg = _scenario(args, args.config)
    seed = cfg.channel.seed + cfg.experiment.seed
    pair = generate_traces(cfg, seed, args.slots)
    trace = pair.mmwave if args.band == "mmwave" else pair.sub6
    save_trace(trace, args.file)
    print(f"wrote {band_name(cfg.mmwave if args.band == 'mmwave' else cfg.sub6)} trace, "
          f"{trace.n_slots} slots, to {args.file}")
    return 0


def _check() -> int:
    results = run_checks()
    for name, ok, detail in results:
        print(f"{'ok  ' if ok else 'FAIL'} {name}: {detail}")
    return 0 if all(ok for _, ok, _ in results) else 1


def _serve(args: argparse.Namespace) -> int:
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Parse argv and dispatch; returns the process exit code."""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO))
    try:
        if args.command == "run":
            return _run(args, args.config)
        if args.command == "sweep":
            values = ", ".join(repr(v) for v in args.values)
            return _run(args, args.config, [f"experiment.sweep_axis={args.axis}",
                                            f"experiment.sweep_values=[{values}]"])
        if args.command == "trace":
            return _trace(args)
        if args.command == "check":
            return _check()
        if args.command == "plot":
            out = Path(args.output) if args.output else Path(args.metrics).with_suffix(".dat")
            print(f"wrote {write_plot_columns(Path(args.metrics), out)}")
            return 0
        return _serve(args)
    except (ConfigurationError, TraceFormatError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
