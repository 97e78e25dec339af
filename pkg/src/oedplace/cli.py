"""Command-line driver.

Four subcommands mirror the pipeline stages::

    oedplace offline  --config run.yaml [--set design.r=8 ...]
    oedplace online   --config run.yaml
    oedplace evaluate --config run.yaml [--designs designs.json] [--n-random 50]
    oedplace report   --config run.yaml   (or --output-dir DIR)

``--set key.path=value`` overrides any config key (YAML-parsed values) and can
be given repeatedly.  Exit status is 0 only when the run fully converged:
every MAP solve hit its tolerance and the swapping search stopped on its own
before the sweep cap.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__, backend
from .config import load_config
from .errors import CapabilityError, NumericalError, StateError, ValidationError
from .pipeline import RunReport, load_artifacts, run_evaluate, run_offline, run_online

_ERRORS = (ValidationError, StateError, CapabilityError, NumericalError, OSError)


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, float):
        return f"{value:.6g}"
    return str(value)


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", required=True, help="YAML run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config key (dotted path, repeatable)")
    parser.add_argument("--output-dir", default=None,
                        help="override the configured output directory")


def _load(args) -> "RunConfig":
    overrides = list(args.overrides)
    if args.output_dir is not None:
        overrides.append(f"output_dir={Path(args.output_dir).resolve()}")
    return load_config(args.config, overrides)


def _cmd_offline(args) -> int:
    config = _load(args)
    artifacts = run_offline(config)
    meta = artifacts.meta
    print(f"offline stage done: mode={meta['mode']} d={meta['d']} "
          f"k={meta['k']} p={meta['p']} backend={meta['backend']}")
    print(f"  low-rank files: {len(meta['lowrank_prefixes'])}  "
          f"wall time: {_fmt(meta['wall_time'])}s")
    for name, count in sorted(artifacts.counters.items()):
        print(f"  actions[{name}] = {count}")
    if not meta["converged"]:
        print("offline stage did not fully converge", file=sys.stderr)
        return 1
    return 0


def _cmd_online(args) -> int:
    config = _load(args)
    report = run_online(config)
    _print_report(report)
    return 0 if report.converged else 1


def _cmd_evaluate(args) -> int:
    config = _load(args)
    result = run_evaluate(config)
    print(f"evaluated {len(result.rows)} designs -> {result.path}")
    for pair, value in sorted(result.correlations.items()):
        print(f"  pearson[{pair}] = {_fmt(value)}")
    if not result.converged:
        print("evaluation stage did not fully converge", file=sys.stderr)
        return 1
    return 0


def _print_report(report: RunReport) -> None:
    print(f"mode {report.mode}   d={report.d} r={report.r} "
          f"backend={report.backend}")
    for method, indices in sorted(report.designs.items()):
        line = (f"  design[{method}]  value {_fmt(report.values[method])}  "
                f"rows {' '.join(str(i) for i in indices)}")
        rank = report.baselines.get(f"brute_force_rank_{method}")
        if rank is not None:
            line += f"  (brute-force rank {rank})"
        print(line)
    if report.gap_bound is not None:
        print(f"  approximation gap <= {_fmt(report.gap_bound)}")
    if "random_best_value" in report.baselines:
        print(f"  best of {report.baselines['n_random']} random designs: "
              f"{_fmt(report.baselines['random_best_value'])}")
    if "brute_force_best_value" in report.baselines:
        print(f"  brute-force optimum: "
              f"{_fmt(report.baselines['brute_force_best_value'])}")
    counters = report.counters
    print(f"  online operator actions: {counters['online_operator_actions']}")
    offline = counters.get("offline") or {}
    busy = {name: count for name, count in offline.items() if count}
    if busy:
        print("  offline actions: "
              + "  ".join(f"{name}={count}" for name, count in sorted(busy.items())))
    times = report.wall_times
    print(f"  wall times: offline {_fmt(times.get('offline'))}s  "
          f"online {_fmt(times.get('online'))}s")
    print(f"  converged: {'yes' if report.converged else 'NO'}")


def _cmd_report(args) -> int:
    if args.output_dir is not None:
        out = Path(args.output_dir)
    elif args.config is not None:
        out = Path(load_config(args.config, args.overrides).output_dir)
    else:
        print("error: report needs --config or --output-dir", file=sys.stderr)
        return 2
    report_path = out / "online" / "report.json"
    if not report_path.exists():
        raise StateError(f"no report at {report_path}; run the online stage first")
    report = RunReport.load(report_path)
    _print_report(report)
    converged = report.converged
    summary_path = out / "evaluate" / "summary.json"
    if summary_path.exists():
        summary = json.loads(summary_path.read_text())
        print(f"  evaluated designs: {summary['n_designs']}")
        for pair, value in sorted((summary.get("pearson") or {}).items()):
            print(f"  pearson[{pair}] = {_fmt(value)}")
        converged = converged and summary.get("converged", True)
    offline_path = out / "offline" / "offline.json"
    if offline_path.exists():
        converged = converged and json.loads(
            offline_path.read_text()
        ).get("converged", True)
    return 0 if converged else 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="oedplace",
        description="Sensor placement by expected information gain for "
                    "PDE-governed Bayesian inverse problems.",
    )
    parser.add_argument("--version", action="version",
                        version=f"oedplace {__version__} ({backend.BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    p_offline = sub.add_parser("offline", help="samples, MAP solves, low-rank builds")
    _add_common(p_offline)
    p_offline.set_defaults(func=_cmd_offline)

    p_online = sub.add_parser("online", help="greedy design search (no PDE solves)")
    _add_common(p_online)
    p_online.set_defaults(func=_cmd_online)

    p_eval = sub.add_parser("evaluate", help="score designs under chosen criteria")
    _add_common(p_eval)
    p_eval.add_argument("--designs", default=None,
                        help="JSON file with design index lists")
    p_eval.add_argument("--n-random", type=int, default=None,
                        help="evaluate this many random designs")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_report = sub.add_parser("report", help="print a finished run's summary")
    p_report.add_argument("--config", default=None, help="YAML run configuration")
    p_report.add_argument("--set", dest="overrides", action="append", default=[],
                          metavar="KEY=VALUE", help=argparse.SUPPRESS)
    p_report.add_argument("--output-dir", default=None,
                          help="run directory (overrides the config)")
    p_report.set_defaults(func=_cmd_report)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "designs", None) is not None:
        args.overrides.append(
            f"evaluate.designs_json={Path(args.designs).resolve()}"
        )
    if getattr(args, "n_random", None) is not None:
        args.overrides.append(f"evaluate.n_random={args.n_random}")
    try:
        return args.func(args)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
