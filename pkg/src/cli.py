"""
Command line: run Monte-Carlo experiments, validate configs, sweep detection
probability intervals. Exit codes: 0 ok, 1 config error, 2 runtime failure.
"""
import argparse
import csv
import json
import logging
import os
import sys
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional, Sequence, Tuple

from .config import DEFAULT_PRESET, SCHEMA_VERSION, ScenarioConfig, config_to_dict, load_config, parse_interval, with_overrides
from .errors import ConfigError
from .evaluation import McReport, TrialRecord, run_monte_carlo, run_sweep
from .smc import RngStreams

logger = logging.getLogger(__name__)

OSPA_MEAN_HEADER = ["step", "mean_ospa", "runs_confirmed_fraction"]
TRACE_HEADER = ["step", "x", "vx", "y", "vy", "q0", "q1", "q0_pred", "q1_pred", "confirmed",
                "est_x", "est_vx", "est_y", "est_vy", "ospa", "effective_size", "resampled"]
DEFAULT_SWEEP = ((0.4, 1.0), (0.6, 1.0), (0.8, 1.0))

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2


def fmt(value: float) -> str:
    return format(value, ".17g")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pbf", description="Possibilistic Bernoulli filter experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="Log per-step filter details")
    parser.add_argument("-q", "--quiet", action="store_true", help="Only log warnings and errors")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser):
        p.add_argument("-c", "--config", default=DEFAULT_PRESET,
                       help=f"Config file or preset name (default: {DEFAULT_PRESET})")
        p.add_argument("--particles", type=int, help="Override the particle count")
        p.add_argument("--sup-mode", choices=["ancestor", "exact"], help="Override the sup approximation")
        p.add_argument("--runs", type=int, help="Number of Monte-Carlo runs (default: from config)")
        p.add_argument("--seed", type=int, help="Base seed; run i uses seed + i (default: from config)")
        p.add_argument("-o", "--out", default="results", help="Output directory (default: results)")
        p.add_argument("--workers", type=int, default=1, help="Parallel trials (default: 1)")

    run = sub.add_parser("run", help="Monte-Carlo runs of one scenario")
    common(run)
    run.add_argument("--pd-interval", help="Detection probability interval 'low,high' for all sensors")
    run.add_argument("--trace", action="store_true", help="Write trace_run<k>.csv for every run")
    run.add_argument("--validate-only", action="store_true", help="Validate the config and exit")

    validate = sub.add_parser("validate", help="Validate a config file")
    validate.add_argument("-c", "--config", required=True, help="Config file or preset name")

    sweep = sub.add_parser("sweep", help="Monte-Carlo runs for several detection probability intervals")
    common(sweep)
    sweep.add_argument("--pd-interval", action="append",
                       help="Interval 'low,high'; repeat for several (default: 0.4,1 0.6,1 0.8,1)")
    return parser


def configure_logging(verbose: bool, quiet: bool):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(levelname)s: %(message)s", force=True)


def resolve_config(args, pd_interval: Optional[Tuple[float, float]] = None) -> ScenarioConfig:
    config = load_config(args.config)
    return with_overrides(config, particles=args.particles, pd_interval=pd_interval, sup_mode=args.sup_mode,
                          n_runs=args.runs, base_seed=args.seed)


def report_document(report: McReport, config: ScenarioConfig) -> Dict[str, Any]:
    """Everything in report.json except the timestamp key."""
    return {
        "schema_version": SCHEMA_VERSION,
        "runs": report.runs,
        "base_seed": config.runs.base_seed,
        "seeds": list(report.seeds),
        "rng_streams": list(RngStreams.ORDER),
        "establishment_rate": report.establishment_rate,
        "mean_establishment_step": report.mean_establishment_step,
        "mean_ospa": list(report.mean_ospa),
        "confirmed_fraction": list(report.confirmed_fraction),
        "trials": [
            {
                "seed": t.seed,
                "established": t.established,
                "establishment_step": t.establishment_step,
                "track_breaks": t.track_breaks,
            }
            for t in report.trials
        ],
        "config": config_to_dict(config),
    }


def write_json(path: str, document: Dict[str, Any]):
    document = dict(document)
    document["timestamp"] = datetime.now(timezone.utc).isoformat()
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2)
        f.write("\n")


def write_ospa_mean(path: str, report: McReport):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(OSPA_MEAN_HEADER)
        for k, (ospa, frac) in enumerate(zip(report.mean_ospa, report.confirmed_fraction), start=1):
            writer.writerow([k, fmt(ospa), fmt(frac)])


def write_trace(path: str, trial: TrialRecord):
    n_sensors = len(trial.steps[0].scans) if trial.steps else 0
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TRACE_HEADER + [f"z{i + 1}" for i in range(n_sensors)])
        for s in trial.steps:
            est = [fmt(v) for v in s.estimate] if s.estimate is not None else [""] * 4
            row = [s.step] + [fmt(v) for v in s.truth] + [fmt(s.q0), fmt(s.q1), fmt(s.q0_pred), fmt(s.q1_pred),
                                                         int(s.confirmed)]
            row += est + [fmt(s.ospa), fmt(s.effective_size), int(s.resampled)]
            row += [";".join(fmt(z) for z in scan) for scan in s.scans]
            writer.writerow(row)


def write_sweep(path: str, reports: Dict[str, McReport], intervals: Sequence[Tuple[float, float]]):
    labels = list(reports)
    n_steps = len(next(iter(reports.values())).mean_ospa)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["step"] + [f"mean_ospa_{lo:g}_{hi:g}" for lo, hi in intervals])
        for k in range(n_steps):
            writer.writerow([k + 1] + [fmt(reports[label].mean_ospa[k]) for label in labels])


def cmd_validate(args) -> int:
    load_config(args.config)
    print("OK")
    return EXIT_OK


def cmd_run(args) -> int:
    pd_interval = parse_interval(args.pd_interval) if args.pd_interval else None
    config = resolve_config(args, pd_interval)
    if args.validate_only:
        print("OK")
        return EXIT_OK
    report = run_monte_carlo(config, config.runs.n_runs, config.runs.base_seed, args.workers)

    os.makedirs(args.out, exist_ok=True)
    write_ospa_mean(os.path.join(args.out, "ospa_mean.csv"), report)
    write_json(os.path.join(args.out, "report.json"), report_document(report, config))
    if args.trace:
        for k, trial in enumerate(report.trials):
            write_trace(os.path.join(args.out, f"trace_run{k}.csv"), trial)
    logger.info("Results written to %s", args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    intervals: List[Tuple[float, float]] = [parse_interval(t) for t in args.pd_interval] if args.pd_interval \
        else list(DEFAULT_SWEEP)
    config = resolve_config(args)
    reports = run_sweep(config, intervals, config.runs.n_runs, config.runs.base_seed, args.workers)

    os.makedirs(args.out, exist_ok=True)
    write_sweep(os.path.join(args.out, "ospa_sweep.csv"), reports, intervals)
    document = {
        "schema_version": SCHEMA_VERSION,
        "intervals": [list(i) for i in intervals],
        "reports": {
            label: {key: value for key, value in report_document(r, config).items() if key != "config"}
            for label, r in reports.items()
        },
        "config": config_to_dict(config),
    }
    write_json(os.path.join(args.out, "sweep.json"), document)
    logger.info("Sweep written to %s", args.out)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "validate": cmd_validate, "sweep": cmd_sweep}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:
        logger.debug("Run failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
