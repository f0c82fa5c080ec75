"""Command-line entry point: ``gkm-slicing <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 scenario error, 3 experiment error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .baselines import MechanismOutcome, efficiency_report
from .channel import dbm_to_watts
from .exceptions import DomainError, ExperimentError, ScenarioError
from .experiment_io import emit, runner
from .experiment_io.scenario import MECHANISMS, Scenario, list_presets, load_preset, load_scenario
from .gkm_auction import run_auction, verify_equilibrium
from .market import Market
from .multi_resource import MultiResourceMarket, run_multi_auction, verify_multi_equilibrium

EXIT_OK, EXIT_USAGE, EXIT_SCENARIO, EXIT_EXPERIMENT = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _mechanism_list(text: str) -> tuple[str, ...]:
    names = tuple(n.strip() for n in text.split(",") if n.strip())
    bad = [n for n in names if n not in MECHANISMS]
    if bad or not names:
        raise argparse.ArgumentTypeError(
            f"unknown mechanism(s) {bad or text!r}; choose from {', '.join(MECHANISMS)}"
        )
    return names


def _positive_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _nonnegative_int(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gkm-slicing", description="Bandwidth and power slicing auctions between MVNOs.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scenario_args(p, mechanisms=True):
        p.add_argument("scenario", help="scenario file or bundled preset name")
        p.add_argument("--trials", type=_positive_int, help="override the scenario's trial count")
        p.add_argument("--seed", type=_nonnegative_int, help="override the scenario's master seed")
        p.add_argument("--jobs", type=_positive_int, default=1, help="worker processes (default 1)")
        if mechanisms:
            p.add_argument("--mechanisms", type=_mechanism_list, help="comma-separated subset of " + ",".join(MECHANISMS))

    p = sub.add_parser("run", help="run a scenario and write per-trial results")
    scenario_args(p)
    p.add_argument("--format", choices=("csv", "json", "both"), default="csv")
    p.add_argument("--output", "-o", help="output path (stdout when omitted; required for --format both)")

    p = sub.add_parser("verify", help="check equilibrium residuals of every GKM run")
    scenario_args(p, mechanisms=False)
    p.add_argument("--tol", type=float, default=1e-4, help="residual tolerance (default 1e-4)")

    p = sub.add_parser("compare", help="median welfare, gap to optimum and GKM gain per mechanism")
    scenario_args(p)
    p.add_argument("--format", choices=("text", "csv"), default="text")

    p = sub.add_parser("trace", help="per-iteration series of one auction run, for plotting")
    p.add_argument("scenario", help="scenario file or bundled preset name")
    p.add_argument("--trial", type=_nonnegative_int, default=0)
    p.add_argument("--seed", type=_nonnegative_int)
    p.add_argument("--mechanism", choices=("gkm", "kelly"), default="gkm")
    p.add_argument("--point", default=None, help="sweep/outage point label (default: first)")
    p.add_argument("--output", "-o")

    sub.add_parser("presets", help="list bundled scenarios")
    return parser


def _scenario(args) -> Scenario:
    scenario = load_scenario(args.scenario)
    if getattr(args, "seed", None) is not None:
        scenario = scenario.with_overrides(seed=args.seed)
    return scenario


def _write(text: str, path: str | None) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        emit.write_text(path, text)


def cmd_run(args) -> int:
    scenario = _scenario(args)
    result = runner.run_experiment(scenario, args.trials, args.mechanisms, jobs=args.jobs)
    if args.format == "both":
        if not args.output:
            raise UsageError("--format both needs --output")
        emit.emit_results(result, "both", args.output)
    else:
        text = emit.to_csv(result) if args.format == "csv" else emit.to_json(result)
        _write(text, args.output)
    if result.failed_trials:
        print(f"warning: failed trials {result.failed_trials}", file=sys.stderr)
    return EXIT_OK


def cmd_verify(args) -> int:
    scenario = _scenario(args)
    trials = args.trials or scenario.trials
    worst = 0.0
    print("trial point rounds stationarity identity capacity max_residual")
    for t in range(trials):
        for point in scenario.points():
            groups = runner.draw_users(scenario, point, t)
            for eps in point.epsilons:
                market = Market.from_users(scenario.bandwidth_hz, groups, eps)
                label = point.label or "-"
                if eps is not None:
                    label = f"{point.label},epsilon={eps:g}".lstrip(",")
                if scenario.n_resources == 1:
                    trace = run_auction(market, runner.gkm_config(scenario))
                    if not trace.converged:
                        raise ExperimentError(f"trial {t} {label}: auction did not converge")
                    rep = verify_equilibrium(trace, market)
                    parts = (rep.stationarity.max(), rep.allocation_identity.max(), rep.capacity)
                    residual = rep.max_residual
                else:
                    mm = MultiResourceMarket.from_market(
                        market, dbm_to_watts(scenario.max_power_dbm),
                        gradient_method=scenario.auction.gradient,
                    )
                    trace = run_multi_auction(mm, runner.gkm_config(scenario))
                    if not trace.converged:
                        raise ExperimentError(f"trial {t} {label}: auction did not converge")
                    rep = verify_multi_equilibrium(trace, mm)
                    parts = (rep.stationarity.max(), rep.uniqueness.max(), rep.capacity.max())
                    residual = rep.max_residual
                worst = max(worst, residual)
                print(f"{t} {label} {trace.rounds_used} " + " ".join(f"{x:.3e}" for x in parts) + f" {residual:.3e}")
    status = "ok" if worst <= args.tol else "FAILED"
    print(f"worst residual {worst:.3e} (tolerance {args.tol:g}): {status}")
    return EXIT_OK if worst <= args.tol else EXIT_EXPERIMENT


def cmd_compare(args) -> int:
    scenario = _scenario(args)
    result = runner.run_experiment(scenario, args.trials, args.mechanisms, jobs=args.jobs)
    rows = []
    for point in result.points:
        per_trial = []
        for rec in result.select(point):
            if rec.failed:
                continue
            outcomes = [
                MechanismOutcome(name, o.allocations, o.valuations, rec.market_id, o.rounds, o.converged)
                for name, o in rec.outcomes.items()
            ]
            per_trial.append({row.mechanism: row for row in efficiency_report(outcomes)})
        for name in result.mechanisms:
            entries = [t[name] for t in per_trial]
            gaps = [e.gap_to_optimal for e in entries if e.gap_to_optimal is not None]
            gains = [e.gkm_gain for e in entries if e.gkm_gain is not None]
            rows.append(
                (
                    point or "-",
                    name,
                    float(np.median([e.welfare for e in entries])),
                    float(np.median(gaps)) if gaps else None,
                    float(np.median(gains)) if gains else None,
                    float(np.max(gains)) if gains else None,
                )
            )
    header = ("point", "mechanism", "median_welfare", "median_gap_to_optimal", "median_gkm_gain", "max_gkm_gain")
    fmt = lambda v: "" if v is None else (f"{v:.10g}" if isinstance(v, float) else str(v))
    if args.format == "csv":
        lines = [",".join(header)] + [",".join(fmt(v) for v in row) for row in rows]
    else:
        lines = ["  ".join(f"{h:>22}" for h in header)]
        lines += ["  ".join(f"{fmt(v):>22}" for v in row) for row in rows]
    print("\n".join(lines))
    return EXIT_OK


def cmd_trace(args) -> int:
    scenario = _scenario(args)
    records = runner.run_trial(scenario, args.trial, (args.mechanism,))
    if args.point is None:
        record = records[0]
    else:
        matches = [r for r in records if r.point == args.point]
        if not matches:
            raise UsageError(f"no point {args.point!r}; available: {[r.point for r in records]}")
        record = matches[0]
    if record.failed:
        raise ExperimentError(f"trial {args.trial} failed: {record.errors}")
    _write(emit.trace_csv(record.outcomes[args.mechanism]), args.output)
    return EXIT_OK


def cmd_presets(args) -> int:
    for name in list_presets():
        print(f"{name:15} {load_preset(name).description}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "verify": cmd_verify,
    "compare": cmd_compare,
    "trace": cmd_trace,
    "presets": cmd_presets,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except (ExperimentError, DomainError) as exc:
        print(f"experiment error: {exc}", file=sys.stderr)
        return EXIT_EXPERIMENT


if __name__ == "__main__":
    sys.exit(main())
