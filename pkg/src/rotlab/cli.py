"""Command-line entry point: ``rot-lab run | self-check | bounds``."""
import argparse
import json
import sys
from dataclasses import asdict

from rotlab.cheats import analytic_bounds
from rotlab.harness import (
    DEFAULT_BUDGET,
    SCENARIOS,
    BudgetExceeded,
    ExperimentConfig,
    emit,
    render,
    run_scenario,
    self_check,
)

EXIT_OK, EXIT_TOLERANCE, EXIT_USAGE = 0, 1, 2


def _parser():
    p = argparse.ArgumentParser(prog="rot-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="Monte Carlo estimates for one or all scenarios")
    run.add_argument("--scenario", default="all", choices=[s.value for s in SCENARIOS] + ["all"])
    run.add_argument("--variant", default="original", choices=["original", "modified"])
    run.add_argument("--runs", type=int, default=200)
    run.add_argument("--slots", type=int, default=2000)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--format", default="json", choices=["json", "csv"])
    run.add_argument("--out", default=None, help="output file (default: stdout)")
    run.add_argument("--test-fraction", type=float, default=0.25)
    run.add_argument("--budget", type=int, default=DEFAULT_BUDGET, help="max runs*slots")
    run.add_argument("--jobs", type=int, default=1, help="worker processes")

    sub.add_parser("self-check", help="recompute analytic quantities without Monte Carlo")
    sub.add_parser("bounds", help="print the analytic cheating probabilities as JSON")
    return p


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK

    if args.command == "bounds":
        print(json.dumps(asdict(analytic_bounds()), indent=2))
        return EXIT_OK

    if args.command == "self-check":
        report = self_check()
        for c in report.checks:
            status = "PASS" if c.passed else "FAIL"
            print(f"{status} {c.name:36s} residual={c.residual:.3e} {c.detail}".rstrip())
        print(f"max residual {report.max_residual:.3e}")
        return EXIT_OK if report.passed else EXIT_TOLERANCE

    try:
        config = ExperimentConfig(
            scenario=args.scenario,
            variant=args.variant,
            runs=args.runs,
            n_slots=args.slots,
            seed=args.seed,
            output_path=args.out,
            output_format=args.format,
            test_fraction=args.test_fraction,
            budget=args.budget,
            jobs=args.jobs,
        )
        rows = run_scenario(config)
    except (BudgetExceeded, ValueError) as exc:
        print(f"rot-lab: {exc}", file=sys.stderr)
        return EXIT_USAGE

    try:
        if config.output_path:
            emit(rows, config.output_format, config.output_path)
        else:
            sys.stdout.write(render(rows, config.output_format))
    except OSError as exc:
        print(f"rot-lab: cannot write output: {exc}", file=sys.stderr)
        return EXIT_USAGE

    for r in rows:
        if not r.within_tolerance:
            print(f"out of tolerance: {r.scenario}/{r.variant}/{r.metric} = {r.estimate} (analytic {r.analytic})",
                  file=sys.stderr)
    return EXIT_OK if all(r.within_tolerance for r in rows) else EXIT_TOLERANCE


if __name__ == "__main__":
    sys.exit(main())
