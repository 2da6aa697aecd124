"""Command-line entry point.

Exit codes: 0 success, 1 invalid scenario or input, 2 numerical failure,
3 file I/O failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .errors import NumericalError, OutputError, ScenarioError
from .harness import (
    compare_platforms,
    export_comparison,
    export_log,
    gains_report,
    read_measurements,
    replay_csv,
    replay_estimator,
    run_scenario,
)
from .scenario import BUILTIN_NAMES, load_scenario

EXIT_OK, EXIT_SCENARIO, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3


def _load(path: str, seed: int | None = None):
    try:
        s = load_scenario(path)
    except OSError as exc:
        raise OutputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return s if seed is None else s.replace(seed=seed)


def _cmd_simulate(args) -> int:
    s = _load(args.scenario, args.seed)
    log, met = run_scenario(s)
    print("\n".join(met.as_lines()))
    if args.out:
        for p in export_log(log, met, args.out):
            print(f"wrote {p}")
    return EXIT_OK


def _cmd_compare(args) -> int:
    s = _load(args.scenario, args.seed)
    comp = compare_platforms(s)
    print(comp.table())
    if args.out:
        for p in export_comparison(comp, args.out):
            print(f"wrote {p}")
    return EXIT_NUMERICAL if comp.failures else EXIT_OK


def _cmd_gains(args) -> int:
    sys.stdout.write(gains_report(_load(args.scenario)))
    return EXIT_OK


def _cmd_replay(args) -> int:
    s = _load(args.scenario)
    try:
        packets = read_measurements(args.measurements)
    except ValueError as exc:
        raise ScenarioError(str(exc)) from exc
    t, xs, ps = replay_estimator(s, packets)
    text = replay_csv(t, xs, ps)
    if args.out:
        try:
            Path(args.out).write_text(text, encoding="utf-8")
        except OSError as exc:
            raise OutputError(f"cannot write {args.out}: {exc.strerror or exc}") from exc
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="suspended-platform",
        description="Simulate and compare cable-suspended aerial platforms. "
                    f"A scenario is a key = value file or builtin:NAME ({', '.join(BUILTIN_NAMES)}).",
    )
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run one scenario and print its metrics")
    sp.add_argument("scenario")
    sp.add_argument("--out", metavar="PREFIX", help="write PREFIX.csv and PREFIX.summary.txt")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=_cmd_simulate)

    sp = sub.add_parser("compare", help="run the scenario on all three platforms")
    sp.add_argument("scenario")
    sp.add_argument("--out", metavar="PREFIX", help="write per-figure CSVs and a summary")
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=_cmd_compare)

    sp = sub.add_parser("gains", help="print the LQR gain, Riccati residual and ranks")
    sp.add_argument("scenario")
    sp.set_defaults(func=_cmd_gains)

    sp = sub.add_parser("estimate-replay", help="run the EKF over recorded measurements")
    sp.add_argument("scenario")
    sp.add_argument("measurements", help="CSV with columns t,channel,z1,z2,z3")
    sp.add_argument("--out", metavar="PATH", help="write estimates here instead of stdout")
    sp.set_defaults(func=_cmd_replay)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"invalid scenario: {exc}", file=sys.stderr)
        return EXIT_SCENARIO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
