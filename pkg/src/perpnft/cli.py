"""Command-line front end: ``simulate``, ``analyze-break-even``, ``dump-schema``."""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple

from . import scenario
from .analysis import average_rates, break_even, load_rate_csv
from .errors import CsvFormatError, MissingAsset, SchemaError, SimulationError, ZeroFee
from .fixedpoint import fmt_fraction, to_fraction
from .simulation import RunAborted, dumps, run_scenario, strategy_log_lines

EXIT_OK = 0
EXIT_SCHEMA = 2
EXIT_RUNTIME = 3
EXIT_AUDIT = 4


def _simulate_one(path: str, out: Optional[str], seed: Optional[int], log_out: Optional[str]) -> Tuple[int, str]:
    """Run one scenario file; returns (exit code, one-line summary)."""
    try:
        scn = scenario.load(path)
    except SchemaError as exc:
        return EXIT_SCHEMA, f"schema error: {exc}"
    try:
        report = run_scenario(scn, seed, Path(path).resolve().parent)
    except RunAborted as exc:
        return EXIT_RUNTIME, f"{path}: aborted at {exc}"
    except (SimulationError, ValueError) as exc:
        return EXIT_RUNTIME, f"{path}: aborted during setup: {type(exc).__name__}: {exc}"
    text = dumps(report)
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)
    if log_out:
        Path(log_out).write_text(strategy_log_lines(report))
    audit = report["conservation"]
    if not audit["ok"]:
        bad = sorted(a for a, e in audit["ledger"].items() if not e["ok"])
        return EXIT_AUDIT, f"{path}: conservation audit failed for {', '.join(bad) or 'fees/NFT registry'}"
    summary = f"{path}: ok, {report['ticks'] + 1} ticks, {len(report['journal'])} events"
    be = report["profitability"].get("break_even")
    if be:
        summary += f", break-even threshold {be['threshold']}"
    return EXIT_OK, summary


def cmd_simulate(args) -> int:
    paths: List[str] = args.scenario
    if len(paths) > 1 and args.out and not Path(args.out).is_dir():
        print("--out must be an existing directory when running several scenarios", file=sys.stderr)
        return EXIT_SCHEMA
    jobs = []
    for p in paths:
        out = args.out
        if len(paths) > 1 and args.out:
            out = str(Path(args.out) / (Path(p).stem + ".json"))
        log_out = None
        if args.strategy_log:
            log_out = args.strategy_log if len(paths) == 1 else str(Path(args.strategy_log).with_suffix("")) + f"-{Path(p).stem}.jsonl"
        jobs.append((p, out, args.seed, log_out))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_simulate_one, *zip(*jobs)))
    else:
        results = [_simulate_one(*j) for j in jobs]
    code = EXIT_OK
    for rc, msg in results:
        print(msg, file=sys.stderr)
        code = max(code, rc)
    return code


def cmd_break_even(args) -> int:
    try:
        series = load_rate_csv(args.apr_csv)
        assets = [a.strip() for a in args.assets.split(",") if a.strip()] if args.assets else series.assets()
        per_asset, blended = average_rates(series, assets)
        report = break_even(blended, to_fraction(args.fee_tier))
    except (CsvFormatError, MissingAsset, ZeroFee, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    out = {
        "per_asset_annual_rate_percent": {a: fmt_fraction(per_asset[a] * 100) for a in sorted(per_asset)},
        "blended_annual_rate_percent": fmt_fraction(blended * 100),
        **report.to_json(),
    }
    if args.text:
        for a in sorted(per_asset):
            print(f"{a:>8} mean APR   {fmt_fraction(per_asset[a] * 100, 6)}%")
        print(f"blended APR      {out['blended_annual_rate_percent']}%")
        print(f"daily rate       {fmt_fraction(report.daily_rate, 12)}")
        print(f"fee tier         {fmt_fraction(report.fee * 100, 4)}%")
        print(f"break-even A/L   {fmt_fraction(report.threshold, 10)} ({fmt_fraction(report.threshold * 100, 4)}%)")
        print(f"rounded down     more than {out['threshold_percent_rounded_down']}% of band liquidity")
    else:
        print(json.dumps(out, sort_keys=True, indent=2))
    return EXIT_OK


def cmd_dump_schema(args) -> int:
    print(json.dumps(scenario.SCENARIO_SCHEMA, sort_keys=True, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="perpnft", description="Perpetual-contract NFT DeFi simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="run scenario files and write JSON run reports")
    sim.add_argument("scenario", nargs="+")
    sim.add_argument("--out", help="report file (or directory when several scenarios are given)")
    sim.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    sim.add_argument("--jobs", type=int, default=1, help="run several scenario files in parallel")
    sim.add_argument("--strategy-log", help="also write strategy logs as JSON lines")
    sim.set_defaults(func=cmd_simulate)

    be = sub.add_parser("analyze-break-even", help="average borrow APRs and compute the break-even volume share")
    be.add_argument("--apr-csv", required=True)
    be.add_argument("--assets", default="", help="comma separated; default: every asset in the file")
    be.add_argument("--fee-tier", required=True)
    be.add_argument("--text", action="store_true", help="human-readable summary instead of JSON")
    be.set_defaults(func=cmd_break_even)

    ds = sub.add_parser("dump-schema", help="print the scenario JSON schema")
    ds.set_defaults(func=cmd_dump_schema)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
