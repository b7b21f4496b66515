"""Command-line front end.

Subcommands:

* ``run``: simulate one scenario and emit the report as JSON.
* ``validate``: parse and validate a scenario file without running it.
* ``compare``: run several scenarios and print a summary table.
* ``list-strategies``: show the supported strategy combinations.

Exit codes: 0 success, 1 a run died on a correctness tripwire, 2 bad input.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace

from .metrics import report_to_json
from .runner import RunFailedError, run
from .scenario import (
    Scenario,
    ScenarioParseError,
    ScenarioValidationError,
    load_scenario,
)

_STRATEGY_MATRIX = """\
deployment  policy          mitigations
DEVICE      SINGLE_ONLINE   -
SERVER      SINGLE_OFFLINE  -
SERVER      SINGLE_ONLINE   NONE, SYNC_TABLE, HASH_LB, MULTI_PROFILE
SERVER      DOUBLE          -
HYBRID      SINGLE_ONLINE   - (optional handshake)
HYBRID      DOUBLE          - (optional handshake)"""


def _load(path: str, seed_override: int | None) -> Scenario:
    scenario = load_scenario(path)
    if seed_override is not None:
        scenario = replace(scenario, seed=seed_override)
    return scenario


def _resolve_seed(args: argparse.Namespace) -> int | None:
    if args.seed is not None:
        return args.seed
    env = os.environ.get("SIM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise ScenarioValidationError(f"SIM_SEED must be an integer, got {env!r}")
    return None


def _write_text(path: str | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8") as f:
            f.write(text)


def _cmd_run(args: argparse.Namespace) -> int:
    scenario = _load(args.scenario, _resolve_seed(args))
    result = run(scenario, trace=args.trace is not None)
    if args.trace is not None:
        with open(args.trace, "w", encoding="utf-8") as f:
            for line in result.trace:
                f.write(line + "\n")
    _write_text(args.out, report_to_json(result.report))
    return 0


def _cmd_validate(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    cfg = scenario.strategy
    parts = [cfg.deployment.value, cfg.policy.value]
    if cfg.mitigation.value != "NONE":
        parts.append(cfg.mitigation.value)
    print(
        f"ok: {'/'.join(parts)}, {scenario.users} users, "
        f"{scenario.cloud_servers} servers, {len(scenario.releases)} releases, "
        f"{scenario.duration_ms} ms"
    )
    return 0


def _cmd_compare(args: argparse.Namespace) -> int:
    seed = _resolve_seed(args)
    rows = []
    failed = False
    for path in args.scenarios:
        name = os.path.basename(path)
        try:
            scenario = _load(path, seed)
            result = run(scenario)
        except (ScenarioParseError, ScenarioValidationError, OSError) as exc:
            rows.append({"scenario": name, "error": str(exc)})
            failed = True
            continue
        except RunFailedError as exc:
            rows.append({"scenario": name, "error": str(exc)})
            failed = True
            continue
        report = result.report
        runtime_stats = report.latency_ms.get("RUNTIME")
        rows.append(
            {
                "scenario": name,
                "availability": report.availability,
                "p95_runtime_latency_ms": None if runtime_stats is None else runtime_stats.p95,
                "total_reenrollments": report.total_reenrollments,
                "bounce_count": report.bounce_count,
                "maintenance_ms": report.maintenance_ms,
            }
        )
    header = (
        f"{'scenario':<28} {'avail':>7} {'p95 ms':>8} {'reenr':>6} {'bounce':>6} {'maint ms':>9}"
    )
    print(header)
    print("-" * len(header))
    for row in rows:
        if "error" in row:
            print(f"{row['scenario']:<28} error: {row['error']}")
            continue
        avail = "-" if row["availability"] is None else f"{row['availability']:.4f}"
        p95 = "-" if row["p95_runtime_latency_ms"] is None else str(row["p95_runtime_latency_ms"])
        print(
            f"{row['scenario']:<28} {avail:>7} {p95:>8} "
            f"{row['total_reenrollments']:>6} {row['bounce_count']:>6} {row['maintenance_ms']:>9}"
        )
    if args.out is not None:
        import json

        _write_text(args.out, json.dumps(rows, indent=2, sort_keys=True) + "\n")
    return 1 if failed else 0


def _cmd_list_strategies(args: argparse.Namespace) -> int:
    print(_STRATEGY_MATRIX)
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="versim",
        description="Deterministic simulator for recognition-fleet version-control strategies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate one scenario and print the report JSON")
    p_run.add_argument("--scenario", required=True, help="scenario JSON file")
    p_run.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    p_run.add_argument("--trace", default=None, help="write the event trace to this file")
    p_run.add_argument("--out", default=None, help="write the report here instead of stdout")
    p_run.set_defaults(fn=_cmd_run)

    p_val = sub.add_parser("validate", help="check a scenario file")
    p_val.add_argument("--scenario", required=True, help="scenario JSON file")
    p_val.set_defaults(fn=_cmd_validate)

    p_cmp = sub.add_parser("compare", help="run several scenarios and tabulate the reports")
    p_cmp.add_argument("scenarios", nargs="+", help="scenario JSON files")
    p_cmp.add_argument("--seed", type=int, default=None, help="override every scenario seed")
    p_cmp.add_argument("--out", default=None, help="also write the rows as JSON")
    p_cmp.set_defaults(fn=_cmd_compare)

    p_list = sub.add_parser("list-strategies", help="show supported strategy combinations")
    p_list.set_defaults(fn=_cmd_list_strategies)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ScenarioParseError, ScenarioValidationError) as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"cannot read {exc.filename}: not found", file=sys.stderr)
        return 2
    except RunFailedError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
