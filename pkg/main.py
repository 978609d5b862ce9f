"""Entry point for the bloatsim command-line interface."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from bloatsim.config import ConfigurationError, ScenarioConfig, describe, load_config, override
from bloatsim.executor import SimulationStall, run_cell, run_grid
from bloatsim.history import EventTrace
from bloatsim.metrics import RUN_COLUMNS, format_value
from bloatsim.planner import FactorGrid, derive_seed

DEFAULT_CONFIG_PATH = Path("config/hetnet.conf")

EXIT_OK = 0
EXIT_CONFIG_ERROR = 1
EXIT_RUN_FAILURE = 2


def _names(text: str) -> List[str]:
    return [item.strip() for item in text.split(",") if item.strip()]


def _delays(text: str) -> List[float]:
    try:
        return [float(item) for item in _names(text)]
    except ValueError:
        raise ConfigurationError(f"--delay-a: malformed delay list '{text}'") from None


def parse_args(argv: list[str]) -> argparse.Namespace:
    print(
        "[main.py][parse_args][Start] "
        f"argv={argv}"
    )
    parser = argparse.ArgumentParser(prog="bloatsim", description="MPTCP bufferbloat simulator")
    parser.add_argument("--log-level", dest="log_level", default="INFO", help="Logging level")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="Run the factor grid and write runs.csv / aggregate.csv")
    run.add_argument("--config", default=str(DEFAULT_CONFIG_PATH))
    run.add_argument("--qdisc", help="Comma-separated queue disciplines")
    run.add_argument("--cc", help="Comma-separated congestion control algorithms")
    run.add_argument("--delay-a", dest="delay_a", help="Comma-separated path-A delays in ms")
    run.add_argument("--reps", type=int)
    run.add_argument("--seed", type=int)
    run.add_argument("--jobs", type=int, default=1)
    run.add_argument("--out", required=True)

    validate = commands.add_parser("validate", help="Validate a configuration file and print it resolved")
    validate.add_argument("--config", default=str(DEFAULT_CONFIG_PATH))

    trace = commands.add_parser("trace", help="Run one cell and print the per-event log")
    trace.add_argument("--config", default=str(DEFAULT_CONFIG_PATH))
    trace.add_argument("--qdisc", default="codel-lifo")
    trace.add_argument("--cc", default="lia")
    trace.add_argument("--delay-a", dest="delay_a", type=float)
    trace.add_argument("--rep", type=int, default=0)
    trace.add_argument("--seed", type=int)
    trace.add_argument("--max-records", dest="max_records", type=int)

    parsed = parser.parse_args(argv)
    print(
        "[main.py][parse_args][End] "
        f"command={parsed.command} config={parsed.config} log_level={parsed.log_level}"
    )
    return parsed


def _load(args: argparse.Namespace) -> ScenarioConfig:
    config = load_config(Path(args.config))
    changes = {}
    if getattr(args, "reps", None) is not None:
        changes["reps"] = args.reps
    if args.command == "run" and args.seed is not None:
        changes["base_seed"] = args.seed
    return override(config, **changes) if changes else config


def command_run(args: argparse.Namespace, config: ScenarioConfig) -> int:
    if args.jobs < 1:
        raise ConfigurationError(f"--jobs must be ≥ 1, got {args.jobs}")
    grid = FactorGrid.from_config(
        config,
        qdiscs=_names(args.qdisc) if args.qdisc else None,
        ccs=_names(args.cc) if args.cc else None,
        delays_ms=_delays(args.delay_a) if args.delay_a else None,
    )
    result = run_grid(config, grid, Path(args.out), jobs=args.jobs)
    print(f"{len(result.runs)} 件の実行結果を {result.runs_path} に書き出しました。")
    if not result.ok:
        for failure in result.failures:
            logging.error(
                "実行に失敗しました: %s/%s/%gms rep=%s: %s",
                failure.qdisc, failure.cc, failure.delay_a_ms, failure.rep, failure.message,
            )
        return EXIT_RUN_FAILURE
    return EXIT_OK


def command_validate(config: ScenarioConfig) -> int:
    print(describe(config))
    print("設定ファイルは有効です。")
    return EXIT_OK


def command_trace(args: argparse.Namespace, config: ScenarioConfig) -> int:
    delay = args.delay_a if args.delay_a is not None else config.delay_a_ms[0]
    cell = FactorGrid(qdiscs=(args.qdisc,), ccs=(args.cc,), delays_ms=(delay,))
    qdisc, cc, delay = cell.qdiscs[0], cell.ccs[0], cell.delays_ms[0]
    seed = args.seed if args.seed is not None else derive_seed(config.base_seed, qdisc, cc, delay, args.rep)
    trace = EventTrace(max_records=args.max_records)
    try:
        metrics = run_cell(config, qdisc, cc, delay, args.rep, seed=seed, trace=trace)
    except ConfigurationError:
        raise
    except SimulationStall as exc:
        print(trace.to_text())
        logging.error("シミュレーションが停滞しました: %s", exc)
        return EXIT_RUN_FAILURE
    except RuntimeError as exc:
        print(trace.to_text())
        logging.error("シミュレーション結果の検証に失敗しました: %s", exc)
        return EXIT_RUN_FAILURE
    print(trace.to_text())
    values = vars(metrics)
    print(",".join(RUN_COLUMNS))
    print(",".join(format_value(values[column]) for column in RUN_COLUMNS))
    return EXIT_OK


def main(argv: Optional[list[str]] = None) -> int:
    print(
        "[main.py][main][Start] "
        f"argv={argv}"
    )
    args = parse_args(sys.argv[1:] if argv is None else argv)
    logging.basicConfig(level=getattr(logging, args.log_level.upper(), logging.INFO))

    try:
        config = _load(args)
        if args.command == "validate":
            status = command_validate(config)
        elif args.command == "trace":
            status = command_trace(args, config)
        else:
            status = command_run(args, config)
    except ConfigurationError as exc:
        logging.error("設定ファイルの読み込みに失敗しました: %s", exc)
        print(
            "[main.py][main][End] status=configuration_error "
            f"error={exc}"
        )
        return EXIT_CONFIG_ERROR

    print(
        "[main.py][main][End] "
        f"status={'success' if status == EXIT_OK else 'run_failure'} command={args.command}"
    )
    return status


if __name__ == "__main__":
    raise SystemExit(main())
