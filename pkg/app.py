"""
HeapSafe simulator - command-line entry point

Run single workloads, replay the attack corpus, or sweep the heap/stack
workload balance across run modes and write the results as CSV.

Usage:
    python app.py run [--workload NAME] [--ops N] [--heap-fraction F] [--trace PATH]
    python app.py sweep [--fractions LIST] [--modes LIST] [--out PATH] [--jobs N]
    python app.py attack {cwe122,cwe416} [--mode NAME] [--reuse-tag]

Exit status: 0 clean run, 2 violation detected, 1 usage, config or
internal error.
"""

import argparse
import logging
import sys
from contextlib import ExitStack
from typing import List, Optional

import pandas as pd

from components.errors import HeapSafeError
from components.heapsafe_engine import HeapSafeEngine, TraceLog, build_fleet
from components.safe_heap import ALL_MODES, RunMode, make_runtime
from components.ui_utils import format_metrics, format_report, format_verdict_line
from util.config import SystemConfig, load_system_config, setup_logging, with_overrides
from workloads.attacks import attack_cwe122, attack_cwe416, example_to_upper
from workloads.bench import DEFAULT_FRACTIONS, SWEEP_COLUMNS, run, sweep, write_sweep_csv
from workloads.generator import generate

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_VIOLATION = 2

TO_UPPER_INPUT = b"heapsafe protects the heap"


def _engine_for(config: SystemConfig, mode: RunMode, hart: int, trace: Optional[TraceLog]) -> Optional[HeapSafeEngine]:
    if not mode.uses_engine:
        return None
    fleet = build_fleet(config.n, config.mt_size, mode.engine_mode, config.require_machine_mode, trace)
    return fleet.select_engine(hart)


def _parse_list(text: str, cast) -> list:
    return [cast(item.strip()) for item in text.split(",") if item.strip()]


def cmd_run(args, config: SystemConfig) -> int:
    mode = config.mode
    with ExitStack() as stack:
        trace = None
        if args.trace:
            trace = TraceLog(stack.enter_context(open(args.trace, "w")))
        engine = _engine_for(config, mode, args.hart, trace)
        runtime_config = config.runtime_config(hart_id=args.hart)

        if args.workload in ("cwe122", "cwe416"):
            attack = attack_cwe122 if args.workload == "cwe122" else attack_cwe416
            report = attack(mode, config=runtime_config, engine=engine)
            print(format_verdict_line(report))
            return EXIT_VIOLATION if report.detected else EXIT_OK

        if args.workload == "to_upper":
            runtime = make_runtime(runtime_config, engine)
            upper = example_to_upper(runtime, TO_UPPER_INPUT)
            text = runtime.read_range(upper, len(TO_UPPER_INPUT))
            runtime.finish()
            print(text.decode("ascii"))
            return EXIT_OK

        spec = config.workload_spec(heap_fraction=args.heap_fraction, total_ops=args.ops)
        ops = generate(spec)
        logger.info("generated %d trace ops (heapFraction=%.2f, seed=%d)", len(ops), spec.heap_fraction, spec.seed)
        metrics = run(ops, mode, config.cost, runtime_config, engine)
        baseline = run(ops, RunMode.BASELINE, config.cost, runtime_config)

    logger.info("run metrics:\n%s", format_metrics(metrics))
    if metrics.partial:
        # A stopped run has no comparable row.
        print(f"run stopped: {metrics.error}", file=sys.stderr)
        return EXIT_VIOLATION if metrics.violations_detected else EXIT_ERROR
    row = {
        "heapFraction": spec.heap_fraction,
        "mode": metrics.mode,
        "cycles": metrics.total_cycles,
        "instructionCount": metrics.instruction_count,
        "ipc": metrics.ipc,
        "normalizedTime": metrics.total_cycles / baseline.total_cycles if baseline.total_cycles else 1.0,
        "violations": metrics.violations_detected,
        "detectionLatency": metrics.detection_latency,
    }
    print(pd.DataFrame([row], columns=SWEEP_COLUMNS).to_csv(index=False, float_format="%.6f",
                                                            lineterminator="\n"), end="")
    return EXIT_VIOLATION if metrics.violations_detected else EXIT_OK


def cmd_sweep(args, config: SystemConfig) -> int:
    fractions = _parse_list(args.fractions, float) if args.fractions else list(DEFAULT_FRACTIONS)
    modes = _parse_list(args.modes, RunMode) if args.modes else list(ALL_MODES)
    table = sweep(fractions, modes, config.cost, config.workload_spec(), config.runtime_config(),
                  jobs=args.jobs, progress=args.progress)
    if args.out:
        write_sweep_csv(table, args.out)
        print(f"wrote {len(table)} rows to {args.out}")
    else:
        write_sweep_csv(table, sys.stdout)
    return EXIT_OK


def cmd_attack(args, config: SystemConfig) -> int:
    runtime_config = config.runtime_config()
    if args.attack == "cwe122":
        report = attack_cwe122(config.mode, config=runtime_config)
    else:
        report = attack_cwe416(config.mode, reuse_tag=args.reuse_tag, config=runtime_config)
    print(format_report(report))
    print(format_verdict_line(report))
    return EXIT_VIOLATION if report.detected else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="HeapSafe heap-safety simulator")
    parser.add_argument("--log-level", help="Logging level (default: HEAPSAFE_LOG_LEVEL or WARNING)")
    parser.add_argument("--quiet", action="store_true", help="Disable progress bars")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Flat KEY=VALUE config file (default: HEAPSAFE_CONFIG or heapsafe.cfg)")
    common.add_argument("--mode", choices=[m.value for m in RunMode], help="Override the config mode")
    common.add_argument("--seed", type=int, help="Override the config seed")

    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="Execute one workload")
    p_run.add_argument("--workload", default="synthetic", choices=["synthetic", "cwe122", "cwe416", "to_upper"])
    p_run.add_argument("--ops", type=int, help="Number of copy operations (default: totalOps)")
    p_run.add_argument("--heap-fraction", type=float, default=0.5, help="Share of heap copies (default: 0.5)")
    p_run.add_argument("--hart", type=int, default=0, help="Hart whose engine serves the run (default: 0)")
    p_run.add_argument("--trace", help="Write the engine command trace to this file")

    p_sweep = sub.add_parser("sweep", parents=[common], help="Sweep heap fraction across modes")
    p_sweep.add_argument("--fractions", help="Comma-separated heap fractions (default: 0,0.25,0.5,0.75,1)")
    p_sweep.add_argument("--modes", help="Comma-separated run modes (default: all)")
    p_sweep.add_argument("--out", help="CSV output path (default: stdout)")
    p_sweep.add_argument("--jobs", type=int, default=1, help="Worker processes (default: 1)")

    p_attack = sub.add_parser("attack", parents=[common], help="Replay an attack scenario")
    p_attack.add_argument("attack", choices=["cwe122", "cwe416"])
    p_attack.add_argument("--reuse-tag", action="store_true", help="cwe416: reissue the freed tag")
    return parser


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "attack": cmd_attack}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point; returns the exit status."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_ERROR

    setup_logging(args.log_level)
    args.progress = not args.quiet and sys.stderr.isatty()

    try:
        config = with_overrides(load_system_config(args.config), mode=args.mode, seed=args.seed)
        return COMMANDS[args.command](args, config)
    except HeapSafeError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ERROR
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
