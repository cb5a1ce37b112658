"""
Benchmark harness: replay traces through a runtime path, turn the event
counts into RunMetrics, and sweep the heap/stack balance across run modes.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import pandas as pd
from tqdm import tqdm

from components.errors import HeapSafeError, OutOfBoundsAccess, RunAborted
from components.heapsafe_engine import HeapSafeEngine
from components.pointer_tagging import SafePointer
from components.safe_heap import (
    ALL_MODES,
    HeapRuntime,
    InstructionProfile,
    RunMode,
    RuntimeConfig,
    make_runtime,
)
from workloads.cost_model import CostModel, RunMetrics
from workloads.generator import OpKind, TraceOp, WorkloadSpec, generate

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = ["heapFraction", "mode", "cycles", "instructionCount", "ipc",
                 "normalizedTime", "violations", "detectionLatency"]
DEFAULT_FRACTIONS = (0.0, 0.25, 0.5, 0.75, 1.0)


def execute(trace: Iterable[TraceOp], runtime: HeapRuntime) -> HeapRuntime:
    """
    Replay a trace through a runtime and finish it (final drain point).

    Errors raised by the runtime propagate; the runtime keeps the state it
    reached, so callers can still read its counters and memory.
    """
    pointers: Dict[int, SafePointer] = {}
    for op in trace:
        if op.kind == OpKind.ALLOC:
            pointers[op.slot] = runtime.malloc(op.size)
        elif op.kind == OpKind.FREE:
            runtime.free(pointers[op.slot])
        elif op.kind == OpKind.COPY:
            runtime.copy(runtime.layout.offset(pointers[op.slot], op.offset), op.data)
        elif op.kind == OpKind.WRITE:
            runtime.write(runtime.layout.offset(pointers[op.slot], op.offset), op.data[0])
        elif op.kind == OpKind.READ:
            runtime.read(runtime.layout.offset(pointers[op.slot], op.offset))
        elif op.kind == OpKind.STACK_COPY:
            runtime.stack_copy(op.offset, op.data)
        else:
            raise ValueError(f"unknown trace op {op.kind}")
    runtime.finish()
    return runtime


def metrics_of(runtime: HeapRuntime, cost: CostModel) -> RunMetrics:
    metrics = RunMetrics.from_counters(runtime.config.mode, runtime.counters, cost, runtime.profile)
    metrics.violations_detected = len(runtime.detections)
    metrics.detection_latency = max((d.latency for d in runtime.detections), default=0)
    return metrics


def run(trace: Sequence[TraceOp], mode: RunMode, cost: Optional[CostModel] = None,
        config: Optional[RuntimeConfig] = None, engine: Optional[HeapSafeEngine] = None,
        profile: Optional[InstructionProfile] = None) -> RunMetrics:
    """
    Execute one trace under one run mode.

    Args:
        trace: Operations to replay
        mode: Runtime path to use
        cost: Cycle weights (defaults when None)
        config: Runtime settings; its mode is replaced by ``mode``
        engine: Engine instance for the heapsafe modes (a fresh one when None)

    Returns:
        RunMetrics; a run stopped by a runtime error is flagged partial
    """
    cost = cost or CostModel()
    config = replace(config or RuntimeConfig(), mode=RunMode(mode))
    runtime = make_runtime(config, engine, profile)
    error = None
    try:
        execute(trace, runtime)
    except OutOfBoundsAccess as e:
        logger.info("%s run stopped by a detected violation: %s", config.mode.value, e)
        error = e
    except HeapSafeError as e:
        logger.warning("%s run stopped: %s", config.mode.value, e)
        error = e
    metrics = metrics_of(runtime, cost)
    if error is not None:
        metrics.partial = True
        metrics.error = f"{type(error).__name__}: {error}"
    return metrics


def _run_cell(args: Tuple[float, RunMode, WorkloadSpec, CostModel, RuntimeConfig]) -> Tuple[float, str, RunMetrics]:
    fraction, mode, spec, cost, config = args
    trace = generate(replace(spec, heap_fraction=fraction))
    return fraction, RunMode(mode).value, run(trace, mode, cost, config)


def _normalized(cycles: int, baseline: int) -> float:
    if baseline == 0:
        return 1.0 if cycles == 0 else float("inf")
    return cycles / baseline


def sweep(heap_fractions: Sequence[float] = DEFAULT_FRACTIONS, modes: Sequence[RunMode] = ALL_MODES,
          cost: Optional[CostModel] = None, spec: Optional[WorkloadSpec] = None,
          config: Optional[RuntimeConfig] = None, jobs: int = 1, progress: bool = False) -> pd.DataFrame:
    """
    Run every (heap fraction, mode) cell and normalize cycles to baseline.

    Each cell generates its own trace from ``spec`` (same seed for every
    mode at a given fraction) and owns its runtime and engine, so cells can
    run in worker processes; results are merged by key.

    Returns:
        DataFrame with SWEEP_COLUMNS, sorted by fraction then mode order

    Raises:
        RunAborted: a cell stopped on an error other than a detected violation
    """
    cost = cost or CostModel()
    spec = spec or WorkloadSpec()
    config = config or RuntimeConfig()
    modes = [RunMode(m) for m in modes]
    run_modes = list(modes) if RunMode.BASELINE in modes else [RunMode.BASELINE] + list(modes)
    cells = [(float(f), m, spec, cost, config) for f in heap_fractions for m in run_modes]

    results: Dict[Tuple[float, str], RunMetrics] = {}
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for fraction, mode, metrics in tqdm(pool.map(_run_cell, cells), total=len(cells),
                                                desc="sweep", disable=not progress):
                results[(fraction, mode)] = metrics
    else:
        for cell in tqdm(cells, desc="sweep", disable=not progress):
            fraction, mode, metrics = _run_cell(cell)
            results[(fraction, mode)] = metrics
            logger.info("cell heapFraction=%.2f mode=%s cycles=%d", fraction, mode, metrics.total_cycles)

    for (fraction, mode), metrics in sorted(results.items()):
        if metrics.partial and not metrics.violations_detected:
            raise RunAborted(f"heapFraction={fraction:g} mode={mode}: {metrics.error}")

    rows: List[dict] = []
    for f in heap_fractions:
        baseline = results[(float(f), RunMode.BASELINE.value)]
        for m in modes:
            metrics = results[(float(f), m.value)]
            rows.append({
                "heapFraction": float(f),
                "mode": m.value,
                "cycles": metrics.total_cycles,
                "instructionCount": metrics.instruction_count,
                "ipc": metrics.ipc,
                "normalizedTime": _normalized(metrics.total_cycles, baseline.total_cycles),
                "violations": metrics.violations_detected,
                "detectionLatency": metrics.detection_latency,
            })
    return pd.DataFrame(rows, columns=SWEEP_COLUMNS)


def write_sweep_csv(table: pd.DataFrame, path) -> None:
    table.to_csv(path, index=False, float_format="%.6f", lineterminator="\n")
