import pytest

from components.errors import RunAborted
from components.safe_heap import ALL_MODES, RunMode, RuntimeConfig, make_runtime
from workloads.bench import SWEEP_COLUMNS, execute, run, sweep, write_sweep_csv
from workloads.cost_model import CostModel, InvalidCostWeight, RunMetrics
from workloads.generator import OpKind, TraceOp, WorkloadSpec, count_ops, fuzz_trace, generate

SPEC = WorkloadSpec(total_ops=2000, seed=7)


@pytest.fixture(scope="module")
def table():
    return sweep(spec=SPEC)


def _row(table, fraction, mode):
    rows = table[(table.heapFraction == fraction) & (table["mode"] == mode)]
    assert len(rows) == 1
    return rows.iloc[0]


@pytest.mark.parametrize("fraction", [0.0, 0.3, 0.75, 1.0])
def test_generate_heap_share_is_exact(fraction):
    trace = generate(WorkloadSpec(total_ops=1000, heap_fraction=fraction, seed=3))
    assert count_ops(trace, OpKind.COPY) == round(fraction * 1000)
    assert count_ops(trace, OpKind.STACK_COPY) == 1000 - round(fraction * 1000)
    counts = count_ops(trace)
    assert counts[OpKind.ALLOC] == counts[OpKind.FREE]


def test_generate_is_seeded():
    assert generate(SPEC) == generate(SPEC)
    assert generate(SPEC) != generate(WorkloadSpec(total_ops=2000, seed=8))


def test_generated_copies_stay_in_bounds():
    sizes = {}
    live = set()
    for op in generate(WorkloadSpec(total_ops=3000, heap_fraction=0.9, seed=11)):
        if op.kind == OpKind.ALLOC:
            assert 8 <= op.size <= 16
            sizes[op.slot] = op.size
            live.add(op.slot)
            assert len(live) <= 8
        elif op.kind == OpKind.FREE:
            live.remove(op.slot)
        elif op.kind == OpKind.COPY:
            assert op.slot in live
            assert 1 <= len(op.data) and op.offset + len(op.data) <= sizes[op.slot]
    assert not live


@pytest.mark.parametrize("kwargs", [{"total_ops": -1}, {"heap_fraction": 1.5},
                                    {"min_buffer": 0}, {"min_buffer": 20, "max_buffer": 10}])
def test_workload_spec_validation(kwargs):
    with pytest.raises(ValueError):
        WorkloadSpec(**kwargs)


def test_cost_model_validation():
    with pytest.raises(InvalidCostWeight) as info:
        CostModel(soft_bounds_check=-1)
    assert info.value.field == "soft_bounds_check"
    with pytest.raises(InvalidCostWeight) as info:
        CostModel(nb_issue=5, blocking_validate_stall=4)
    assert info.value.field == "nb_issue"
    assert CostModel.with_overrides({"softBoundsCheck": 12}).soft_bounds_check == 12


def _cycles(trace, mode, cost):
    rt = execute(trace, make_runtime(RuntimeConfig(mode=mode)))
    return cost.cycles(rt.counters)


@pytest.mark.parametrize("mode", [RunMode.SOFTBC, RunMode.HEAPSAFE, RunMode.HEAPSAFE_NB])
@pytest.mark.parametrize("cost", [CostModel(), CostModel(soft_bounds_check=20, blocking_validate_stall=6, nb_issue=2)])
def test_protection_cycles_closed_form(mode, cost):
    trace = [TraceOp(OpKind.ALLOC, slot=0, size=16),
             TraceOp(OpKind.COPY, slot=0, offset=2, data=b"abcdefgh"),
             TraceOp(OpKind.STACK_COPY, offset=0, data=b"abc"),
             TraceOp(OpKind.FREE, slot=0)]
    for k, op in enumerate(trace, start=1):
        extra = (_cycles(trace[:k], mode, cost) - _cycles(trace[:k - 1], mode, cost)) \
            - (_cycles(trace[:k], RunMode.BASELINE, cost) - _cycles(trace[:k - 1], RunMode.BASELINE, cost))
        assert extra == cost.protection_cycles(mode, op.kind)


def test_run_reports_violations():
    trace = [TraceOp(OpKind.ALLOC, slot=0, size=8), TraceOp(OpKind.WRITE, slot=0, offset=8, data=b"x")]
    metrics = run(trace, RunMode.HEAPSAFE)
    assert metrics.partial and metrics.violations_detected == 1
    assert metrics.error.startswith("OutOfBoundsAccess")
    assert run(trace, RunMode.BASELINE).violations_detected == 0


def test_run_metrics_ipc():
    assert RunMetrics("baseline").ipc == 0.0
    assert RunMetrics("heapsafe", total_cycles=200, instruction_count=150).ipc == 0.75


def test_sweep_shape(table):
    assert list(table.columns) == SWEEP_COLUMNS
    assert len(table) == 20
    assert list(table["mode"][:4]) == [m.value for m in ALL_MODES]
    assert (table[table["mode"] == "baseline"].normalizedTime == 1.0).all()
    assert (table.violations == 0).all()


def test_heapsafe_beats_softbc_on_heap_heavy_work(table):
    hs = _row(table, 0.75, "heapsafe")
    soft = _row(table, 0.75, "softbc")
    assert hs.cycles <= 0.85 * soft.cycles


def test_nonblocking_beats_blocking(table):
    for fraction in (0.75, 1.0):
        assert _row(table, fraction, "heapsafe-nb").cycles <= 0.85 * _row(table, fraction, "heapsafe").cycles


def test_average_heapsafe_overhead(table):
    mean = table[table["mode"] == "heapsafe"].normalizedTime.mean()
    assert 1.2 <= mean <= 1.8


def test_heapsafe_runs_fewer_instructions_at_lower_ipc(table):
    for fraction in (0.5, 0.75, 1.0):
        hs = _row(table, fraction, "heapsafe")
        soft = _row(table, fraction, "softbc")
        assert hs.ipc < soft.ipc
        assert hs.cycles < soft.cycles
        assert hs.instructionCount < soft.instructionCount


def test_cycle_ordering_on_heap_heavy_work(table):
    for fraction in (0.5, 0.75, 1.0):
        cycles = [_row(table, fraction, m).cycles for m in ("baseline", "heapsafe-nb", "heapsafe", "softbc")]
        assert cycles == sorted(cycles) and len(set(cycles)) == 4


def test_ipc_ordering_on_heap_heavy_work(table):
    for fraction in (0.5, 0.75, 1.0):
        hs, soft, nb = (_row(table, fraction, m).ipc for m in ("heapsafe", "softbc", "heapsafe-nb"))
        assert hs < soft < nb
        assert soft < _row(table, fraction, "baseline").ipc


def test_heapsafe_to_softbc_ratio_does_not_grow(table):
    ratios = [_row(table, f, "heapsafe").cycles / _row(table, f, "softbc").cycles
              for f in (0.25, 0.5, 0.75, 1.0)]
    assert all(a >= b for a, b in zip(ratios, ratios[1:]))


def test_modes_share_stack_cost(table):
    stack_only = table[table.heapFraction == 0.0]
    assert (stack_only.normalizedTime == 1.0).all()


def test_sweep_csv_is_reproducible(tmp_path, table):
    first, second = tmp_path / "a.csv", tmp_path / "b.csv"
    write_sweep_csv(table, first)
    write_sweep_csv(sweep(spec=SPEC), second)
    assert first.read_bytes() == second.read_bytes()
    lines = first.read_text().splitlines()
    assert lines[0] == ",".join(SWEEP_COLUMNS)
    assert len(lines) == 21


def test_parallel_sweep_matches_serial():
    kwargs = dict(heap_fractions=[0.25, 0.75], spec=WorkloadSpec(total_ops=300, seed=5))
    serial = sweep(**kwargs)
    parallel = sweep(jobs=2, **kwargs)
    assert serial.equals(parallel)


def test_sweep_stops_on_a_gated_engine():
    config = RuntimeConfig(require_machine_mode=True, privileged=False)
    with pytest.raises(RunAborted, match="PrivilegeViolation"):
        sweep(heap_fractions=[0.5], spec=WorkloadSpec(total_ops=100), config=config)


def test_sweep_normalizes_without_baseline_column():
    table = sweep(heap_fractions=[0.5], modes=[RunMode.HEAPSAFE], spec=WorkloadSpec(total_ops=200))
    assert list(table["mode"]) == ["heapsafe"]
    assert table.normalizedTime.iloc[0] > 1.0


def test_fuzz_trace_violation_free_by_default(rng):
    for _ in range(200):
        trace = fuzz_trace(rng)
        rt = execute(trace, make_runtime(RuntimeConfig(mode=RunMode.HEAPSAFE)))
        assert rt.detections == []
