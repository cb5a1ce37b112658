import pytest

from components.errors import OutOfBoundsAccess
from components.safe_heap import RunMode, RuntimeConfig
from workloads.attacks import BUFFER_SIZE, OVERFLOW_INPUT, attack_cwe122, attack_cwe416, example_to_upper


def test_overflow_corrupts_the_neighbour_without_protection():
    report = attack_cwe122(RunMode.BASELINE)
    assert not report.detected
    assert report.corrupted_bytes == len(OVERFLOW_INPUT) - BUFFER_SIZE
    assert report.verdict == "undetected"


@pytest.mark.parametrize("mode", [RunMode.HEAPSAFE, RunMode.SOFTBC])
def test_overflow_detected_at_the_buffer_end(mode):
    report = attack_cwe122(mode)
    assert report.detected
    assert report.detected_at_offset == BUFFER_SIZE
    assert report.corrupted_bytes == 0
    assert report.latency == 0


def test_overflow_detected_late_in_nonblocking_mode():
    report = attack_cwe122(RunMode.HEAPSAFE_NB)
    assert report.detected
    assert report.detected_at_offset == BUFFER_SIZE
    assert 0 < report.latency <= RuntimeConfig().drain_interval
    # Writes issued before the exception was taken have landed.
    assert 0 < report.corrupted_bytes <= report.latency
    assert report.note == "AsyncViolation"


def test_use_after_free_leaks_without_protection():
    report = attack_cwe416(RunMode.BASELINE)
    assert not report.detected
    assert report.leaked


@pytest.mark.parametrize("mode", [RunMode.HEAPSAFE, RunMode.SOFTBC])
def test_use_after_free_detected(mode):
    report = attack_cwe416(mode)
    assert report.detected
    assert not report.leaked


def test_use_after_free_nonblocking_is_flagged_after_the_read():
    report = attack_cwe416(RunMode.HEAPSAFE_NB)
    assert report.detected
    assert report.leaked
    assert report.latency > 0


def test_reissued_tag_is_a_known_blind_spot():
    report = attack_cwe416(RunMode.HEAPSAFE, reuse_tag=True)
    assert not report.detected
    assert report.leaked
    assert "tag reissued" in report.note


def test_to_upper(runtime_for):
    rt = runtime_for(RunMode.HEAPSAFE)
    upper = example_to_upper(rt, b"hello, world")
    assert rt.read_range(upper, 12) == b"HELLO, WORLD"
    assert rt.detections == []


def test_to_upper_overflow_stops_the_loop(runtime_for):
    rt = runtime_for(RunMode.HEAPSAFE)
    with pytest.raises(OutOfBoundsAccess):
        example_to_upper(rt, b"abcdefghij", size=8)
    assert rt.heap.load(rt.heap.base + 8) == 0
