"""
Attack scenarios replayed against each run mode.

- cwe122: heap buffer overflow. An uppercase conversion writes a 24-byte
  string into a 16-byte buffer, byte by byte, with a victim buffer placed
  right after it.
- cwe416: use after free. A buffer is freed on an error path, a new buffer
  holding a secret is allocated at the same address, and the dangling
  pointer is read.

Corrupted bytes are counted by diffing the victim's memory before and after
the attack, straight from the simulated heap.
"""

import logging
from dataclasses import dataclass, replace
from typing import Dict, Optional

from components.errors import OutOfBoundsAccess
from components.heapsafe_engine import HeapSafeEngine
from components.pointer_tagging import SafePointer
from components.safe_heap import HeapRuntime, RunMode, RuntimeConfig, make_runtime

logger = logging.getLogger(__name__)

BUFFER_SIZE = 16
OVERFLOW_INPUT = b"heap buffer overflow!!!!"  # 24 bytes
VICTIM_FILL = 0x56
SECRET = b"k3y:0123456789abcdef0123456789ab"  # 32 bytes


@dataclass
class DetectionReport:
    attack: str
    mode: str
    detected: bool
    detected_at_offset: Optional[int]
    corrupted_bytes: int
    leaked: bool
    latency: int
    note: str = ""

    @property
    def verdict(self) -> str:
        return "detected" if self.detected else "undetected"


def _runtime(mode: RunMode, config: Optional[RuntimeConfig], engine: Optional[HeapSafeEngine]) -> HeapRuntime:
    return make_runtime(replace(config or RuntimeConfig(), mode=RunMode(mode)), engine)


def example_to_upper(runtime: HeapRuntime, text: bytes, size: Optional[int] = None) -> SafePointer:
    """
    Copy ``text`` upper-cased into a new heap buffer, one byte at a time.

    The buffer holds ``size`` bytes (len(text) when omitted); nothing stops
    the loop at the end of the buffer, so a short buffer overflows.
    """
    upper = runtime.malloc(size if size is not None else len(text))
    p = upper
    for ch in text:
        runtime.write(p, ord(chr(ch).upper()))
        p = runtime.layout.offset(p, 1)
    return upper


def attack_cwe122(mode: RunMode, config: Optional[RuntimeConfig] = None,
                  engine: Optional[HeapSafeEngine] = None, text: bytes = OVERFLOW_INPUT) -> DetectionReport:
    runtime = _runtime(mode, config, engine)
    buf = runtime.malloc(BUFFER_SIZE)
    victim = runtime.malloc(BUFFER_SIZE)
    runtime.copy(victim, bytes([VICTIM_FILL]) * BUFFER_SIZE)
    victim_raw = runtime.layout.raw(victim)
    before = runtime.heap.load_range(victim_raw, BUFFER_SIZE)

    # op index -> byte offset it wrote
    offset_of_op: Dict[int, int] = {}
    detected, latency, offset, note = False, 0, None, ""
    try:
        p = buf
        for i, ch in enumerate(text):
            offset_of_op[runtime.op_index] = i
            runtime.write(p, ord(chr(ch).upper()))
            p = runtime.layout.offset(p, 1)
        runtime.finish()
    except OutOfBoundsAccess as e:
        detected = True
        first = min(runtime.detections, key=lambda d: d.issued_at)
        latency = first.latency
        offset = offset_of_op.get(first.issued_at)
        note = type(e).__name__
        logger.info("cwe122 under %s stopped: %s", RunMode(mode).value, e)

    after = runtime.heap.load_range(victim_raw, BUFFER_SIZE)
    corrupted = sum(1 for a, b in zip(before, after) if a != b)
    if not detected and corrupted:
        note = "adjacent allocation overwritten"
    return DetectionReport("cwe122", RunMode(mode).value, detected, offset, corrupted, False, latency, note)


def attack_cwe416(mode: RunMode, reuse_tag: bool = False, config: Optional[RuntimeConfig] = None,
                  engine: Optional[HeapSafeEngine] = None) -> DetectionReport:
    """
    Dangling read after the freed buffer's address is handed out again.

    By default some earlier heap churn makes the new buffer draw a different
    tag than the freed one, so the dangling pointer's tag no longer has a
    valid row. With ``reuse_tag`` the new buffer gets the same tag and the
    same address, and the read passes the bounds check.
    """
    runtime = _runtime(mode, config, engine)
    leaked, detected, latency, offset, note = False, False, 0, None, ""
    try:
        if not reuse_tag:
            scratch = runtime.malloc(8)
            runtime.malloc(8)  # stays live, keeps scratch from coalescing upward
            p1 = runtime.malloc(len(SECRET))
            runtime.free(scratch)
        else:
            p1 = runtime.malloc(len(SECRET))
        runtime.copy(p1, b"public" + bytes(len(SECRET) - 6))
        runtime.free(p1)  # error path
        p2 = runtime.malloc(len(SECRET))
        if runtime.layout.raw(p2) != runtime.layout.raw(p1):
            logger.warning("cwe416: new buffer at %#x, not at the freed %#x",
                           runtime.layout.raw(p2), runtime.layout.raw(p1))
        runtime.copy(p2, SECRET)
        data = runtime.read_range(p1, len(SECRET))
        leaked = data == SECRET
        runtime.finish()
    except OutOfBoundsAccess as e:
        detected = True
        first = min(runtime.detections, key=lambda d: d.issued_at)
        latency = first.latency
        offset = 0
        note = type(e).__name__
        logger.info("cwe416 under %s stopped: %s", RunMode(mode).value, e)

    if leaked and detected:
        note = "secret read before the deferred exception was taken"
    elif leaked and reuse_tag and RunMode(mode) != RunMode.BASELINE:
        note = "tag reissued at the same address; dangling pointer validates"
    elif leaked:
        note = "secret leaked through dangling pointer"
    return DetectionReport("cwe416", RunMode(mode).value, detected, offset, 0, leaked, latency, note)
