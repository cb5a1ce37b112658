"""
Synthetic buffer-copy workloads.

A workload is a list of TraceOp values. Heap buffers are named by slot
numbers rather than pointers, so the same trace can be replayed under every
run mode (baseline pointers are raw, protected pointers are tagged).

Shape of a generated trace:
- exactly round(heap_fraction * total_ops) heap copies, the rest stack copies,
  in a seeded random order
- a heap copy allocates a fresh buffer when none is live, or with
  probability alloc_probability; the oldest buffer is freed first when
  max_live buffers are already live
- every copy stays inside its target buffer, so generated traces are
  violation-free
- all buffers still live at the end are freed
"""

from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np


class OpKind(str, Enum):
    ALLOC = "alloc"
    COPY = "copy"
    FREE = "free"
    STACK_COPY = "stack_copy"
    READ = "read"
    WRITE = "write"


@dataclass(frozen=True)
class TraceOp:
    kind: OpKind
    slot: int = -1
    size: int = 0
    offset: int = 0
    data: bytes = b""


@dataclass(frozen=True)
class WorkloadSpec:
    total_ops: int = 2000
    heap_fraction: float = 0.5
    min_buffer: int = 8
    max_buffer: int = 16
    seed: int = 0
    alloc_probability: float = 0.1
    max_live: int = 8
    stack_size: int = 4096

    def __post_init__(self):
        if self.total_ops < 0:
            raise ValueError(f"totalOps must be >= 0, got {self.total_ops}")
        if not 0.0 <= self.heap_fraction <= 1.0:
            raise ValueError(f"heapFraction must be in [0, 1], got {self.heap_fraction}")
        if not 1 <= self.min_buffer <= self.max_buffer:
            raise ValueError(f"invalid buffer size range [{self.min_buffer}, {self.max_buffer}]")
        if self.max_buffer > self.stack_size:
            raise ValueError("buffers must fit in the stack region")
        if self.max_live < 1:
            raise ValueError("maxLive must be >= 1")


def _copy_payload(rng: np.random.Generator, size: int):
    n = int(rng.integers(1, size + 1))
    offset = int(rng.integers(0, size - n + 1))
    data = rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()
    return offset, data


def generate(spec: WorkloadSpec) -> List[TraceOp]:
    """
    Build a reproducible trace from a workload spec.

    Args:
        spec: Workload parameters, including the seed

    Returns:
        List of trace operations
    """
    rng = np.random.default_rng(spec.seed)
    heap_ops = int(round(spec.heap_fraction * spec.total_ops))
    is_heap = np.zeros(spec.total_ops, dtype=bool)
    is_heap[:heap_ops] = True
    rng.shuffle(is_heap)

    trace: List[TraceOp] = []
    live: List[int] = []
    sizes = {}
    next_slot = 0

    for heap in is_heap:
        if not heap:
            size = int(rng.integers(spec.min_buffer, spec.max_buffer + 1))
            offset, data = _copy_payload(rng, size)
            base = int(rng.integers(0, spec.stack_size - size + 1))
            trace.append(TraceOp(OpKind.STACK_COPY, offset=base + offset, data=data))
            continue

        if not live or rng.random() < spec.alloc_probability:
            if len(live) >= spec.max_live:
                oldest = live.pop(0)
                trace.append(TraceOp(OpKind.FREE, slot=oldest))
            size = int(rng.integers(spec.min_buffer, spec.max_buffer + 1))
            sizes[next_slot] = size
            live.append(next_slot)
            trace.append(TraceOp(OpKind.ALLOC, slot=next_slot, size=size))
            next_slot += 1

        slot = live[int(rng.integers(0, len(live)))]
        offset, data = _copy_payload(rng, sizes[slot])
        trace.append(TraceOp(OpKind.COPY, slot=slot, offset=offset, data=data))

    for slot in live:
        trace.append(TraceOp(OpKind.FREE, slot=slot))
    return trace


def fuzz_trace(rng: np.random.Generator, length: int = 24, violation_probability: float = 0.0,
               max_live: int = 4, max_buffer: int = 32) -> List[TraceOp]:
    """
    Random mix of alloc / copy / read / write / free over a few live slots.

    With violation_probability > 0 some accesses are placed up to 4 bytes
    outside their buffer, and some hit a slot that was already freed.
    """
    trace: List[TraceOp] = []
    live: List[int] = []
    dead: List[int] = []
    sizes = {}
    next_slot = 0
    for _ in range(length):
        roll = rng.random()
        if not live or (roll < 0.2 and len(live) < max_live):
            size = int(rng.integers(1, max_buffer + 1))
            sizes[next_slot] = size
            live.append(next_slot)
            trace.append(TraceOp(OpKind.ALLOC, slot=next_slot, size=size))
            next_slot += 1
            continue
        if roll < 0.3:
            slot = live.pop(int(rng.integers(0, len(live))))
            dead.append(slot)
            trace.append(TraceOp(OpKind.FREE, slot=slot))
            continue

        violate = rng.random() < violation_probability
        if violate and dead and rng.random() < 0.3:
            slot = dead[int(rng.integers(0, len(dead)))]
        else:
            slot = live[int(rng.integers(0, len(live)))]
        size = sizes[slot]
        if roll < 0.6:
            n = int(rng.integers(1, size + 1))
            offset = int(rng.integers(0, size - n + 1))
            if violate:
                offset += int(rng.choice([-1, 1])) * int(rng.integers(1, 5))
            data = rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()
            trace.append(TraceOp(OpKind.COPY, slot=slot, offset=offset, data=data))
        else:
            offset = int(rng.integers(0, size))
            if violate:
                offset = int(rng.choice([-int(rng.integers(1, 5)), size + int(rng.integers(0, 4))]))
            kind = OpKind.WRITE if roll < 0.8 else OpKind.READ
            data = bytes([int(rng.integers(0, 256))]) if kind == OpKind.WRITE else b""
            trace.append(TraceOp(kind, slot=slot, offset=offset, data=data))
    return trace


def count_ops(trace: List[TraceOp], kind: Optional[OpKind] = None):
    """Number of ops of one kind, or a kind -> count dict."""
    if kind is not None:
        return sum(1 for op in trace if op.kind == kind)
    counts = {k: 0 for k in OpKind}
    for op in trace:
        counts[op.kind] += 1
    return counts
