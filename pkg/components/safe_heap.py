"""
Safe-heap runtime over a simulated memory.

Four interchangeable runtime paths share one allocator and one interface
(malloc / free / read / write / copy / read_range / stack_copy):

- BaselineRuntime  - plain malloc/free/memcpy, no checks
- SoftBCRuntime    - tagged pointers, bounds metadata in an in-process side
                     table, every check done by simulated software
- SafeHeapRuntime  - tagged pointers, metadata and checks in the HeapSafe
                     engine (blocking, or non-blocking with deferred
                     exceptions in heapsafe-nb mode)

Every path counts the events it performs in OpCounters; the cost model
turns those counts into cycles and instructions.
"""

import heapq
import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from components.errors import (
    AsyncViolation,
    DoubleFree,
    ForeignPointer,
    HeapSafeError,
    InvalidAddress,
    OutOfBoundsAccess,
    OutOfMemory,
    OutOfTags,
    UnprotectedPointer,
    ZeroSize,
)
from components.heapsafe_engine import (
    EngineConfig,
    HeapSafeEngine,
    MetadataTable,
    ValidationMode,
    hs_free,
    hs_store,
    hs_validate,
)
from components.pointer_tagging import PointerLayout, SafePointer, tag_width_for
from components.rocc_codec import build_hs_free, build_hs_store, build_hs_validate

logger = logging.getLogger(__name__)

DEFAULT_HEAP_BASE = 0x1000
DEFAULT_HEAP_SIZE = 64 * 1024
DEFAULT_STACK_SIZE = 4 * 1024


class RunMode(str, Enum):
    BASELINE = "baseline"
    SOFTBC = "softbc"
    HEAPSAFE = "heapsafe"
    HEAPSAFE_NB = "heapsafe-nb"

    @property
    def uses_engine(self) -> bool:
        return self in (RunMode.HEAPSAFE, RunMode.HEAPSAFE_NB)

    @property
    def engine_mode(self) -> ValidationMode:
        return ValidationMode.NON_BLOCKING if self == RunMode.HEAPSAFE_NB else ValidationMode.BLOCKING


ALL_MODES = tuple(RunMode)


@dataclass(frozen=True)
class RuntimeConfig:
    mode: RunMode = RunMode.HEAPSAFE
    tbi: bool = False
    heap_size: int = DEFAULT_HEAP_SIZE
    heap_base: int = DEFAULT_HEAP_BASE
    stack_size: int = DEFAULT_STACK_SIZE
    hart_id: int = 0
    mt_size: int = 256
    drain_interval: int = 8
    privileged: bool = True
    require_machine_mode: bool = False
    alignment: int = 8

    def __post_init__(self):
        object.__setattr__(self, "mode", RunMode(self.mode))
        tag_width_for(self.mt_size)
        if self.heap_size <= 0 or self.heap_size % self.alignment:
            raise ValueError(f"heapSize must be a positive multiple of {self.alignment}, got {self.heap_size}")
        if self.heap_base % self.alignment:
            raise ValueError(f"heap base {self.heap_base:#x} is not {self.alignment}-byte aligned")
        if self.drain_interval < 1:
            raise ValueError(f"drainInterval must be >= 1, got {self.drain_interval}")

    @property
    def tag_width(self) -> int:
        return tag_width_for(self.mt_size)

    @property
    def effective_tbi(self) -> bool:
        # Top-byte ignore only changes anything on the engine-backed paths.
        return self.tbi and self.mode.uses_engine


@dataclass(frozen=True)
class InstructionProfile:
    """Plain instructions spent by each step of the simulated library."""
    call_overhead: int = 4
    per_byte: int = 1
    allocator: int = 10
    tag_management: int = 2
    extract: int = 1
    make_pointer: int = 1
    # Side-table load stalls: 6 instructions retire over an 8-cycle check.
    soft_check_instructions: int = 6


@dataclass
class OpCounters:
    plain_instructions: int = 0
    soft_bounds_checks: int = 0
    blocking_validates: int = 0
    nb_validates: int = 0
    store_issues: int = 0
    free_issues: int = 0


@dataclass
class Allocation:
    base: int
    size: int
    span: int
    tag: int = 0
    live: bool = True

    @property
    def bound(self) -> int:
        return self.base + self.size


@dataclass(frozen=True)
class Detection:
    issued_at: int
    observed_at: int
    word: int

    @property
    def latency(self) -> int:
        return self.observed_at - self.issued_at


class SimHeap:
    """
    Byte-addressable simulated heap with a first-fit free-list allocator.

    ``allocations`` maps each base address ever handed out to its record
    and doubles as the ground-truth oracle for the tests.
    """

    def __init__(self, size: int = DEFAULT_HEAP_SIZE, base: int = DEFAULT_HEAP_BASE, alignment: int = 8):
        self.base = base
        self.size = size
        self.alignment = alignment
        self.memory = np.zeros(size, dtype=np.uint8)
        self.allocations: Dict[int, Allocation] = {}
        # Sorted, coalesced [start, length] runs.
        self._free: List[List[int]] = [[base, size]]

    @property
    def end(self) -> int:
        return self.base + self.size

    def allocate(self, size: int) -> int:
        span = -(-size // self.alignment) * self.alignment
        for run in self._free:
            if run[1] >= span:
                addr = run[0]
                run[0] += span
                run[1] -= span
                if run[1] == 0:
                    self._free.remove(run)
                self.allocations[addr] = Allocation(addr, size, span)
                logger.debug("allocate %d bytes at %#x", size, addr)
                return addr
        raise OutOfMemory(f"no free run of {span} bytes in the {self.size}-byte heap")

    def release(self, addr: int, forget: bool = False) -> Allocation:
        """Return an allocation's span to the free list and mark it dead."""
        alloc = self.allocations[addr]
        alloc.live = False
        if forget:
            del self.allocations[addr]
        start, length = alloc.base, alloc.span
        idx = 0
        while idx < len(self._free) and self._free[idx][0] < start:
            idx += 1
        self._free.insert(idx, [start, length])
        # Coalesce with the right neighbour, then the left one.
        if idx + 1 < len(self._free) and start + length == self._free[idx + 1][0]:
            self._free[idx][1] += self._free.pop(idx + 1)[1]
        if idx > 0 and self._free[idx - 1][0] + self._free[idx - 1][1] == start:
            self._free[idx - 1][1] += self._free.pop(idx)[1]
        return alloc

    def live_allocations(self) -> List[Allocation]:
        return sorted((a for a in self.allocations.values() if a.live), key=lambda a: a.base)

    def containing(self, addr: int) -> Optional[Allocation]:
        for alloc in self.allocations.values():
            if alloc.live and alloc.base <= addr < alloc.bound:
                return alloc
        return None

    def _offset(self, addr: int, n: int = 1) -> int:
        if addr < self.base or addr + n > self.end:
            raise InvalidAddress(f"[{addr:#x}, {addr + n:#x}) is outside the simulated heap "
                                 f"[{self.base:#x}, {self.end:#x})")
        return addr - self.base

    def load(self, addr: int) -> int:
        return int(self.memory[self._offset(addr)])

    def store(self, addr: int, value: int) -> None:
        self.memory[self._offset(addr)] = value & 0xFF

    def load_range(self, addr: int, n: int) -> bytes:
        off = self._offset(addr, n)
        return self.memory[off:off + n].tobytes()

    def store_range(self, addr: int, data: bytes) -> None:
        off = self._offset(addr, len(data))
        self.memory[off:off + len(data)] = np.frombuffer(bytes(data), dtype=np.uint8)


class TagPool:
    """Process-local pool of free tags; the lowest free tag is drawn first."""

    def __init__(self, tag_width: int):
        self.tag_width = tag_width
        self._heap = list(range(1, 1 << tag_width))
        self._free = set(self._heap)

    def __len__(self) -> int:
        return len(self._free)

    def __contains__(self, tag: int) -> bool:
        return tag in self._free

    def draw(self) -> int:
        if not self._heap:
            raise OutOfTags(f"all {(1 << self.tag_width) - 1} tags are bound to live allocations")
        tag = heapq.heappop(self._heap)
        self._free.discard(tag)
        return tag

    def release(self, tag: int) -> None:
        if tag in self._free or not 0 < tag < (1 << self.tag_width):
            raise ValueError(f"tag {tag:#x} is not bound")
        self._free.add(tag)
        heapq.heappush(self._heap, tag)


class HeapRuntime(ABC):
    mode: RunMode

    def __init__(self, config: RuntimeConfig, profile: Optional[InstructionProfile] = None):
        self.config = config
        self.profile = profile or InstructionProfile()
        self.layout = PointerLayout(config.tag_width)
        self.heap = SimHeap(config.heap_size, config.heap_base, config.alignment)
        self.stack = np.zeros(config.stack_size, dtype=np.uint8)
        self.counters = OpCounters()
        self.detections: List[Detection] = []
        self.op_index = 0

    def _begin(self, drain_point: bool = False) -> int:
        idx = self.op_index
        self.op_index += 1
        return idx

    def _plain(self, n: int) -> None:
        self.counters.plain_instructions += n

    def stack_copy(self, offset: int, data: bytes) -> None:
        """Unprotected copy into the stack-modelled region; same cost in every mode."""
        self._begin()
        n = len(data)
        if offset < 0 or offset + n > len(self.stack):
            raise InvalidAddress(f"stack copy [{offset}, {offset + n}) outside the {len(self.stack)}-byte stack")
        self._plain(self.profile.call_overhead + n * self.profile.per_byte)
        self.stack[offset:offset + n] = np.frombuffer(bytes(data), dtype=np.uint8)

    def drain(self) -> None:
        pass

    def finish(self) -> None:
        self.drain()

    @abstractmethod
    def malloc(self, size: int) -> SafePointer: ...

    @abstractmethod
    def free(self, p: SafePointer) -> None: ...

    @abstractmethod
    def read(self, p: SafePointer) -> int: ...

    @abstractmethod
    def write(self, p: SafePointer, value: int) -> None: ...

    @abstractmethod
    def copy(self, dst: SafePointer, src: bytes) -> None: ...

    @abstractmethod
    def read_range(self, p: SafePointer, n: int) -> bytes: ...


class BaselineRuntime(HeapRuntime):
    """No protection: out-of-bounds writes land in neighbouring memory."""
    mode = RunMode.BASELINE

    def malloc(self, size: int) -> SafePointer:
        self._begin()
        if size <= 0:
            raise ZeroSize("malloc of a non-positive size")
        self._plain(self.profile.call_overhead + self.profile.allocator)
        return self.heap.allocate(size)

    def free(self, p: SafePointer) -> None:
        self._begin()
        self._plain(self.profile.call_overhead + self.profile.allocator)
        alloc = self.heap.allocations.get(p)
        if alloc is None or not alloc.live:
            logger.warning("baseline free of %#x ignored: not a live allocation", p)
            return
        self.heap.release(p)

    def read(self, p: SafePointer) -> int:
        self._begin()
        self._plain(1)
        return self.heap.load(p)

    def write(self, p: SafePointer, value: int) -> None:
        self._begin()
        self._plain(1)
        self.heap.store(p, value)

    def copy(self, dst: SafePointer, src: bytes) -> None:
        self._begin()
        self._plain(self.profile.call_overhead + len(src) * self.profile.per_byte)
        if src:
            self.heap.store_range(dst, src)

    def read_range(self, p: SafePointer, n: int) -> bytes:
        self._begin()
        self._plain(self.profile.call_overhead + n * self.profile.per_byte)
        return self.heap.load_range(p, n) if n else b""


class TaggedRuntime(HeapRuntime):
    """
    Shared library logic for the tagged paths; subclasses decide where the
    metadata lives and how a check is performed.
    """

    def __init__(self, config: RuntimeConfig, profile: Optional[InstructionProfile] = None):
        super().__init__(config, profile)
        self.pool = TagPool(config.tag_width)

    @property
    def _extract_cost(self) -> int:
        return 0 if self.config.effective_tbi else self.profile.extract

    @abstractmethod
    def _register(self, sp: SafePointer, size: int) -> None: ...

    @abstractmethod
    def _unregister(self, sp: SafePointer) -> None: ...

    @abstractmethod
    def _check(self, sp: SafePointer, op_index: int) -> bool:
        """Issue one bounds check; returns True when a violation is known now."""

    def _violation(self, sp: SafePointer, op_index: int, what: str) -> None:
        self.detections.append(Detection(op_index, op_index, sp))
        raise OutOfBoundsAccess(f"{what} through {sp:#018x} is out of bounds (op {op_index})",
                                word=sp, op_index=op_index)

    def malloc(self, size: int) -> SafePointer:
        self._begin(drain_point=True)
        if size <= 0:
            raise ZeroSize("safe_malloc of a non-positive size")
        tag = self.pool.draw()
        try:
            base = self.heap.allocate(size)
        except OutOfMemory:
            self.pool.release(tag)
            raise
        sp = self.layout.make(tag, base)
        self._plain(self.profile.call_overhead + self.profile.allocator
                    + self.profile.tag_management + self.profile.make_pointer)
        try:
            self._register(sp, size)
        except HeapSafeError:
            self.heap.release(base, forget=True)
            self.pool.release(tag)
            raise
        self.heap.allocations[base].tag = tag
        return sp

    def free(self, sp: SafePointer) -> None:
        self._begin()
        tag = self.layout.tag(sp)
        if tag == 0:
            raise UnprotectedPointer(f"safe_free of unprotected pointer {sp:#018x}")
        raw = self.layout.raw(sp)
        alloc = self.heap.allocations.get(raw)
        if alloc is None:
            raise ForeignPointer(f"{raw:#x} is not the base of an allocation")
        if not alloc.live or alloc.tag != tag:
            raise DoubleFree(f"allocation at {raw:#x} (tag {tag:#x}) was already freed")
        self._plain(self.profile.call_overhead + self._extract_cost
                    + self.profile.allocator + self.profile.tag_management)
        self._unregister(sp)
        self.heap.release(raw)
        self.pool.release(tag)

    def read(self, sp: SafePointer) -> int:
        idx = self._begin()
        if not self.layout.is_protected(sp):
            self._plain(self.profile.call_overhead + 1)
            return self.heap.load(sp)
        self._plain(self.profile.call_overhead + self._extract_cost + 1)
        if self._check(sp, idx):
            self._violation(sp, idx, "read")
        return self.heap.load(self.layout.raw(sp))

    def write(self, sp: SafePointer, value: int) -> None:
        idx = self._begin()
        if not self.layout.is_protected(sp):
            self._plain(self.profile.call_overhead + 1)
            self.heap.store(sp, value)
            return
        self._plain(self.profile.call_overhead + self._extract_cost + 1)
        if self._check(sp, idx):
            self._violation(sp, idx, "write")
        self.heap.store(self.layout.raw(sp), value)

    def _check_range(self, sp: SafePointer, n: int, idx: int, what: str) -> None:
        # Contiguous allocations: checking the two endpoints covers the range.
        first = self._check(sp, idx)
        last = self._check(self.layout.offset(sp, n - 1), idx)
        if first:
            self._violation(sp, idx, what)
        if last:
            self._violation(self.layout.offset(sp, n - 1), idx, what)

    def copy(self, dst: SafePointer, src: bytes) -> None:
        idx = self._begin()
        if not self.layout.is_protected(dst):
            raise UnprotectedPointer(f"safe_copy to unprotected pointer {dst:#018x}")
        n = len(src)
        if n == 0:
            return
        self._plain(self.profile.call_overhead + self._extract_cost + n * self.profile.per_byte)
        self._check_range(dst, n, idx, f"copy of {n} bytes")
        self.heap.store_range(self.layout.raw(dst), src)

    def read_range(self, sp: SafePointer, n: int) -> bytes:
        idx = self._begin()
        if n == 0:
            return b""
        if not self.layout.is_protected(sp):
            self._plain(self.profile.call_overhead + n * self.profile.per_byte)
            return self.heap.load_range(sp, n)
        self._plain(self.profile.call_overhead + self._extract_cost + n * self.profile.per_byte)
        self._check_range(sp, n, idx, f"read of {n} bytes")
        return self.heap.load_range(self.layout.raw(sp), n)


class SoftBCRuntime(TaggedRuntime):
    """Software bounds checking against an in-process side table."""
    mode = RunMode.SOFTBC

    def __init__(self, config: RuntimeConfig, profile: Optional[InstructionProfile] = None):
        super().__init__(config, profile)
        self.side_table = MetadataTable(config.mt_size, config.tag_width)

    def _register(self, sp: SafePointer, size: int) -> None:
        self.counters.soft_bounds_checks += 1
        hs_store(self.side_table, sp, size)

    def _unregister(self, sp: SafePointer) -> None:
        self.counters.soft_bounds_checks += 1
        hs_free(self.side_table, sp)

    def _check(self, sp: SafePointer, op_index: int) -> bool:
        self.counters.soft_bounds_checks += 1
        return hs_validate(self.side_table, sp)


class SafeHeapRuntime(TaggedRuntime):
    """
    The HeapSafe library: metadata and checks are delegated to the engine
    through HS_STORE / HS_VALIDATE / HS_FREE commands.
    """

    def __init__(self, config: RuntimeConfig, engine: Optional[HeapSafeEngine] = None,
                 profile: Optional[InstructionProfile] = None):
        if not config.mode.uses_engine:
            raise ValueError(f"SafeHeapRuntime cannot run in {config.mode.value} mode")
        super().__init__(config, profile)
        if engine is None:
            engine = HeapSafeEngine(EngineConfig(config.mt_size, config.mode.engine_mode, config.hart_id,
                                                  config.require_machine_mode))
        if engine.config.mode != config.mode.engine_mode:
            raise ValueError(f"{config.mode.value} needs a {config.mode.engine_mode.value} engine, "
                             f"got {engine.config.mode.value}")
        if engine.table.layout.tag_width != config.tag_width:
            raise ValueError(f"engine parses {engine.table.layout.tag_width}-bit tags, "
                             f"runtime uses {config.tag_width}")
        self.engine = engine
        self.mode = config.mode
        self._since_drain = 0
        # Engine command sequence -> op index that issued it.
        self._issued: Dict[int, int] = {}

    @property
    def nonblocking(self) -> bool:
        return self.mode == RunMode.HEAPSAFE_NB

    def _begin(self, drain_point: bool = False) -> int:
        if self.nonblocking and (drain_point or self._since_drain >= self.config.drain_interval):
            self._drain(self.op_index)
        self._since_drain += 1
        return super()._begin()

    def _drain(self, observed_at: int) -> None:
        self._since_drain = 0
        pending = self.engine.drain_exceptions()
        issued, self._issued = self._issued, {}
        if not pending:
            return
        found = [Detection(issued.get(e.command_sequence, observed_at), observed_at, e.offending_word)
                 for e in pending]
        self.detections.extend(found)
        raise AsyncViolation(
            f"{len(found)} out-of-bounds access(es) reported by hart {self.engine.hart_id} "
            f"(first at op {found[0].issued_at}, observed at op {observed_at})",
            found, observed_at)

    def drain(self) -> None:
        if self.nonblocking:
            self._drain(self.op_index)

    def _register(self, sp: SafePointer, size: int) -> None:
        self.counters.store_issues += 1
        self.engine.handle(build_hs_store(sp, size, self.config.hart_id, self.config.privileged))
        fault = self.engine.poll_store_fault()
        if fault is not None:
            raise fault

    def _unregister(self, sp: SafePointer) -> None:
        self.counters.free_issues += 1
        self.engine.handle(build_hs_free(sp, self.config.hart_id, self.config.privileged))

    def _check(self, sp: SafePointer, op_index: int) -> bool:
        cmd = build_hs_validate(sp, self.config.hart_id, self.config.privileged)
        if self.nonblocking:
            self.counters.nb_validates += 1
            self._issued[self.engine.next_sequence] = op_index
            self.engine.handle(cmd)
            return False
        self.counters.blocking_validates += 1
        response = self.engine.handle(cmd)
        return bool(response is not None and response.data)


def make_runtime(config: RuntimeConfig, engine: Optional[HeapSafeEngine] = None,
                 profile: Optional[InstructionProfile] = None) -> HeapRuntime:
    if config.mode == RunMode.BASELINE:
        return BaselineRuntime(config, profile)
    if config.mode == RunMode.SOFTBC:
        return SoftBCRuntime(config, profile)
    return SafeHeapRuntime(config, engine, profile)
