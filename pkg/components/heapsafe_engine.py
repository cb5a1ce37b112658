"""
HeapSafe coprocessor model.

The engine has three parts:

1. Metadata parser - splits the safe pointer on rs1 into tag and raw address
2. Metadata table  - fixed-size content-addressable table of
                     {tag, base, bound, valid} rows searched by tag
3. Validation      - isOOB = (ptr < base) || (ptr >= bound)

Commands arrive as EngineCommand values and are applied in issue order.
In blocking mode HS_VALIDATE answers with an EngineResponse carrying isOOB;
in non-blocking mode it answers nothing and an out-of-bounds verdict is
queued as an AsyncException for the core to drain.
"""

import logging
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Deque, Dict, Iterable, List, Optional, TextIO

from components.errors import (
    DuplicateTag,
    HeapSafeError,
    IllegalInstruction,
    PrivilegeViolation,
    TableFull,
    UnknownFunction,
    UnknownHart,
    ZeroSize,
    ZeroTagStore,
)
from components.pointer_tagging import PointerLayout, SafePointer, tag_width_for
from components.rocc_codec import (
    EngineCommand,
    EngineResponse,
    Funct7,
    format_command,
    function_of,
)

logger = logging.getLogger(__name__)


class ValidationMode(str, Enum):
    BLOCKING = "blocking"
    NON_BLOCKING = "non-blocking"


@dataclass
class MetadataRow:
    tag: int = 0
    base: int = 0
    bound: int = 0
    valid: bool = False


class MetadataTable:
    """
    Fixed-length table of metadata rows.

    The hardware searches all rows in parallel; here a tag -> row index map
    over the valid rows plays that role. Tags are unique among valid rows,
    so the search order never matters.
    """

    def __init__(self, mt_size: int, tag_width: Optional[int] = None):
        if mt_size < 2 or mt_size & (mt_size - 1):
            raise ValueError(f"mtSize must be a power of two >= 2, got {mt_size}")
        self.mt_size = mt_size
        self.layout = PointerLayout(tag_width if tag_width is not None else tag_width_for(mt_size))
        self.rows: List[MetadataRow] = [MetadataRow() for _ in range(mt_size)]
        self._index: Dict[int, int] = {}

    def __len__(self) -> int:
        return self.mt_size

    @property
    def occupancy(self) -> int:
        return len(self._index)

    def lookup(self, tag: int) -> Optional[MetadataRow]:
        idx = self._index.get(tag)
        return None if idx is None else self.rows[idx]

    def _free_row(self) -> Optional[int]:
        # Lowest-index invalid row.
        for idx, row in enumerate(self.rows):
            if not row.valid:
                return idx
        return None

    def reset(self) -> None:
        for row in self.rows:
            row.valid = False
        self._index.clear()


def hs_store(table: MetadataTable, sp: SafePointer, size: int) -> MetadataRow:
    """
    Write the metadata for a new heap buffer: Bound = raw_pointer + size.

    Raises:
        ZeroTagStore: tag 0 is reserved for unprotected pointers
        ZeroSize: size is not positive
        DuplicateTag: a valid row already holds the tag
        TableFull: no invalid row is left
    """
    tag, raw = table.layout.tag(sp), table.layout.raw(sp)
    if tag == 0:
        raise ZeroTagStore(f"cannot store metadata for unprotected pointer {sp:#018x}")
    if size <= 0:
        raise ZeroSize("HS_STORE with a non-positive size")
    if tag in table._index:
        raise DuplicateTag(f"tag {tag:#x} already has a valid row")
    idx = table._free_row()
    if idx is None:
        raise TableFull(f"all {table.mt_size} metadata rows are valid")
    row = table.rows[idx]
    row.tag, row.base, row.bound, row.valid = tag, raw, raw + size, True
    table._index[tag] = idx
    return row


def hs_validate(table: MetadataTable, sp: SafePointer) -> bool:
    """
    Bounds check of a pointer against its row.

    Returns:
        isOOB. Tag 0 is never validated (False). A tag without a valid row
        is out of bounds, which is how a dangling pointer is caught.
    """
    tag, raw = table.layout.tag(sp), table.layout.raw(sp)
    if tag == 0:
        return False
    row = table.lookup(tag)
    if row is None:
        return True
    return raw < row.base or raw >= row.bound


def hs_free(table: MetadataTable, sp: SafePointer) -> None:
    """Invalidate the row for the pointer's tag; the row contents stay."""
    tag = table.layout.tag(sp)
    idx = table._index.pop(tag, None)
    if idx is not None:
        table.rows[idx].valid = False


@dataclass(frozen=True)
class EngineConfig:
    mt_size: int = 256
    mode: ValidationMode = ValidationMode.BLOCKING
    hart_id: int = 0
    require_machine_mode: bool = False

    def __post_init__(self):
        tag_width_for(self.mt_size)
        object.__setattr__(self, "mode", ValidationMode(self.mode))

    @property
    def tag_width(self) -> int:
        return tag_width_for(self.mt_size)


@dataclass(frozen=True)
class AsyncException:
    hart_id: int
    offending_word: int
    command_sequence: int


@dataclass(frozen=True)
class TraceRecord:
    sequence: int
    hart_id: int
    command: EngineCommand
    outcome: str

    def format(self) -> str:
        return f"{self.sequence} {self.hart_id} {format_command(self.command)} {self.outcome}"


class TraceLog:
    """One record per command; optionally mirrored to a text sink."""

    def __init__(self, sink: Optional[TextIO] = None):
        self.records: List[TraceRecord] = []
        self.sink = sink

    def append(self, record: TraceRecord) -> None:
        self.records.append(record)
        if self.sink is not None:
            self.sink.write(record.format() + "\n")

    def verdicts(self) -> List[str]:
        return [r.outcome for r in self.records if r.command.inst.funct7 == Funct7.HS_VALIDATE]


class HeapSafeEngine:
    def __init__(self, config: Optional[EngineConfig] = None, trace: Optional[TraceLog] = None,
                 tag_width: Optional[int] = None):
        self.config = config or EngineConfig()
        self.table = MetadataTable(self.config.mt_size, tag_width)
        self.trace = trace
        self._exceptions: Deque[AsyncException] = deque()
        self._sequence = 0
        self._store_fault: Optional[HeapSafeError] = None

    @property
    def hart_id(self) -> int:
        return self.config.hart_id

    @property
    def blocking(self) -> bool:
        return self.config.mode == ValidationMode.BLOCKING

    @property
    def pending_exceptions(self) -> int:
        return len(self._exceptions)

    @property
    def next_sequence(self) -> int:
        return self._sequence

    def handle(self, cmd: EngineCommand) -> Optional[EngineResponse]:
        """
        Apply one command.

        Returns:
            EngineResponse for a blocking HS_VALIDATE, otherwise None

        Raises:
            IllegalInstruction: funct7 is not a HeapSafe function
            PrivilegeViolation: machine mode is required and the command
                was not issued in it
        """
        seq = self._sequence
        self._sequence += 1
        try:
            function = function_of(cmd.inst)
        except UnknownFunction as e:
            self._record(seq, cmd, "fault:IllegalInstruction")
            raise IllegalInstruction(str(e)) from None
        if self.config.require_machine_mode and not cmd.privileged:
            self._record(seq, cmd, "fault:PrivilegeViolation")
            raise PrivilegeViolation(f"{function.name} issued outside machine mode on hart {cmd.hart_id}")

        logger.debug("hart %d seq %d %s rs1=%#x rs2=%#x", self.hart_id, seq, function.name,
                     cmd.rs1_value, cmd.rs2_value)

        if function == Funct7.HS_STORE:
            try:
                hs_store(self.table, cmd.rs1_value, cmd.rs2_value)
            except (TableFull, DuplicateTag, ZeroTagStore, ZeroSize) as e:
                # Non-blocking: nothing goes back to the core, the fault is latched.
                logger.warning("hart %d: HS_STORE fault: %s", self.hart_id, e)
                self._store_fault = e
                self._record(seq, cmd, f"fault:{type(e).__name__}")
                return None
            self._record(seq, cmd, "-")
            return None

        if function == Funct7.HS_FREE:
            hs_free(self.table, cmd.rs1_value)
            self._record(seq, cmd, "-")
            return None

        is_oob = hs_validate(self.table, cmd.rs1_value)
        if self.blocking:
            self._record(seq, cmd, "oob" if is_oob else "ok")
            if cmd.inst.expects_response:
                return EngineResponse(rd=cmd.inst.rd, data=int(is_oob))
            return None
        if is_oob:
            self._exceptions.append(AsyncException(self.hart_id, cmd.rs1_value, seq))
            self._record(seq, cmd, "exc")
        else:
            self._record(seq, cmd, "ok")
        return None

    def drain_exceptions(self) -> List[AsyncException]:
        drained = list(self._exceptions)
        self._exceptions.clear()
        return drained

    def poll_store_fault(self) -> Optional[HeapSafeError]:
        fault, self._store_fault = self._store_fault, None
        return fault

    def _record(self, seq: int, cmd: EngineCommand, outcome: str) -> None:
        if self.trace is not None:
            self.trace.append(TraceRecord(seq, self.hart_id, cmd, outcome))


class EngineFleet:
    """One engine per hart; engines share no state."""

    def __init__(self, engines: Iterable[HeapSafeEngine]):
        self._engines: Dict[int, HeapSafeEngine] = {}
        for engine in engines:
            if engine.hart_id in self._engines:
                raise ValueError(f"duplicate hartId {engine.hart_id}")
            self._engines[engine.hart_id] = engine

    def __len__(self) -> int:
        return len(self._engines)

    @property
    def hart_ids(self) -> List[int]:
        return sorted(self._engines)

    def select_engine(self, hart_id: int) -> HeapSafeEngine:
        try:
            return self._engines[hart_id]
        except KeyError:
            raise UnknownHart(f"no HeapSafe engine for hart {hart_id}") from None

    def handle(self, cmd: EngineCommand) -> Optional[EngineResponse]:
        return self.select_engine(cmd.hart_id).handle(cmd)

    def drain_exceptions(self, hart_id: int) -> List[AsyncException]:
        return self.select_engine(hart_id).drain_exceptions()


def select_engine(fleet: EngineFleet, hart_id: int) -> HeapSafeEngine:
    return fleet.select_engine(hart_id)


def build_fleet(n: int = 1, mt_size: int = 256, mode: ValidationMode = ValidationMode.BLOCKING,
                require_machine_mode: bool = False, trace: Optional[TraceLog] = None) -> EngineFleet:
    """Instantiate ``n`` engines bound to harts 0..n-1."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return EngineFleet(
        HeapSafeEngine(EngineConfig(mt_size, mode, hart_id, require_machine_mode), trace=trace)
        for hart_id in range(n)
    )
