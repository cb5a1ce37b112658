"""
Exception taxonomy for the HeapSafe simulator.

Every error raised by the pointer codec, the instruction codec, the engine,
the safe-heap runtime and the configuration layer derives from HeapSafeError,
so callers (the CLI in particular) can map failures to exit statuses with a
single except clause.
"""

from typing import List, Optional


class HeapSafeError(Exception):
    """Base class for all simulator errors."""


# Pointer tagging ---------------------------------------------------------

class PointerError(HeapSafeError):
    pass


class RawAddressTooHigh(PointerError):
    """The raw address overlaps the tag field."""


class AddressRangeOverflow(PointerError):
    """Pointer arithmetic left the raw-address range."""


# Instruction codec -------------------------------------------------------

class CodecError(HeapSafeError):
    pass


class FieldOutOfRange(CodecError):
    pass


class UnknownOpcode(CodecError):
    pass


class UnknownFunction(CodecError):
    pass


# Engine ------------------------------------------------------------------

class EngineError(HeapSafeError):
    pass


class IllegalInstruction(EngineError):
    pass


class PrivilegeViolation(EngineError):
    pass


class UnknownHart(EngineError):
    pass


class ZeroTagStore(EngineError):
    pass


class DuplicateTag(EngineError):
    pass


# Allocation --------------------------------------------------------------

class AllocationFailure(HeapSafeError):
    pass


class OutOfTags(AllocationFailure):
    pass


class OutOfMemory(AllocationFailure):
    pass


class TableFull(AllocationFailure):
    pass


# Heap usage --------------------------------------------------------------

class HeapUsageError(HeapSafeError):
    pass


class ZeroSize(HeapUsageError):
    pass


class DoubleFree(HeapUsageError):
    pass


class ForeignPointer(HeapUsageError):
    pass


class UnprotectedPointer(HeapUsageError):
    pass


class InvalidAddress(HeapUsageError):
    pass


# Violations --------------------------------------------------------------

class OutOfBoundsAccess(HeapSafeError):
    """A bounds violation was detected on a protected pointer."""

    def __init__(self, message: str, word: int = 0, op_index: Optional[int] = None):
        super().__init__(message)
        self.word = word
        self.op_index = op_index


class AsyncViolation(OutOfBoundsAccess):
    """Raised by the non-blocking exception handler at a drain point."""

    def __init__(self, message: str, detections: List, observed_at: int):
        first = detections[0]
        super().__init__(message, word=first.word, op_index=first.issued_at)
        self.detections = detections
        self.observed_at = observed_at

    @property
    def latency(self) -> int:
        return max(d.latency for d in self.detections)


# Benchmarks --------------------------------------------------------------

class RunAborted(HeapSafeError):
    """A benchmark cell stopped on an error that is not a detected violation."""


# Configuration -----------------------------------------------------------

class ConfigParseError(HeapSafeError):
    def __init__(self, message: str, key: Optional[str] = None,
                 line: Optional[int] = None, path: Optional[str] = None):
        location = ""
        if path:
            location = f"{path}"
            if line:
                location += f":{line}"
            location += ": "
        if key:
            message = f"{message} (key '{key}')"
        super().__init__(location + message)
        self.key = key
        self.line = line
        self.path = path
