"""
Custom coprocessor instruction codec and the command/response contract.

Bit layout of the 32-bit instruction word (MSB -> LSB):

    funct7[31:25] rs2[24:20] rs1[19:15] xd[14] xs1[13] xs2[12] rd[11:7] opcode[6:0]

All HeapSafe instructions use the custom0 opcode and select their function
through funct7. Register indices are symbolic: the operand values travel in
the command next to the instruction.
"""

from dataclasses import dataclass
from enum import IntEnum
from typing import Tuple

from components.errors import FieldOutOfRange, UnknownFunction, UnknownOpcode, ZeroSize
from components.pointer_tagging import WORD_MASK, SafePointer

CUSTOM0 = 0b0001011


class Funct7(IntEnum):
    HS_STORE = 0b0000000
    HS_VALIDATE = 0b0000001
    HS_FREE = 0b0000011


# (name, low bit, width)
FIELDS: Tuple[Tuple[str, int, int], ...] = (
    ("opcode", 0, 7),
    ("rd", 7, 5),
    ("xs2", 12, 1),
    ("xs1", 13, 1),
    ("xd", 14, 1),
    ("rs1", 15, 5),
    ("rs2", 20, 5),
    ("funct7", 25, 7),
)

# Default symbolic registers (a0/a1).
REG_PTR = 10
REG_SIZE = 11
REG_RESULT = 11


@dataclass(frozen=True)
class RoccInstruction:
    funct7: int
    rs2: int = 0
    rs1: int = 0
    xd: int = 0
    xs1: int = 0
    xs2: int = 0
    rd: int = 0
    opcode: int = CUSTOM0

    @property
    def expects_response(self) -> bool:
        # The core only waits when xd is set and rd is a real register.
        return bool(self.xd) and self.rd != 0


def encode(inst: RoccInstruction) -> int:
    """
    Pack an instruction into its 32-bit word.

    Raises:
        FieldOutOfRange: if a field does not fit its bit slot
    """
    word = 0
    for name, low, width in FIELDS:
        value = getattr(inst, name)
        if not 0 <= value < (1 << width):
            raise FieldOutOfRange(f"{name}={value} does not fit in {width} bits")
        word |= value << low
    return word


def decode(word: int) -> RoccInstruction:
    """
    Unpack a 32-bit word and check that it is a HeapSafe instruction.

    Raises:
        FieldOutOfRange: word wider than 32 bits
        UnknownOpcode: opcode is not custom0
        UnknownFunction: funct7 is not one of the HeapSafe functions
    """
    if not 0 <= word <= 0xFFFF_FFFF:
        raise FieldOutOfRange(f"instruction word {word:#x} is not 32 bits")
    fields = {name: (word >> low) & ((1 << width) - 1) for name, low, width in FIELDS}
    if fields["opcode"] != CUSTOM0:
        raise UnknownOpcode(f"opcode {fields['opcode']:#09b} is not custom0")
    inst = RoccInstruction(**fields)
    function_of(inst)
    return inst


def function_of(inst: RoccInstruction) -> Funct7:
    try:
        return Funct7(inst.funct7)
    except ValueError:
        raise UnknownFunction(f"funct7 {inst.funct7:#09b} is not a HeapSafe function") from None


@dataclass(frozen=True)
class EngineCommand:
    """An instruction plus the register values it reads (RoCC request)."""
    inst: RoccInstruction
    rs1_value: int = 0
    rs2_value: int = 0
    hart_id: int = 0
    privileged: bool = True

    @property
    def word(self) -> int:
        return encode(self.inst)

    @property
    def function(self) -> Funct7:
        return function_of(self.inst)


@dataclass(frozen=True)
class EngineResponse:
    """Value written back to ``rd`` (RoCC response)."""
    rd: int
    data: int


def build_hs_store(sp: SafePointer, size: int, hart_id: int = 0, privileged: bool = True) -> EngineCommand:
    if size <= 0:
        raise ZeroSize("HS_STORE needs a positive size")
    inst = RoccInstruction(funct7=Funct7.HS_STORE, rs1=REG_PTR, rs2=REG_SIZE, xs1=1, xs2=1, xd=0)
    return EngineCommand(inst, rs1_value=sp & WORD_MASK, rs2_value=size & WORD_MASK,
                         hart_id=hart_id, privileged=privileged)


def build_hs_validate(sp: SafePointer, hart_id: int = 0, privileged: bool = True) -> EngineCommand:
    inst = RoccInstruction(funct7=Funct7.HS_VALIDATE, rs1=REG_PTR, rd=REG_RESULT, xs1=1, xd=1)
    return EngineCommand(inst, rs1_value=sp & WORD_MASK, hart_id=hart_id, privileged=privileged)


def build_hs_free(sp: SafePointer, hart_id: int = 0, privileged: bool = True) -> EngineCommand:
    inst = RoccInstruction(funct7=Funct7.HS_FREE, rs1=REG_PTR, xs1=1, xd=0)
    return EngineCommand(inst, rs1_value=sp & WORD_MASK, hart_id=hart_id, privileged=privileged)


def format_command(cmd: EngineCommand) -> str:
    """Hex columns used by trace logs: word rs1 rs2."""
    return f"{cmd.word:08x} {cmd.rs1_value:016x} {cmd.rs2_value:016x}"
