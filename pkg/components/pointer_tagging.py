"""
Tagged safe-pointer representation.

A safe pointer is a plain 64-bit word: the top ``tag_width`` bits carry the
tag that keys the engine's metadata row, the remaining bits carry the raw
address. Tag 0 marks an unprotected pointer, so an untagged address is its
own safe pointer (backwards compatibility is bit-level).

Tag propagation follows the usual pointer operations:

    allocation     sp = make_safe(tag, base)
    assignment     sp2 = sp1                  (the word is copied as is)
    arithmetic     sp2 = add_offset(sp1, +/-off)
    type cast      sp2 = reinterpret(sp1)

Storing a safe pointer in memory and loading it back is a plain 64-bit
store/load, so the tag survives it unchanged.
"""

from dataclasses import dataclass

from components.errors import AddressRangeOverflow, RawAddressTooHigh

WORD_BITS = 64
WORD_MASK = (1 << WORD_BITS) - 1
DEFAULT_TAG_WIDTH = 8
MAX_TAG_WIDTH = 16

# A safe pointer is an int in [0, 2**64); the alias documents intent.
SafePointer = int


def tag_width_for(mt_size: int) -> int:
    """
    Derive the tag width from the metadata table size.

    Args:
        mt_size: Number of rows in the metadata table (power of two)

    Returns:
        log2(mt_size)
    """
    if mt_size < 2 or mt_size & (mt_size - 1):
        raise ValueError(f"mtSize must be a power of two >= 2, got {mt_size}")
    bits = mt_size.bit_length() - 1
    if bits > MAX_TAG_WIDTH:
        raise ValueError(f"mtSize {mt_size} needs a {bits}-bit tag; at most {MAX_TAG_WIDTH} bits are supported")
    return bits


def _check_width(tag_width: int) -> None:
    if not 1 <= tag_width <= MAX_TAG_WIDTH:
        raise ValueError(f"tag width must be in [1, {MAX_TAG_WIDTH}], got {tag_width}")


def raw_mask(tag_width: int = DEFAULT_TAG_WIDTH) -> int:
    return (1 << (WORD_BITS - tag_width)) - 1


def make_safe(tag: int, raw: int, tag_width: int = DEFAULT_TAG_WIDTH) -> SafePointer:
    """Pack ``tag`` into the top bits above ``raw``."""
    _check_width(tag_width)
    if not 0 <= tag < (1 << tag_width):
        raise ValueError(f"tag {tag:#x} does not fit in {tag_width} bits")
    if raw < 0 or raw & ~raw_mask(tag_width):
        raise RawAddressTooHigh(f"raw address {raw:#x} collides with the {tag_width}-bit tag field")
    return (tag << (WORD_BITS - tag_width)) | raw


def tag_of(p: SafePointer, tag_width: int = DEFAULT_TAG_WIDTH) -> int:
    return (p & WORD_MASK) >> (WORD_BITS - tag_width)


def raw_of(p: SafePointer, tag_width: int = DEFAULT_TAG_WIDTH) -> int:
    return p & raw_mask(tag_width)


def add_offset(p: SafePointer, off: int, tag_width: int = DEFAULT_TAG_WIDTH) -> SafePointer:
    """
    Pointer arithmetic that keeps the tag.

    Raises:
        AddressRangeOverflow: if the new raw address would spill into the tag
            field or go below zero
    """
    raw = raw_of(p, tag_width) + off
    if raw < 0 or raw > raw_mask(tag_width):
        raise AddressRangeOverflow(
            f"{p:#018x} {'+' if off >= 0 else '-'} {abs(off):#x} leaves the {WORD_BITS - tag_width}-bit address range")
    return (p & ~raw_mask(tag_width) & WORD_MASK) | raw


def reinterpret(p: SafePointer) -> SafePointer:
    # A cast never touches the bits.
    return p


def is_protected(p: SafePointer, tag_width: int = DEFAULT_TAG_WIDTH) -> bool:
    return tag_of(p, tag_width) != 0


def from_integer(value: int, tag_width: int = DEFAULT_TAG_WIDTH) -> SafePointer:
    """A pointer created from an integer (or null) is unprotected: tag 0."""
    return make_safe(0, value, tag_width)


def compare(a: SafePointer, b: SafePointer, tag_width: int = DEFAULT_TAG_WIDTH) -> int:
    """Order two pointers by raw address; returns -1, 0 or 1."""
    ra, rb = raw_of(a, tag_width), raw_of(b, tag_width)
    return (ra > rb) - (ra < rb)


@dataclass(frozen=True)
class PointerLayout:
    """
    Bit allocation shared by the runtime and the engine's metadata parser.
    """
    tag_width: int = DEFAULT_TAG_WIDTH

    def __post_init__(self):
        _check_width(self.tag_width)

    @classmethod
    def for_table(cls, mt_size: int) -> "PointerLayout":
        return cls(tag_width_for(mt_size))

    @property
    def raw_mask(self) -> int:
        return raw_mask(self.tag_width)

    @property
    def max_raw(self) -> int:
        return raw_mask(self.tag_width)

    @property
    def max_tag(self) -> int:
        return (1 << self.tag_width) - 1

    def make(self, tag: int, raw: int) -> SafePointer:
        return make_safe(tag, raw, self.tag_width)

    def tag(self, p: SafePointer) -> int:
        return tag_of(p, self.tag_width)

    def raw(self, p: SafePointer) -> int:
        return raw_of(p, self.tag_width)

    def offset(self, p: SafePointer, off: int) -> SafePointer:
        return add_offset(p, off, self.tag_width)

    def is_protected(self, p: SafePointer) -> bool:
        return is_protected(p, self.tag_width)
