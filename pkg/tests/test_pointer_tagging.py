import pytest
from hypothesis import given
from hypothesis import strategies as st

from components.errors import AddressRangeOverflow, RawAddressTooHigh
from components.pointer_tagging import (
    PointerLayout,
    add_offset,
    compare,
    from_integer,
    is_protected,
    make_safe,
    raw_mask,
    raw_of,
    reinterpret,
    tag_of,
    tag_width_for,
)

widths = st.integers(min_value=1, max_value=16)


@given(data=st.data(), tw=widths)
def test_tag_and_raw_roundtrip(data, tw):
    tag = data.draw(st.integers(0, (1 << tw) - 1))
    raw = data.draw(st.integers(0, raw_mask(tw)))
    p = make_safe(tag, raw, tw)
    assert tag_of(p, tw) == tag
    assert raw_of(p, tw) == raw
    assert 0 <= p < 1 << 64


def test_packing_example():
    assert make_safe(0x05, 0x1000) == 0x0500_0000_0000_1000
    assert tag_of(0x0500_0000_0000_1000) == 0x05
    assert raw_of(0x0500_0000_0000_1000) == 0x1000


def test_tag_zero_is_the_plain_address():
    assert make_safe(0, 0x1234) == 0x1234
    assert not is_protected(0x1234)
    assert from_integer(0xdead) == 0xdead
    assert tag_of(from_integer(0)) == 0


def test_raw_that_overlaps_the_tag_field_is_rejected():
    with pytest.raises(RawAddressTooHigh):
        make_safe(1, 1 << 56)
    with pytest.raises(ValueError):
        make_safe(256, 0x10)


@given(data=st.data(), tw=widths)
def test_offset_preserves_tag(data, tw):
    tag = data.draw(st.integers(1, (1 << tw) - 1))
    raw = data.draw(st.integers(0, 1 << 20))
    off = data.draw(st.integers(-raw, 1 << 20))
    q = add_offset(make_safe(tag, raw, tw), off, tw)
    assert tag_of(q, tw) == tag
    assert raw_of(q, tw) == raw + off


@given(raw=st.integers(0, 1 << 30), a=st.integers(0, 1 << 16), b=st.integers(0, 1 << 16))
def test_offsets_compose(raw, a, b):
    p = make_safe(7, raw)
    assert add_offset(add_offset(p, a), b) == add_offset(p, a + b)
    assert add_offset(add_offset(p, a), -a) == p


def test_offset_out_of_range():
    p = make_safe(3, 0x10)
    with pytest.raises(AddressRangeOverflow):
        add_offset(p, -0x11)
    with pytest.raises(AddressRangeOverflow):
        add_offset(make_safe(3, raw_mask(8)), 1)


def test_cast_and_assignment_keep_the_word():
    p = make_safe(9, 0x2000)
    alias = p
    assert reinterpret(p) == p
    assert tag_of(alias) == 9


def test_compare_uses_raw_addresses():
    low = make_safe(200, 0x1000)
    high = make_safe(1, 0x2000)
    assert compare(low, high) == -1
    assert compare(high, low) == 1
    assert compare(make_safe(4, 0x1000), make_safe(5, 0x1000)) == 0


@pytest.mark.parametrize("mt_size, expected", [(2, 1), (16, 4), (256, 8), (1 << 16, 16)])
def test_tag_width_for(mt_size, expected):
    assert tag_width_for(mt_size) == expected
    assert PointerLayout.for_table(mt_size).tag_width == expected


@pytest.mark.parametrize("mt_size", [0, 1, 3, 100, 1 << 17])
def test_tag_width_for_rejects(mt_size):
    with pytest.raises(ValueError):
        tag_width_for(mt_size)


def test_layout_limits():
    layout = PointerLayout(4)
    assert layout.max_tag == 15
    assert layout.max_raw == (1 << 60) - 1
    p = layout.make(15, 0x40)
    assert layout.tag(p) == 15 and layout.raw(p) == 0x40
    assert layout.is_protected(p)
    assert layout.raw(layout.offset(p, 8)) == 0x48
