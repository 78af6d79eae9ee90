"""Tagged memory: granules, serialization disjointness, snapshots.

Includes the exhaustive BRR-vs-capability marker disjointness check over
the full 6-bit permission space (the serialization half of the
spill/restore round-trip guarantee).
"""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blindsim import caps
from blindsim.caps import PERM_ALL, Capability, make_root
from blindsim.memory import (
    BRR, BRR_MARK, Memory, MisalignedGranule, SNAPSHOT_MAGIC,
    deserialize_granule, serialize_brr, serialize_cap,
)


def mem64k() -> Memory:
    return Memory(1 << 16)


# -- data plane -------------------------------------------------------------

def test_data_read_write_little_endian():
    m = mem64k()
    m.write_data(0x100, 8, 0x0102030405060708)
    assert m.buf[0x100] == 0x08
    assert m.read_data(0x100, 8) == 0x0102030405060708
    m.write_data(0x200, 2, 0xABCD)
    assert m.read_data(0x200, 2) == 0xABCD
    assert m.read_data(0x200, 4) == 0xABCD


def test_data_write_truncates_to_width():
    m = mem64k()
    m.write_data(0, 1, 0x1FF)
    assert m.read_data(0, 1) == 0xFF


def test_out_of_range_data_access_raises():
    m = mem64k()
    with pytest.raises(IndexError):
        m.read_data(m.size - 4, 8)
    with pytest.raises(IndexError):
        m.write_data(m.size, 1, 0)


# -- granule plane -----------------------------------------------------------

def test_capability_granule_round_trip():
    m = mem64k()
    c = make_root(0x40, 0x80, caps.PERM_LOAD | caps.PERM_STORE_CAP)
    m.write_granule(0x100, c)
    assert m.read_granule(0x100) == c
    assert (0x100 >> 4) in m.tagged


def test_brr_granule_round_trip():
    m = mem64k()
    m.write_granule(0x100, BRR(0xDEAD_BEEF_0BAD_F00D))
    got = m.read_granule(0x100)
    assert isinstance(got, BRR)
    assert got.payload == 0xDEAD_BEEF_0BAD_F00D


def test_data_write_clears_touched_tags():
    m = mem64k()
    c = make_root(0, 16, caps.PERM_LOAD)
    m.write_granule(0x100, c)
    m.write_granule(0x110, c)
    # one 8-byte write straddling both granules kills both tags
    m.write_data(0x10C, 8, 0)
    assert (0x100 >> 4) not in m.tagged
    assert (0x110 >> 4) not in m.tagged
    raw = m.read_granule(0x100)
    assert isinstance(raw, bytes)


def test_invalid_capability_stores_as_raw_bytes():
    m = mem64k()
    c = make_root(0x40, 0x10, caps.PERM_LOAD)
    dead = Capability(False, c.perms, c.base, c.length, c.addr)
    m.write_granule(0x100, c)
    m.write_granule(0x100, dead)
    assert (0x100 >> 4) not in m.tagged
    assert isinstance(m.read_granule(0x100), bytes)


def test_tagged_granule_bytes_are_the_serialization():
    m = mem64k()
    c = make_root(0x40, 0x10, caps.PERM_LOAD)
    m.write_granule(0x100, c)
    assert bytes(m.buf[0x100:0x110]) == serialize_cap(c)
    m.write_granule(0x200, BRR(7))
    assert bytes(m.buf[0x200:0x210]) == serialize_brr(BRR(7))


def test_misaligned_granule_access_raises():
    m = mem64k()
    with pytest.raises(MisalignedGranule):
        m.read_granule(0x108)
    with pytest.raises(MisalignedGranule):
        m.write_granule(0x104, BRR(1))


def test_write_raw_granule_clears_tag():
    m = mem64k()
    m.write_granule(0x100, BRR(9))
    m.write_raw_granule(0x100, bytes(range(16)))
    assert isinstance(m.read_granule(0x100), bytes)
    assert m.read_granule(0x100) == bytes(range(16))


# -- zeroization --------------------------------------------------------------

def test_zero_range_clears_bytes_tags_and_counts():
    m = mem64k()
    m.buf[0x100:0x140] = b"\xAA" * 0x40
    m.write_granule(0x120, BRR(1))
    before = m.zeroized_bytes
    m.zero_range(0x100, 0x40)
    assert m.buf[0x100:0x140] == bytes(0x40)
    assert (0x120 >> 4) not in m.tagged
    assert m.zeroized_bytes - before == 0x40


def test_zero_range_degenerate_and_bounds():
    m = mem64k()
    m.zero_range(0x100, 0)  # no-op
    assert m.zeroized_bytes == 0
    with pytest.raises(IndexError):
        m.zero_range(m.size - 8, 16)


def test_memory_size_validation():
    with pytest.raises(ValueError):
        Memory(1000)  # not a power of two
    with pytest.raises(ValueError):
        Memory(caps.ADDRESS_SPACE * 2)


# -- serialization disjointness (exhaustive over the 6-bit perm space) --------

def test_capability_image_never_collides_with_brr_marker():
    """For every permission set a valid capability can carry, the upper
    8 bytes of its serialization differ from BRR_MARK, so tag+marker
    discrimination can never confuse a spilled secret with a capability."""
    for perms in range(PERM_ALL + 1):
        for base, length, addr in [(0, 0, 0), (0x123450, 0x0FFFFF, 0xFFFF),
                                   ((1 << 24) - 16, 15, (1 << 64) - 1)]:
            c = Capability(True, perms, base, length, addr)
            image = serialize_cap(c)
            upper = int.from_bytes(image[8:16], "little")
            assert upper != BRR_MARK, f"collision at perms={perms:#x}"
            assert upper % 2 == 0  # reserved low bit keeps images even
            got = deserialize_granule(image)
            assert isinstance(got, Capability)
            assert (got.perms, got.base, got.length, got.addr) == (
                perms, base, length, addr)
    assert BRR_MARK % 2 == 1


@settings(max_examples=200, deadline=None)
@given(st.integers(0, (1 << 64) - 1))
def test_brr_serialization_round_trip(payload):
    image = serialize_brr(BRR(payload))
    got = deserialize_granule(image)
    assert isinstance(got, BRR)
    assert got.payload == payload


def test_serialize_cap_range_guard():
    big = Capability(True, 0, 1 << 24, 0, 0)
    with pytest.raises(ValueError):
        serialize_cap(big)


# -- snapshots ----------------------------------------------------------------

def test_snapshot_round_trip():
    m = mem64k()
    m.buf[0x30:0x38] = b"ABCDEFGH"
    c = make_root(0x40, 0x10, caps.PERM_LOAD)
    m.write_granule(0x100, c)
    m.write_granule(0x200, BRR(42))
    blob = m.save_snapshot()
    assert blob.startswith(SNAPSHOT_MAGIC)
    m2 = Memory.load_snapshot(blob)
    assert m2.size == m.size
    assert m2.buf == m.buf
    assert m2.tagged == m.tagged
    assert m2.read_granule(0x100) == c
    assert m2.read_granule(0x200) == BRR(42)


def test_snapshot_is_sparse():
    m = Memory(1 << 20)
    m.write_data(0x500, 8, 1)
    blob = m.save_snapshot()
    # header 13 bytes + one 25-byte entry for the single nonzero granule
    assert len(blob) == 13 + 25


def test_snapshot_rejects_bad_magic():
    with pytest.raises(ValueError):
        Memory.load_snapshot(b"WRONG" + bytes(16))
