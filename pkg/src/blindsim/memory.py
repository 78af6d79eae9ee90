"""Tagged memory: 16-byte granules, capability/BRR cells, snapshots.

Every 16-byte aligned granule carries one tag bit. A tagged granule holds
either a capability or a BRR (blinded register restore) cell; its byte
image in the data plane is the serialization of that content, so plain
byte reads of a tagged granule see the serialized image. Any data write
that touches a tagged granule clears its tag: capabilities cannot be
forged or corrupted through the data plane, only destroyed.

Granule serialization (16 bytes, little-endian):
  bytes 0..7   address cursor (u64)
  bytes 8..9   permission halfword: perm bits shifted left by one
  bytes 10..12 base   (u24)
  bytes 13..15 length (u24)

Bit 0 of the permission halfword is reserved and always 0, so the upper
8 bytes of any capability image form an even u64. BRR_MARK is odd, which
makes BRR cells and capability images disjoint for every permission set.
"""

from __future__ import annotations

from . import caps
from .caps import Capability

GRANULE = 16

#: Marker stored in the upper 8 bytes of a BRR granule.
BRR_MARK = 0xB11D_EDCA_FE00_0001


class BRR:
    """Blinded register-restore cell: a spilled blinded data word.

    Created only by CSC through the stack capability register; CLC of such
    a granule restores the payload with its blindedness bit set.
    """

    __slots__ = ("payload",)

    def __init__(self, payload: int):
        self.payload = payload & ((1 << 64) - 1)

    def __eq__(self, other):
        return isinstance(other, BRR) and other.payload == self.payload

    def __hash__(self):
        return hash(("brr", self.payload))

    def __repr__(self):
        return f"brr{{0x{self.payload:x}}}"


class MisalignedGranule(Exception):
    pass


def serialize_cap(cap: Capability) -> bytes:
    if cap.base >= (1 << 24) or cap.length >= (1 << 24):
        # Unreachable for capabilities derived inside the address space.
        raise ValueError("capability fields exceed serialization range")
    return (cap.addr.to_bytes(8, "little")
            + ((cap.perms << 1) & 0xFFFF).to_bytes(2, "little")
            + cap.base.to_bytes(3, "little")
            + cap.length.to_bytes(3, "little"))


def serialize_brr(cell: BRR) -> bytes:
    return cell.payload.to_bytes(8, "little") + BRR_MARK.to_bytes(8, "little")


def deserialize_granule(image: bytes) -> Capability | BRR:
    """Reconstruct tagged content from its 16-byte image."""
    upper = int.from_bytes(image[8:16], "little")
    if upper == BRR_MARK:
        return BRR(int.from_bytes(image[0:8], "little"))
    return Capability(
        True,
        (int.from_bytes(image[8:10], "little") >> 1) & caps.PERM_ALL,
        int.from_bytes(image[10:13], "little"),
        int.from_bytes(image[13:16], "little"),
        int.from_bytes(image[0:8], "little"),
    )


SNAPSHOT_MAGIC = b"BLSM1"


class Memory:
    """Byte-addressable memory with per-granule tags.

    buf holds the raw data plane (tagged granules keep their serialized
    image there). tagged maps granule index -> Capability | BRR for every
    tag=1 granule. regions is the live-region registry reference, attached
    by the allocator/loader.
    """

    def __init__(self, size: int = caps.ADDRESS_SPACE):
        if size <= 0 or size & (size - 1):
            raise ValueError("memory size must be a power of two")
        if size > caps.ADDRESS_SPACE:
            raise ValueError("memory cannot exceed the capability address space")
        self.size = size
        self.buf = bytearray(size)
        self.tagged: dict[int, Capability | BRR] = {}
        self.zeroized_bytes = 0
        self.regions = None  # set by the allocator

    # -- data plane --------------------------------------------------------

    def read_data(self, addr: int, width: int) -> int:
        assert width in (1, 2, 4, 8)
        if addr < 0 or addr + width > self.size:
            raise IndexError(f"read at {addr:#x}+{width} out of memory")
        return int.from_bytes(self.buf[addr:addr + width], "little")

    def write_data(self, addr: int, width: int, value: int) -> None:
        """Write raw bytes; clears the tag of every touched granule."""
        assert width in (1, 2, 4, 8)
        if addr < 0 or addr + width > self.size:
            raise IndexError(f"write at {addr:#x}+{width} out of memory")
        self.buf[addr:addr + width] = (value & ((1 << (8 * width)) - 1)).to_bytes(
            width, "little")
        g0 = addr >> 4
        g1 = (addr + width - 1) >> 4
        if g0 in self.tagged:
            del self.tagged[g0]
        if g1 != g0 and g1 in self.tagged:
            del self.tagged[g1]

    # -- granule plane -----------------------------------------------------

    def read_granule(self, addr: int) -> Capability | BRR | bytes:
        """Tagged content, or the 16 raw bytes when the tag is clear."""
        if addr & 15:
            raise MisalignedGranule(f"{addr:#x}")
        g = addr >> 4
        got = self.tagged.get(g)
        if got is not None:
            return got
        return bytes(self.buf[addr:addr + 16])

    def write_granule(self, addr: int, value: Capability | BRR) -> None:
        """Store tagged content; an invalid capability stores as raw bytes."""
        if addr & 15:
            raise MisalignedGranule(f"{addr:#x}")
        if addr < 0 or addr + 16 > self.size:
            raise IndexError(f"granule write at {addr:#x} out of memory")
        g = addr >> 4
        if isinstance(value, BRR):
            self.buf[addr:addr + 16] = serialize_brr(value)
            self.tagged[g] = value
        else:
            self.buf[addr:addr + 16] = serialize_cap(value)
            if value.valid:
                self.tagged[g] = value
            elif g in self.tagged:
                del self.tagged[g]

    def write_raw_granule(self, addr: int, image: bytes) -> None:
        """Store 16 raw bytes with tag cleared (data-plane granule write)."""
        if addr & 15:
            raise MisalignedGranule(f"{addr:#x}")
        self.buf[addr:addr + 16] = image
        self.tagged.pop(addr >> 4, None)

    def zero_range(self, base: int, length: int) -> None:
        """Zero [base, base+length), clear overlapped tags, count the bytes."""
        if length <= 0:
            return
        if base < 0 or base + length > self.size:
            raise IndexError(f"zero_range [{base:#x}, {base + length:#x}) out of memory")
        self.buf[base:base + length] = bytes(length)
        for g in range(base >> 4, (base + length - 1 >> 4) + 1):
            self.tagged.pop(g, None)
        self.zeroized_bytes += length

    # -- snapshots ----------------------------------------------------------

    def save_snapshot(self) -> bytes:
        """Sparse snapshot: header plus one entry per interesting granule."""
        out = [SNAPSHOT_MAGIC, self.size.to_bytes(8, "little")]
        zero16 = bytes(16)
        for off in range(0, self.size, 16):
            g = off >> 4
            tag = 1 if g in self.tagged else 0
            image = bytes(self.buf[off:off + 16])
            if tag == 0 and image == zero16:
                continue
            out.append(off.to_bytes(8, "little"))
            out.append(bytes([tag]))
            out.append(image)
        return b"".join(out)

    @classmethod
    def load_snapshot(cls, blob: bytes) -> "Memory":
        if blob[:5] != SNAPSHOT_MAGIC:
            raise ValueError("bad snapshot magic")
        size = int.from_bytes(blob[5:13], "little")
        mem = cls(size)
        pos = 13
        while pos < len(blob):
            off = int.from_bytes(blob[pos:pos + 8], "little")
            tag = blob[pos + 8]
            image = blob[pos + 9:pos + 25]
            if len(image) != 16:
                raise ValueError("truncated snapshot entry")
            mem.buf[off:off + 16] = image
            if tag:
                mem.tagged[off >> 4] = deserialize_granule(image)
            pos += 25
        return mem
