"""Heap allocator with blinded-region hygiene.

Three allocation flavors, reachable from guest code through ECALL
(function code in x10, size in x11):

  1 malloc       normal region, non-blinded LOAD|STORE capability
  2 bmalloc      blinded region, zeroed on allocation, LOAD|STORE
                 capability with NON_OBLIVIOUS cleared
  4 result_alloc declassification buffer: a blinded STORE-only write
                 capability plus a non-blinded LOAD-only read capability
                 over the same bounds
  3 dealloc      free by capability with exact-bounds match

Deallocation runs the full hygiene sequence synchronously: blinded and
result regions are zeroed, the region is quarantined, a revocation sweep
clears every stale capability that still points into it (register file
and tagged memory granules), and only then does the range return to the
free list. Region disjointness, including blinded versus normal, is an
allocator guarantee, not a hardware check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import caps
from .caps import Capability
from .memory import Memory

GRANULE = 16


class AllocError(Exception):
    pass


class OutOfHeap(AllocError):
    pass


class UnknownRegion(AllocError):
    pass


class DoubleFree(AllocError):
    pass


@dataclass
class Region:
    serial: int
    base: int
    length: int
    kind: str            # "normal" | "blinded" | "result" | "fixed"
    state: str = "live"  # "live" | "quarantined" | "freed"
    label: str = ""
    caps: list = field(default_factory=list)


def _invalidated(cap: Capability) -> Capability:
    return Capability(False, cap.perms, cap.base, cap.length, cap.addr)


class Allocator:
    """First-fit heap over [heap_base, heap_base+heap_len), 16-byte granular."""

    def __init__(self, mem: Memory, heap_base: int, heap_len: int):
        base = (heap_base + GRANULE - 1) & ~(GRANULE - 1)
        top = (heap_base + heap_len) & ~(GRANULE - 1)
        if top > mem.size or base >= top:
            raise AllocError(f"heap [{heap_base:#x}, +{heap_len:#x}) unusable")
        self.mem = mem
        self.heap_base = base
        self.heap_top = top
        self.free: list[tuple[int, int]] = [(base, top - base)]
        self.live: dict[tuple[int, int], Region] = {}
        self.fixed: list[Region] = []
        self.history: list[Region] = []
        self._serial = 0
        mem.regions = self

    # -- bookkeeping ---------------------------------------------------------

    def register_fixed(self, label: str, base: int, length: int, kind: str) -> Region:
        """Record a loader-established region (stack, data, blinded section)."""
        r = Region(self._next_serial(), base, length, kind, state="live", label=label)
        self.fixed.append(r)
        return r

    def _next_serial(self) -> int:
        self._serial += 1
        return self._serial

    def regions(self):
        return self.fixed + list(self.live.values())

    def check_disjoint(self) -> bool:
        """Every region disjoint from every other; in particular no blinded
        region ever overlaps a normal one."""
        spans = sorted((r.base, r.base + r.length) for r in self.regions())
        for (b0, t0), (b1, _t1) in zip(spans, spans[1:]):
            if b1 < t0:
                return False
        return True

    def region_at(self, addr: int) -> Region | None:
        for r in self.regions():
            if r.base <= addr < r.base + r.length:
                return r
        return None

    def cap_for_base(self, base: int) -> Capability | None:
        """Recover the allocation capability from a raw base address
        (bare-mode dealloc passes an integer)."""
        for (b, _l), r in self.live.items():
            if b == base:
                return r.caps[0]
        return None

    # -- allocation ----------------------------------------------------------

    def _carve(self, size: int) -> tuple[int, int]:
        if size <= 0:
            raise AllocError(f"allocation size {size} must be positive")
        need = (size + GRANULE - 1) & ~(GRANULE - 1)
        for i, (base, length) in enumerate(self.free):
            if length >= need:
                if length == need:
                    del self.free[i]
                else:
                    self.free[i] = (base + need, length - need)
                return base, need
        raise OutOfHeap(f"no free block of {need:#x} bytes")

    def malloc(self, size: int) -> Capability:
        base, need = self._carve(size)
        cap = caps.make_root(base, need, caps.PERM_LOAD | caps.PERM_STORE)
        r = Region(self._next_serial(), base, need, "normal", caps=[cap])
        self.live[(base, need)] = r
        self.history.append(r)
        return cap

    def bmalloc(self, size: int) -> Capability:
        base, need = self._carve(size)
        self.mem.zero_range(base, need)
        cap = caps.and_perms(
            caps.make_root(base, need, caps.PERM_LOAD | caps.PERM_STORE),
            caps.PERM_ALL ^ caps.PERM_NON_OBLIVIOUS)
        r = Region(self._next_serial(), base, need, "blinded", caps=[cap])
        self.live[(base, need)] = r
        self.history.append(r)
        return cap

    def result_alloc(self, size: int) -> tuple[Capability, Capability]:
        base, need = self._carve(size)
        self.mem.zero_range(base, need)
        write = caps.and_perms(
            caps.make_root(base, need, caps.PERM_STORE),
            caps.PERM_ALL ^ caps.PERM_NON_OBLIVIOUS)
        read = caps.make_root(base, need, caps.PERM_LOAD)
        r = Region(self._next_serial(), base, need, "result", caps=[write, read])
        self.live[(base, need)] = r
        self.history.append(r)
        return write, read

    # -- deallocation --------------------------------------------------------

    def dealloc(self, machine, cap: Capability) -> int:
        """Free the region matching cap's exact bounds. Zero (blinded and
        result kinds), quarantine, sweep stale capabilities, release.
        Returns the number of capabilities revoked by the sweep."""
        if type(cap) is not Capability:
            raise AllocError("dealloc needs a capability")
        key = (cap.base, cap.length)
        r = self.live.get(key)
        if r is None:
            for old in self.history:
                if (old.base, old.length) == key and old.state == "freed":
                    raise DoubleFree(f"region [{cap.base:#x}, +{cap.length:#x})"
                                     " already freed")
            raise UnknownRegion(f"no live region [{cap.base:#x}, +{cap.length:#x})")
        if r.kind in ("blinded", "result"):
            self.mem.zero_range(r.base, r.length)
        r.state = "quarantined"
        swept = self.revoke_sweep(machine, r.base, r.base + r.length)
        r.state = "freed"
        del self.live[key]
        self._release(r.base, r.length)
        return swept

    def revoke_sweep(self, machine, base: int, top: int) -> int:
        """Clear the validity tag of every capability whose bounds intersect
        [base, top): registers first, then tagged memory granules."""
        count = 0
        if machine is not None:
            rv = machine.rv
            for i in range(1, 32):
                v = rv[i]
                if type(v) is Capability and v.valid and v.base < top and base < v.top:
                    rv[i] = _invalidated(v)
                    count += 1
        tagged = self.mem.tagged
        for gidx in [g for g, content in tagged.items()
                     if type(content) is Capability
                     and content.base < top and base < content.top]:
            del tagged[gidx]  # granule reverts to its raw bytes, tag gone
            count += 1
        return count

    def _release(self, base: int, length: int) -> None:
        self.free.append((base, length))
        self.free.sort()
        merged: list[tuple[int, int]] = []
        for b, l in self.free:
            if merged and merged[-1][0] + merged[-1][1] == b:
                merged[-1] = (merged[-1][0], merged[-1][1] + l)
            else:
                merged.append((b, l))
        self.free = merged
