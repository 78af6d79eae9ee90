"""Capability values and their derivation rules.

A capability is an unforgeable reference: validity tag, permission bits,
bounds [base, base+length), and a cursor address. Derivation is monotonic:
permissions and bounds can only shrink, never grow. A capability is
*blinded* when it is valid and its NON_OBLIVIOUS permission is clear;
loads through a blinded capability taint the destination register.

Capabilities are immutable; every deriving operation returns a new value.
"""

from __future__ import annotations

from .faults import FaultKind

# Permission bits. NON_OBLIVIOUS is set on freshly created capabilities;
# clearing it (blinding) is permanent because and_perms only clears bits.
PERM_LOAD = 1 << 0
PERM_STORE = 1 << 1
PERM_EXECUTE = 1 << 2
PERM_LOAD_CAP = 1 << 3
PERM_STORE_CAP = 1 << 4
PERM_NON_OBLIVIOUS = 1 << 5
PERM_ALL = (1 << 6) - 1

_PERM_LETTERS = (
    (PERM_LOAD, "L"),
    (PERM_STORE, "S"),
    (PERM_EXECUTE, "X"),
    (PERM_LOAD_CAP, "l"),
    (PERM_STORE_CAP, "s"),
    (PERM_NON_OBLIVIOUS, "N"),
)

#: Size of the addressable space. Bounds must fit in it; the granule
#: serialization packs base and length into 24 bits each.
ADDRESS_SPACE = 1 << 24

_ACCESS_PERM = {
    "load": PERM_LOAD,
    "store": PERM_STORE,
    "execute": PERM_EXECUTE,
    "load_cap": PERM_LOAD_CAP,
    "store_cap": PERM_STORE_CAP,
}


class CapError(Exception):
    """Base class for capability derivation errors."""


class OutOfAddressSpace(CapError):
    pass


class MonotonicityViolation(CapError):
    pass


class InvalidCapability(CapError):
    pass


class Capability:
    """Immutable capability value.

    ``valid`` is the hardware tag; an invalid capability is inert data and
    every deriving operation on it raises InvalidCapability.
    """

    __slots__ = ("valid", "perms", "base", "length", "addr")

    def __init__(self, valid: bool, perms: int, base: int, length: int, addr: int):
        object.__setattr__(self, "valid", valid)
        object.__setattr__(self, "perms", perms & PERM_ALL)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "addr", addr & ((1 << 64) - 1))

    def __setattr__(self, name, value):
        raise AttributeError("capabilities are immutable")

    @property
    def blinded(self) -> bool:
        return self.valid and not (self.perms & PERM_NON_OBLIVIOUS)

    @property
    def top(self) -> int:
        return self.base + self.length

    def _key(self):
        return (self.valid, self.perms, self.base, self.length, self.addr)

    def __eq__(self, other):
        if not isinstance(other, Capability):
            return NotImplemented
        return self._key() == other._key()

    def __hash__(self):
        return hash(self._key())

    def __str__(self):
        # Fixed field order and fixed-width permission letters so renderings
        # diff cleanly in traces.
        letters = "".join(ch if self.perms & bit else "-" for bit, ch in _PERM_LETTERS)
        return "cap{%d,%s,0x%x,0x%x,0x%x}" % (
            1 if self.valid else 0, letters, self.base, self.length, self.addr)

    __repr__ = __str__


def make_root(base: int, length: int, perms: int) -> Capability:
    """Create a root capability over [base, base+length).

    Only boot/loader code calls this; programs derive everything else.
    NON_OBLIVIOUS is always set on roots: fresh capabilities are non-blinded.
    """
    if base < 0 or length < 0 or base + length > ADDRESS_SPACE:
        raise OutOfAddressSpace(
            f"bounds [{base:#x}, {base + length:#x}) exceed address space")
    return Capability(True, perms | PERM_NON_OBLIVIOUS, base, length, base)


def set_bounds(parent: Capability, new_base: int, new_length: int) -> Capability:
    """Derive a child with narrowed bounds; cursor moves to new_base."""
    if not parent.valid:
        raise InvalidCapability("set_bounds on invalid capability")
    if new_length < 0 or new_base < parent.base or new_base + new_length > parent.top:
        raise MonotonicityViolation(
            f"child [{new_base:#x}, {new_base + new_length:#x}) escapes "
            f"parent [{parent.base:#x}, {parent.top:#x})")
    return Capability(True, parent.perms, new_base, new_length, new_base)


def and_perms(parent: Capability, mask: int) -> Capability:
    """Derive a child whose permissions are parent.perms & mask.

    Clearing NON_OBLIVIOUS this way is the one sanctioned route to a blinded
    capability, and it is absorbing: no derivation can set the bit again.
    """
    if not parent.valid:
        raise InvalidCapability("and_perms on invalid capability")
    return Capability(True, parent.perms & mask, parent.base, parent.length, parent.addr)


def with_address(parent: Capability, addr: int) -> Capability:
    """Move the cursor. The result may sit out of bounds; only dereference
    checks care."""
    if not parent.valid:
        raise InvalidCapability("with_address on invalid capability")
    return Capability(True, parent.perms, parent.base, parent.length, addr)


def check_access(cap: Capability, addr: int, size: int, kind: str) -> FaultKind | None:
    """Check one memory access; returns a fault kind or None.

    kind is one of load, store, load_cap, store_cap, execute. Returned, not
    raised: callers decide whether a failed check faults the machine.
    """
    if not cap.valid:
        return FaultKind.TagViolation
    if not (cap.perms & _ACCESS_PERM[kind]):
        return FaultKind.PermissionViolation
    if addr < cap.base or addr + size > cap.top:
        return FaultKind.BoundsViolation
    return None


def overlaps(a: Capability, b: Capability) -> bool:
    """True when both are valid and their bound intervals intersect."""
    if not (a.valid and b.valid):
        return False
    return a.base < b.top and b.base < a.top
