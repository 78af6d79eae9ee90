"""Architectural fault kinds.

Shared by the capability model (access checks return, rather than raise,
the capability-related kinds) and the machine (which freezes on any of
them). Values are stable: the CLI maps a fault to exit code 10 + value.
"""

from __future__ import annotations

import enum


class FaultKind(enum.IntEnum):
    BlindedStore = 0            # blinded data stored via a non-blinded capability
    CapStoreToBlinded = 1       # capability stored through a blinded capability
    BlindedBranchCondition = 2  # conditional branch on blinded operands
    BlindedJumpTarget = 3       # indirect jump through a blinded register/capability
    BlindedAddress = 4          # blinded value used as an address or index
    BlindedCapForgery = 5       # capability-modifying op with a blinded operand
    TagViolation = 6
    BoundsViolation = 7
    PermissionViolation = 8
    MisalignedAccess = 9
    IllegalInstruction = 10
    BlindedOutput = 11          # OUT of a blinded register


#: Fault kinds that exist purely because of blindedness rules (as opposed to
#: ordinary capability machinery). Used by the test-only enforcement switch.
BLINDEDNESS_FAULTS = frozenset({
    FaultKind.BlindedStore,
    FaultKind.CapStoreToBlinded,
    FaultKind.BlindedBranchCondition,
    FaultKind.BlindedJumpTarget,
    FaultKind.BlindedAddress,
    FaultKind.BlindedCapForgery,
    FaultKind.BlindedOutput,
})
