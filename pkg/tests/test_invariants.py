"""The five machine invariants, each probed from both sides.

I1  blinded data never reaches memory through a non-blinded capability
    (the CSP spill is the single, BRR-marked carve-out)
I2  no capability is ever stored into a blinded region
I3  reclaimed regions are zeroed and every stale capability is revoked
I4  blinded values never decide control flow
I5  blinded values never form addresses

Each invariant gets hand-written violating programs (which must fault with
the exact kind) and permitted programs (which must run to completion),
plus a randomized differential: pairs of runs differing only in secret
inputs must be observably identical. The full 1,000-sequence randomized
sweep lives in the acceptance suite; this module runs a smaller slice.

The CASES registry is exported for the acceptance suite.
"""

from collections import namedtuple

import pytest

from blindsim import caps, isa
from blindsim.faults import FaultKind
from blindsim.machine import RunStatus
from blindsim.memory import BRR

from helpers import (BLINDEDNESS_FAULTS, fault_kind, run_asm,
                     taint_soup_violation)

Case = namedtuple("Case", "invariant name expect src check",
                  defaults=(None,))

B = FaultKind  # brevity in the table below

SEC1 = ".blinded\nsec: .word 7, 13\n"
PUB1 = ".data\npub: .word 5, 6\n"


CASES = [
    # ---- I1: blinded stores need blinded capabilities ----------------------
    Case("I1", "sd_blinded_to_data_cap", B.BlindedStore,
         PUB1 + SEC1 + ".text\nmain: LD x5, 0(x4)\nSD x5, 0(x3)\nHALT"),
    Case("I1", "sdx_blinded_to_derived_cap", B.BlindedStore,
         PUB1 + SEC1 + """.text
main:
    LD x5, 0(x4)
    LI x6, 8
    CSETBOUNDS x7, x3, x6
    SDX x5, x0(x7)
    HALT"""),
    Case("I1", "sd_blinded_to_stack", B.BlindedStore,
         SEC1 + ".text\nmain: LD x5, 0(x4)\nSD x5, -8(x2)\nHALT"),
    Case("I1", "csc_blinded_via_stack_alias", B.BlindedStore,
         SEC1 + ".text\nmain: LD x5, 0(x4)\nMV x7, x2\nCSC x5, -16(x7)\nHALT"),
    Case("I1", "sd_blinded_to_blinded", None,
         SEC1 + ".text\nmain: LD x5, 0(x4)\nSD x5, 8(x4)\nHALT",
         lambda m: m.mem.read_data(isa.BLINDED_BASE + 8, 8) == 7),
    Case("I1", "sd_public_everywhere", None,
         PUB1 + ".text\nmain: LI x5, 3\nSD x5, 0(x3)\nSD x5, -8(x2)\nHALT"),
    Case("I1", "csp_spill_is_brr", None,
         SEC1 + """.text
main:
    LD x5, 0(x4)
    CSC x5, -16(x2)
    CLC x6, -16(x2)
    HALT""",
         lambda m: (type(m.mem.tagged[(isa.STACK_TOP - 16) >> 4]) is BRR
                    and (m.rv[6], m.rb[6]) == (7, 1))),
    Case("I1", "sd_blinded_into_bmalloc", None,
         SEC1 + """.text
main:
    LI x10, 2
    LI x11, 16
    ECALL
    MV x7, x10
    LD x5, 0(x4)
    SD x5, 0(x7)
    HALT"""),

    # ---- I2: no capabilities inside blinded regions ------------------------
    Case("I2", "csc_data_cap_to_blinded", B.CapStoreToBlinded,
         PUB1 + SEC1 + ".text\nmain: CSC x3, 0(x4)\nHALT"),
    Case("I2", "csc_stack_cap_to_blinded", B.CapStoreToBlinded,
         SEC1 + ".text\nmain: CSC x2, 0(x4)\nHALT"),
    Case("I2", "csc_blinded_cap_to_own_region", B.CapStoreToBlinded,
         SEC1 + ".text\nmain: MV x5, x4\nCSC x5, 0(x4)\nHALT"),
    Case("I2", "csc_cap_to_stack", None,
         PUB1 + ".text\nmain: CSC x3, -16(x2)\nCLC x6, -16(x2)\nHALT",
         lambda m: m.rv[6] == m.rv[3] and m.rb[6] == 0),
    Case("I2", "csc_cap_via_derived_stack_child", None,
         PUB1 + """.text
main:
    LI x6, -64
    CINCOFFSET x7, x2, x6
    LI x8, 32
    CSETBOUNDS x7, x7, x8
    CSC x3, 0(x7)
    HALT"""),
    Case("I2", "blinded_cap_stored_to_normal_memory", None,
         """.text
main:
    LI x10, 2
    LI x11, 16
    ECALL
    CSC x10, -16(x2)
    CLC x6, -16(x2)
    HALT""",
         lambda m: m.rv[6].blinded and m.rb[6] == 0),

    # ---- I3: reclaim hygiene ------------------------------------------------
    Case("I3", "double_free", B.IllegalInstruction,
         """.text
main:
    LI x10, 1
    LI x11, 32
    ECALL
    MV x11, x10
    LI x10, 3
    ECALL
    LI x10, 3
    ECALL
    HALT"""),
    Case("I3", "use_after_free", B.TagViolation,
         """.text
main:
    LI x10, 1
    LI x11, 32
    ECALL
    MV x7, x10
    MV x11, x10
    LI x10, 3
    ECALL
    LD x5, 0(x7)
    HALT"""),
    Case("I3", "dealloc_needs_exact_bounds", B.IllegalInstruction,
         """.text
main:
    LI x10, 1
    LI x11, 32
    ECALL
    LI x8, 16
    CSETBOUNDS x11, x10, x8
    LI x10, 3
    ECALL
    HALT"""),
    Case("I3", "two_bmallocs_disjoint", None,
         SEC1 + """.text
main:
    LI x10, 2
    LI x11, 32
    ECALL
    MV x7, x10
    LI x10, 2
    LI x11, 32
    ECALL
    MV x8, x10
    LD x5, 0(x4)
    SD x5, 0(x7)
    SD x5, 0(x8)
    HALT""",
         lambda m: (m.alloc.check_disjoint()
                    and m.rv[7].base != m.rv[8].base)),
    Case("I3", "freed_blinded_memory_reads_zero", None,
         SEC1 + """.text
main:
    LI x10, 2
    LI x11, 32
    ECALL
    MV x7, x10
    LD x5, 0(x4)
    SD x5, 0(x7)
    MV x11, x7
    LI x10, 3
    ECALL
    LI x10, 1
    LI x11, 32
    ECALL
    LD x6, 0(x10)
    OUT x6
    HALT""",
         lambda m: m.outputs == [0]),
    Case("I3", "alloc_free_alloc_cycle", None,
         """.text
main:
    LI x10, 1
    LI x11, 48
    ECALL
    MV x11, x10
    LI x10, 3
    ECALL
    LI x10, 1
    LI x11, 64
    ECALL
    MV x11, x10
    LI x10, 3
    ECALL
    HALT""",
         lambda m: len(m.alloc.free) == 1),

    # ---- I4: no blinded control flow ----------------------------------------
    Case("I4", "branch_on_secret", B.BlindedBranchCondition,
         SEC1 + ".text\nmain: LD x5, 0(x4)\nBEQ x5, x0, main\nHALT"),
    Case("I4", "branch_on_derived_taint", B.BlindedBranchCondition,
         SEC1 + """.text
main:
    LD x5, 0(x4)
    ADDI x6, x5, 1
    XOR x7, x6, x6
    BLT x7, x0, main
    HALT"""),
    Case("I4", "jump_to_blinded_integer", B.BlindedJumpTarget,
         SEC1 + ".text\nmain: LD x5, 0(x4)\nCJALR x1, x5\nHALT"),
    Case("I4", "jump_via_blinded_code_cap", B.BlindedJumpTarget,
         """.text
main:
    LI x6, sub
    CINCOFFSET x5, x31, x6
    LI x7, 0x1F
    CANDPERM x5, x5, x7
    CJALR x1, x5
    HALT
sub:
    HALT"""),
    Case("I4", "public_loop", None,
         ".text\nmain: LI x5, 3\nloop: ADDI x5, x5, -1\nBNE x5, x0, loop\nHALT",
         lambda m: m.rv[5] == 0),
    Case("I4", "branch_on_public_load", None,
         PUB1 + ".text\nmain: LD x5, 0(x3)\nBEQ x5, x0, main\nHALT"),
    Case("I4", "call_and_return_via_code_cap", None,
         """.text
main:
    LI x6, sub
    CINCOFFSET x5, x31, x6
    CJALR x1, x5
    OUT x7
    HALT
sub:
    LI x7, 12
    CJALR x0, x1""",
         lambda m: m.outputs == [12]),

    # ---- I5: no blinded addresses --------------------------------------------
    Case("I5", "load_with_blinded_index", B.BlindedAddress,
         PUB1 + SEC1 + ".text\nmain: LD x5, 0(x4)\nLDX x6, x5(x3)\nHALT"),
    Case("I5", "store_with_blinded_index", B.BlindedAddress,
         PUB1 + SEC1 + ".text\nmain: LD x5, 0(x4)\nSDX x6, x5(x3)\nHALT"),
    Case("I5", "capability_offset_from_secret", B.BlindedCapForgery,
         PUB1 + SEC1 + ".text\nmain: LD x5, 0(x4)\nCINCOFFSET x6, x3, x5\nHALT"),
    Case("I5", "allocation_size_from_secret", B.BlindedAddress,
         SEC1 + """.text
main:
    LD x5, 0(x4)
    LI x10, 1
    MV x11, x5
    ECALL
    HALT"""),
    Case("I5", "public_index_into_blinded_array", None,
         SEC1 + ".text\nmain: LI x5, 8\nLDX x6, x5(x4)\nHALT",
         lambda m: (m.rv[6], m.rb[6]) == (13, 1)),
    Case("I5", "public_index_blinded_store", None,
         SEC1 + """.text
main:
    LD x6, 0(x4)
    LI x5, 8
    SDX x6, x5(x4)
    HALT"""),
    Case("I5", "immediate_offsets_are_public", None,
         PUB1 + SEC1 + ".text\nmain: LD x5, 8(x3)\nLD x6, 8(x4)\nHALT",
         lambda m: (m.rv[5], m.rb[5], m.rv[6], m.rb[6]) == (6, 0, 13, 1)),
]


def run_case(case: Case):
    """Execute one hand-written invariant program and assert its verdict."""
    m, status, _ = run_asm(case.src)
    if case.expect is None:
        assert status == RunStatus.HALTED, \
            f"{case.name}: expected completion, got {status} {m.pending_fault}"
    else:
        assert status == RunStatus.FAULT, \
            f"{case.name}: expected {case.expect.name}, ran to {status}"
        got = fault_kind(m)
        assert got == case.expect, \
            f"{case.name}: expected {case.expect.name}, got {got.name}"
    if case.check is not None:
        assert case.check(m), f"{case.name}: post-condition failed"
    return m


@pytest.mark.parametrize("case", CASES, ids=[c.name for c in CASES])
def test_invariant_case(case):
    run_case(case)


def test_case_matrix_is_balanced():
    for inv in ("I1", "I2", "I3", "I4", "I5"):
        pos = [c for c in CASES if c.invariant == inv and c.expect is not None]
        neg = [c for c in CASES if c.invariant == inv and c.expect is None]
        assert len(pos) >= 3, f"{inv}: need >=3 violating programs"
        assert len(neg) >= 3, f"{inv}: need >=3 permitted programs"


def test_violations_fault_with_blindedness_kinds_where_applicable():
    # I1/I2/I4/I5 violations are blindedness faults; I3 violations surface
    # as allocator or capability faults (revocation), which is their point.
    for case in CASES:
        if case.expect is None or case.invariant == "I3":
            continue
        assert case.expect in BLINDEDNESS_FAULTS


@pytest.mark.parametrize("salt", range(60))
def test_randomized_secret_independence(salt):
    assert taint_soup_violation(salt) is None
