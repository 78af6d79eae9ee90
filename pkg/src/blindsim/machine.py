"""The capability machine: register file, taint rules, interpreter, loader.

Every register carries a blindedness bit alongside its value (data word or
capability). The taint rules are small pure functions (alu_taint,
branch_rule, load_rule, store_rule) used by both the architectural
interpreter and the transient executor, so there is a single source of
truth for the decision table:

  arithmetic   result blinded = op1 | op2
  branching    blinded condition or target faults
  load         blinded index faults; result blinded = capability blinded
  store        blinded index faults; blinded data through a non-blinded
               capability faults (the CSC-via-CSP spill is the carve-out)

A fault freezes the machine: pc does not advance, pending_fault records
(kind, pc), and the faulting instruction does not retire.

Two software modes share the one hardware model: purecap (capability
checks on) and bare (operands are raw addresses, capability checks
skipped; blindedness rules still apply). The test-only ``enforce=False``
switch disables blindedness checks so leaks become reproducible.
"""

from __future__ import annotations

import enum

from . import caps, isa
from .caps import Capability
from .faults import FaultKind
from .memory import BRR, Memory, serialize_cap

M64 = (1 << 64) - 1
S64 = 1 << 63

#: Register index designated as the stack capability (decode-time identity).
CSP_INDEX = 2

DEFAULT_MAX_STEPS = 10_000_000


class RunStatus(enum.Enum):
    HALTED = "halted"
    FAULT = "fault"
    STEP_LIMIT = "step-limit"


def exit_code(status: RunStatus, fault: FaultKind | None = None) -> int:
    if status is RunStatus.HALTED:
        return 0
    if status is RunStatus.STEP_LIMIT:
        return 2
    return 10 + int(fault)


# -- taint decision table ----------------------------------------------------

def alu_taint(b1: int, b2: int) -> int:
    """Arithmetic propagation: blinded if either operand is."""
    return b1 | b2


def branch_rule(cond_blinded: int, target_reg_blinded: int,
                target_cap_blinded: bool) -> FaultKind | None:
    if cond_blinded:
        return FaultKind.BlindedBranchCondition
    if target_reg_blinded or target_cap_blinded:
        return FaultKind.BlindedJumpTarget
    return None


def load_rule(cap_blinded: bool, index_blinded: int):
    """-> (fault | None, result_blindedness)."""
    if index_blinded:
        return FaultKind.BlindedAddress, 0
    return None, 1 if cap_blinded else 0


def store_rule(cap_blinded: bool, index_blinded: int,
               data_blinded: int) -> FaultKind | None:
    if index_blinded:
        return FaultKind.BlindedAddress
    if data_blinded and not cap_blinded:
        return FaultKind.BlindedStore
    return None


class Machine:
    """Architectural state plus the interpreter.

    Trace events are plain tuples (step, phase, pc, opcode, line, pred,
    fault): phase 0 is architectural, 1 transient; line is address>>6 for
    memory accesses; pred/fault are filled by the speculative engine and
    the fault path. Events never contain register values.
    """

    def __init__(self, program: isa.Program, mem: Memory,
                 mode: str = "purecap", enforce: bool = True):
        assert mode in ("purecap", "bare")
        self.prog = program
        self.code = program.code
        self.mnem = program.mnem
        self.ncode = len(program.code)
        self.mem = mem
        self.bare = mode == "bare"
        self.mode = mode
        self.enforce = enforce
        self.rv: list = [0] * 32
        self.rb: list = [0] * 32
        self.pc = program.entry
        self.pcc: Capability | None = None
        self._pcc_fault: FaultKind | None = FaultKind.TagViolation
        self._pcc_base = 0
        self._pcc_top = 0
        self.retired = 0
        self.mem_accesses = 0
        self.outputs: list[int] = []
        self.block_pred_pc = 0  # predicted path of the branch run_block code 4 reports
        self.pending_fault: tuple[FaultKind, int] | None = None
        self.halted = False
        self.alloc = None       # attached by the loader
        self.store_log = None   # optional [(pc, addr, width, data_blinded)] sink

    @property
    def zeroized_bytes(self) -> int:
        return self.mem.zeroized_bytes

    def set_pcc(self, cap: Capability) -> None:
        self.pcc = cap
        if not cap.valid:
            self._pcc_fault = FaultKind.TagViolation
        elif not cap.perms & caps.PERM_EXECUTE:
            self._pcc_fault = FaultKind.PermissionViolation
        else:
            self._pcc_fault = None
        self._pcc_base = cap.base
        self._pcc_top = cap.top

    def write_reg(self, i: int, value, blinded: int) -> None:
        if i:
            if type(value) is Capability and value.valid:
                blinded = 0  # valid capabilities are never blinded data
            self.rv[i] = value
            self.rb[i] = blinded

    # -- interpreter ---------------------------------------------------------

    def _fault(self, kind: FaultKind, evs, pc, op_name, line=None) -> int:
        self.pending_fault = (kind, pc)
        if evs is not None:
            evs.append((self.retired, 0, pc, op_name, line, None, (int(kind), 0)))
        return 2

    def step(self, evs=None) -> int:
        """Execute one instruction. Returns 0 running, 1 halted, 2 faulted."""
        pc = self.pc
        if not self.bare:
            if self._pcc_fault is not None:
                return self._fault(self._pcc_fault, evs, pc, "FETCH")
            if pc < self._pcc_base or pc + 4 > self._pcc_top:
                return self._fault(FaultKind.BoundsViolation, evs, pc, "FETCH")
        if pc & 3:
            return self._fault(FaultKind.MisalignedAccess, evs, pc, "FETCH")
        idx = (pc - isa.CODE_BASE) >> 2
        if idx < 0 or idx >= self.ncode:
            return self._fault(FaultKind.IllegalInstruction, evs, pc, "FETCH")

        op, a, b, c = self.code[idx]
        name = self.mnem[idx]
        rv = self.rv
        rb = self.rb
        en = self.enforce
        line = None
        next_pc = pc + 4

        if op < 11:  # register-register ALU
            v1 = rv[b]
            v2 = rv[c]
            if type(v1) is not int or type(v2) is not int:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            if op == 0:
                r = (v1 + v2) & M64
            elif op == 1:
                r = (v1 - v2) & M64
            elif op == 2:
                r = (v1 * v2) & M64
            elif op == 3:
                r = v1 & v2
            elif op == 4:
                r = v1 | v2
            elif op == 5:
                r = v1 ^ v2
            elif op == 6:
                r = (v1 << (v2 & 63)) & M64
            elif op == 7:
                r = v1 >> (v2 & 63)
            elif op == 8:
                r = (((v1 ^ S64) - S64) >> (v2 & 63)) & M64
            elif op == 9:
                r = 1 if (v1 ^ S64) < (v2 ^ S64) else 0
            else:
                r = 1 if v1 < v2 else 0
            if a:
                rv[a] = r
                rb[a] = rb[b] | rb[c]

        elif op < 16:  # immediate ALU
            v1 = rv[b]
            if type(v1) is not int:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            if op == 11:
                r = (v1 + c) & M64
            elif op == 12:
                r = v1 & (c & M64)
            elif op == 13:
                r = v1 | (c & M64)
            elif op == 14:
                r = v1 ^ (c & M64)
            else:
                r = 1 if ((v1 ^ S64) - S64) < c else 0
            if a:
                rv[a] = r
                rb[a] = rb[b]

        elif op == 16:  # LI
            if a:
                rv[a] = c & M64
                rb[a] = 0

        elif op == 17:  # MV
            if a:
                rv[a] = rv[b]
                rb[a] = rb[b]

        elif op == 18 or op == 20:  # LD / LDX
            if op == 18:
                off, idx_b = c, 0
            else:
                off = rv[c]
                idx_b = rb[c]
                if type(off) is not int:
                    return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            base_v = rv[b]
            if self.bare:
                if en and (rb[b] or idx_b):
                    return self._fault(FaultKind.BlindedAddress, evs, pc, name)
                if type(base_v) is not int:
                    return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
                ea = (base_v + off) & M64
                res_b = 0
            else:
                if en and (rb[b] or idx_b):
                    return self._fault(FaultKind.BlindedAddress, evs, pc, name)
                if type(base_v) is not Capability:
                    return self._fault(FaultKind.TagViolation, evs, pc, name)
                ea = (base_v.addr + off) & M64
                if not base_v.valid:
                    return self._fault(FaultKind.TagViolation, evs, pc, name)
                if not base_v.perms & caps.PERM_LOAD:
                    return self._fault(FaultKind.PermissionViolation, evs, pc, name)
                if ea < base_v.base or ea + 8 > base_v.top:
                    return self._fault(FaultKind.BoundsViolation, evs, pc, name)
                res_b = 1 if base_v.blinded else 0
            mem = self.mem
            if ea + 8 > mem.size:
                return self._fault(FaultKind.BoundsViolation, evs, pc, name)
            if a:
                rv[a] = int.from_bytes(mem.buf[ea:ea + 8], "little")
                rb[a] = res_b
            self.mem_accesses += 1
            line = ea >> 6

        elif op == 19 or op == 21:  # SD / SDX
            if op == 19:
                off, idx_b = c, 0
            else:
                off = rv[c]
                idx_b = rb[c]
                if type(off) is not int:
                    return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            base_v = rv[b]
            data = rv[a]
            if type(data) is not int:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            if self.bare:
                if en:
                    if rb[b] or idx_b:
                        return self._fault(FaultKind.BlindedAddress, evs, pc, name)
                    if rb[a]:
                        return self._fault(FaultKind.BlindedStore, evs, pc, name)
                if type(base_v) is not int:
                    return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
                ea = (base_v + off) & M64
            else:
                if en and (rb[b] or idx_b):
                    return self._fault(FaultKind.BlindedAddress, evs, pc, name)
                if type(base_v) is not Capability:
                    return self._fault(FaultKind.TagViolation, evs, pc, name)
                if en and rb[a] and not base_v.blinded:
                    return self._fault(FaultKind.BlindedStore, evs, pc, name)
                ea = (base_v.addr + off) & M64
                if not base_v.valid:
                    return self._fault(FaultKind.TagViolation, evs, pc, name)
                if not base_v.perms & caps.PERM_STORE:
                    return self._fault(FaultKind.PermissionViolation, evs, pc, name)
                if ea < base_v.base or ea + 8 > base_v.top:
                    return self._fault(FaultKind.BoundsViolation, evs, pc, name)
            mem = self.mem
            if ea + 8 > mem.size:
                return self._fault(FaultKind.BoundsViolation, evs, pc, name)
            mem.buf[ea:ea + 8] = data.to_bytes(8, "little")
            g0 = ea >> 4
            g1 = (ea + 7) >> 4
            if g0 in mem.tagged:
                del mem.tagged[g0]
            if g1 != g0 and g1 in mem.tagged:
                del mem.tagged[g1]
            if self.store_log is not None:
                self.store_log.append((pc, ea, 8, rb[a]))
            self.mem_accesses += 1
            line = ea >> 6

        elif op == 22:  # CSC
            st = self._exec_csc(a, b, c, evs, pc, name)
            if st:
                return st
            line = self._last_line

        elif op == 23:  # CLC
            st = self._exec_clc(a, b, c, evs, pc, name)
            if st:
                return st
            line = self._last_line

        elif op < 27:  # CANDPERM / CSETBOUNDS / CINCOFFSET
            if en and (rb[b] or rb[c]):
                return self._fault(FaultKind.BlindedCapForgery, evs, pc, name)
            cv = rv[b]
            arg = rv[c]
            if type(cv) is not Capability or not cv.valid:
                return self._fault(FaultKind.TagViolation, evs, pc, name)
            if type(arg) is not int:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            if op == 24:
                res = caps.and_perms(cv, arg)
            elif op == 25:
                try:
                    res = caps.set_bounds(cv, cv.addr, (arg ^ S64) - S64)
                except caps.MonotonicityViolation:
                    return self._fault(FaultKind.BoundsViolation, evs, pc, name)
            else:
                res = caps.with_address(cv, (cv.addr + arg) & M64)
            if a:
                rv[a] = res
                rb[a] = 0

        elif op == 27:  # CGETADDR
            cv = rv[b]
            if type(cv) is not Capability:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            if a:
                rv[a] = cv.addr
                rb[a] = 0

        elif op == 28:  # CGETTAG
            cv = rv[b]
            if a:
                rv[a] = 1 if type(cv) is Capability and cv.valid else 0
                rb[a] = 0

        elif op < 33:  # BEQ BNE BLT BGE
            v1 = rv[a]
            v2 = rv[b]
            if en and (rb[a] or rb[b]):
                return self._fault(FaultKind.BlindedBranchCondition, evs, pc, name)
            if type(v1) is not int or type(v2) is not int:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            if op == 29:
                taken = v1 == v2
            elif op == 30:
                taken = v1 != v2
            elif op == 31:
                taken = (v1 ^ S64) < (v2 ^ S64)
            else:
                taken = (v1 ^ S64) >= (v2 ^ S64)
            if taken:
                next_pc = c

        elif op == 33:  # J
            next_pc = c

        elif op == 34:  # CJALR
            tv = rv[b]
            if en and rb[b]:
                return self._fault(FaultKind.BlindedJumpTarget, evs, pc, name)
            if self.bare:
                if type(tv) is not int:
                    return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
                if a:
                    rv[a] = pc + 4
                    rb[a] = 0
                next_pc = tv
            else:
                if type(tv) is not Capability:
                    return self._fault(FaultKind.TagViolation, evs, pc, name)
                if en and tv.blinded:
                    return self._fault(FaultKind.BlindedJumpTarget, evs, pc, name)
                if a:
                    rv[a] = caps.with_address(self.pcc, pc + 4)
                    rb[a] = 0
                self.set_pcc(tv)
                next_pc = tv.addr

        elif op == 35:  # ECALL
            st = self._exec_ecall(evs, pc, name)
            if st:
                return st

        elif op == 36:  # OUT
            v = rv[a]
            if en and rb[a]:
                return self._fault(FaultKind.BlindedOutput, evs, pc, name)
            if type(v) is not int:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            self.outputs.append(v)

        else:  # HALT
            self.halted = True
            if evs is not None:
                evs.append((self.retired, 0, pc, name, None, None, None))
            self.retired += 1
            return 1

        if evs is not None:
            evs.append((self.retired, 0, pc, name, line, None, None))
        self.retired += 1
        self.pc = next_pc
        return 0

    _last_line = None

    def _exec_csc(self, a, b, c, evs, pc, name) -> int:
        """Capability-width store; the only emitter of capability and BRR
        granules. The blinded-spill carve-out applies when the address
        register is the CSP register index at decode time. Fault order:
        blindedness rules first, capability checks second."""
        rv = self.rv
        rb = self.rb
        en = self.enforce
        base_v = rv[b]
        if en and rb[b]:
            return self._fault(FaultKind.BlindedAddress, evs, pc, name)
        if self.bare:
            if type(base_v) is not int:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            ea = (base_v + c) & M64
            target_blinded = False
        else:
            if type(base_v) is not Capability:
                return self._fault(FaultKind.TagViolation, evs, pc, name)
            ea = (base_v.addr + c) & M64
            target_blinded = base_v.blinded
        if ea & 15:
            return self._fault(FaultKind.MisalignedAccess, evs, pc, name)
        src = rv[a]
        is_cap = type(src) is Capability and src.valid

        # blindedness rules, ahead of any capability check
        as_brr = False
        if is_cap:
            if en and target_blinded:
                return self._fault(FaultKind.CapStoreToBlinded, evs, pc, name)
        elif type(src) is not Capability and rb[a]:
            if b == CSP_INDEX and not target_blinded:
                as_brr = True
            elif en and not target_blinded:
                return self._fault(FaultKind.BlindedStore, evs, pc, name)

        if not self.bare:
            if not base_v.valid:
                return self._fault(FaultKind.TagViolation, evs, pc, name)
            need = caps.PERM_STORE_CAP if is_cap else caps.PERM_STORE
            if not base_v.perms & need:
                return self._fault(FaultKind.PermissionViolation, evs, pc, name)
            if ea < base_v.base or ea + 16 > base_v.top:
                return self._fault(FaultKind.BoundsViolation, evs, pc, name)
        if ea + 16 > self.mem.size:
            return self._fault(FaultKind.BoundsViolation, evs, pc, name)

        if is_cap:
            self.mem.write_granule(ea, src)
        elif type(src) is Capability:  # invalid capability: plain bytes
            self.mem.write_raw_granule(ea, serialize_cap(src))
        elif as_brr:
            self.mem.write_granule(ea, BRR(src & M64))
        else:
            self.mem.write_raw_granule(
                ea, (src & M64).to_bytes(8, "little") + bytes(8))
        self._note_store(pc, ea, rb[a] if type(src) is int else 0)
        return 0

    def _note_store(self, pc, ea, blinded):
        if self.store_log is not None:
            self.store_log.append((pc, ea, 16, blinded))
        self.mem_accesses += 1
        self._last_line = ea >> 6

    def _exec_clc(self, a, b, c, evs, pc, name) -> int:
        rv = self.rv
        rb = self.rb
        base_v = rv[b]
        if self.enforce and rb[b]:
            return self._fault(FaultKind.BlindedAddress, evs, pc, name)
        if self.bare:
            if type(base_v) is not int:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
            ea = (base_v + c) & M64
            cap_blinded = False
        else:
            if type(base_v) is not Capability:
                return self._fault(FaultKind.TagViolation, evs, pc, name)
            ea = (base_v.addr + c) & M64
            cap_blinded = base_v.blinded
        if ea & 15:
            return self._fault(FaultKind.MisalignedAccess, evs, pc, name)
        if ea + 16 > self.mem.size:
            return self._fault(FaultKind.BoundsViolation, evs, pc, name)
        content = self.mem.tagged.get(ea >> 4)
        if not self.bare:
            if not base_v.valid:
                return self._fault(FaultKind.TagViolation, evs, pc, name)
            need = caps.PERM_LOAD_CAP if content is not None else caps.PERM_LOAD
            if not base_v.perms & need:
                return self._fault(FaultKind.PermissionViolation, evs, pc, name)
            if ea < base_v.base or ea + 16 > base_v.top:
                return self._fault(FaultKind.BoundsViolation, evs, pc, name)
        if content is None:
            if a:
                rv[a] = int.from_bytes(self.mem.buf[ea:ea + 8], "little")
                rb[a] = 1 if cap_blinded else 0
        elif type(content) is BRR:
            if a:
                rv[a] = content.payload
                rb[a] = 1
        else:
            if a:
                rv[a] = content
                rb[a] = 0
        self.mem_accesses += 1
        self._last_line = ea >> 6
        return 0

    def _exec_ecall(self, evs, pc, name) -> int:
        """Allocator binding: function code in x10, args x11.., results x10/x11."""
        from .alloc import AllocError
        rv = self.rv
        rb = self.rb
        if self.alloc is None:
            return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
        if self.enforce and (rb[10] or rb[11]):
            return self._fault(FaultKind.BlindedAddress, evs, pc, name)
        code = rv[10]
        try:
            if code == 1 or code == 2:
                size = rv[11]
                if type(size) is not int:
                    return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
                fn = self.alloc.malloc if code == 1 else self.alloc.bmalloc
                cap = fn(size)
                rv[10], rb[10] = (cap.base, 0) if self.bare else (cap, 0)
            elif code == 3:
                target = rv[11]
                if self.bare and type(target) is int:
                    target = self.alloc.cap_for_base(target)
                if type(target) is not Capability:
                    return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
                swept = self.alloc.dealloc(self, target)
                rv[10], rb[10] = swept, 0
            elif code == 4:
                size = rv[11]
                if type(size) is not int:
                    return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
                w, r = self.alloc.result_alloc(size)
                if self.bare:
                    rv[10], rb[10] = w.base, 0
                    rv[11], rb[11] = r.base, 0
                else:
                    rv[10], rb[10] = w, 0
                    rv[11], rb[11] = r, 0
            else:
                return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
        except AllocError:
            return self._fault(FaultKind.IllegalInstruction, evs, pc, name)
        return 0

    def run_block(self, evs, limit: int, pred=None) -> int:
        """Batched interpreter for the simple straight-line subset.

        Executes consecutive ALU / LI / MV / LD / LDX / SD / SDX / J
        instructions with hoisted state, appending one event per retired
        instruction to `evs` (when not None), exactly as step() would.
        Stops *before* any other instruction, before any instruction whose
        fetch or execution would fault (step() is the single source of
        truth for fault kinds and ordering), or when `limit` instructions
        have retired.  Returns 0 when the limit ran out, 3 at a boundary;
        it never halts or faults itself.

        When `pred` (a predictor with update_cond()) is given, non-faulting
        conditional branches are also executed inline: the branch retires
        with its predictor update attached to the event, and a mispredicted
        one returns 4 with the predicted (wrong-path) pc left in
        self.block_pred_pc so the caller can run a transient episode.
        """
        rv = self.rv
        rb = self.rb
        en = self.enforce
        bare = self.bare
        code = self.code
        mnem = self.mnem
        ncode = self.ncode
        mem = self.mem
        buf = mem.buf
        tagged = mem.tagged
        memsize = mem.size
        store_log = self.store_log
        append = evs.append if evs is not None else None
        accessed = 0
        pc = self.pc
        retired = self.retired
        cbase = isa.CODE_BASE
        nobliv = caps.PERM_NON_OBLIVIOUS
        pload = caps.PERM_LOAD
        pstore = caps.PERM_STORE
        n = limit
        if not bare and self._pcc_fault is not None:
            return 3
        pbase = self._pcc_base
        ptop = self._pcc_top
        try:
            while n > 0:
                if pc & 3:
                    return 3
                idx = (pc - cbase) >> 2
                if idx < 0 or idx >= ncode:
                    return 3
                if not bare and (pc < pbase or pc + 4 > ptop):
                    return 3
                op, a, b, c = code[idx]

                if op < 11:  # register-register ALU
                    v1 = rv[b]
                    v2 = rv[c]
                    if type(v1) is not int or type(v2) is not int:
                        return 3
                    if op == 0:
                        r = (v1 + v2) & M64
                    elif op == 1:
                        r = (v1 - v2) & M64
                    elif op == 2:
                        r = (v1 * v2) & M64
                    elif op == 3:
                        r = v1 & v2
                    elif op == 4:
                        r = v1 | v2
                    elif op == 5:
                        r = v1 ^ v2
                    elif op == 6:
                        r = (v1 << (v2 & 63)) & M64
                    elif op == 7:
                        r = v1 >> (v2 & 63)
                    elif op == 8:
                        r = (((v1 ^ S64) - S64) >> (v2 & 63)) & M64
                    elif op == 9:
                        r = 1 if (v1 ^ S64) < (v2 ^ S64) else 0
                    else:
                        r = 1 if v1 < v2 else 0
                    if a:
                        rv[a] = r
                        rb[a] = rb[b] | rb[c]
                    if append is not None:
                        append((retired, 0, pc, mnem[idx], None, None, None))
                    retired += 1
                    pc += 4
                    n -= 1
                    continue

                if op < 16:  # immediate ALU
                    v1 = rv[b]
                    if type(v1) is not int:
                        return 3
                    if op == 11:
                        r = (v1 + c) & M64
                    elif op == 12:
                        r = v1 & (c & M64)
                    elif op == 13:
                        r = v1 | (c & M64)
                    elif op == 14:
                        r = v1 ^ (c & M64)
                    else:
                        r = 1 if ((v1 ^ S64) - S64) < c else 0
                    if a:
                        rv[a] = r
                        rb[a] = rb[b]
                    if append is not None:
                        append((retired, 0, pc, mnem[idx], None, None, None))
                    retired += 1
                    pc += 4
                    n -= 1
                    continue

                if op == 16:  # LI
                    if a:
                        rv[a] = c & M64
                        rb[a] = 0
                    if append is not None:
                        append((retired, 0, pc, mnem[idx], None, None, None))
                    retired += 1
                    pc += 4
                    n -= 1
                    continue

                if op == 17:  # MV
                    if a:
                        rv[a] = rv[b]
                        rb[a] = rb[b]
                    if append is not None:
                        append((retired, 0, pc, mnem[idx], None, None, None))
                    retired += 1
                    pc += 4
                    n -= 1
                    continue

                if op == 18 or op == 20:  # LD / LDX
                    if op == 18:
                        off = c
                        idx_b = 0
                    else:
                        off = rv[c]
                        idx_b = rb[c]
                        if type(off) is not int:
                            return 3
                    base_v = rv[b]
                    if en and (rb[b] or idx_b):
                        return 3
                    if bare:
                        if type(base_v) is not int:
                            return 3
                        ea = (base_v + off) & M64
                        res_b = 0
                    else:
                        if type(base_v) is not Capability or not base_v.valid:
                            return 3
                        if not base_v.perms & pload:
                            return 3
                        ea = (base_v.addr + off) & M64
                        if ea < base_v.base or ea + 8 > base_v.base + base_v.length:
                            return 3
                        res_b = 0 if base_v.perms & nobliv else 1
                    if ea + 8 > memsize:
                        return 3
                    if a:
                        rv[a] = int.from_bytes(buf[ea:ea + 8], "little")
                        rb[a] = res_b
                    accessed += 1
                    if append is not None:
                        append((retired, 0, pc, mnem[idx], ea >> 6, None, None))
                    retired += 1
                    pc += 4
                    n -= 1
                    continue

                if op == 19 or op == 21:  # SD / SDX
                    if op == 19:
                        off = c
                        idx_b = 0
                    else:
                        off = rv[c]
                        idx_b = rb[c]
                        if type(off) is not int:
                            return 3
                    base_v = rv[b]
                    data = rv[a]
                    if type(data) is not int:
                        return 3
                    if en and (rb[b] or idx_b):
                        return 3
                    if bare:
                        if en and rb[a]:
                            return 3
                        if type(base_v) is not int:
                            return 3
                        ea = (base_v + off) & M64
                    else:
                        if type(base_v) is not Capability or not base_v.valid:
                            return 3
                        if en and rb[a] and base_v.perms & nobliv:
                            return 3
                        if not base_v.perms & pstore:
                            return 3
                        ea = (base_v.addr + off) & M64
                        if ea < base_v.base or ea + 8 > base_v.base + base_v.length:
                            return 3
                    if ea + 8 > memsize:
                        return 3
                    buf[ea:ea + 8] = data.to_bytes(8, "little")
                    g0 = ea >> 4
                    g1 = (ea + 7) >> 4
                    if g0 in tagged:
                        del tagged[g0]
                    if g1 != g0 and g1 in tagged:
                        del tagged[g1]
                    if store_log is not None:
                        store_log.append((pc, ea, 8, rb[a]))
                    accessed += 1
                    if append is not None:
                        append((retired, 0, pc, mnem[idx], ea >> 6, None, None))
                    retired += 1
                    pc += 4
                    n -= 1
                    continue

                if op == 33:  # J
                    if append is not None:
                        append((retired, 0, pc, mnem[idx], None, None, None))
                    retired += 1
                    pc = c
                    n -= 1
                    continue

                if 29 <= op <= 32 and pred is not None:  # BEQ BNE BLT BGE
                    v1 = rv[a]
                    v2 = rv[b]
                    cb = rb[a] | rb[b]
                    if en and cb:
                        return 3
                    if type(v1) is not int or type(v2) is not int:
                        return 3
                    if op == 29:
                        taken = v1 == v2
                    elif op == 30:
                        taken = v1 != v2
                    elif op == 31:
                        taken = (v1 ^ S64) < (v2 ^ S64)
                    else:
                        taken = (v1 ^ S64) >= (v2 ^ S64)
                    upd = pred.update_cond(pc, taken, bool(cb))
                    if append is not None:
                        append((retired, 0, pc, mnem[idx], None, upd, None))
                    retired += 1
                    n -= 1
                    npc = c if taken else pc + 4
                    ppc = c if upd[2] >= 2 else pc + 4  # upd[2] = table state before
                    pc = npc
                    if ppc != npc:
                        self.block_pred_pc = ppc
                        return 4
                    continue

                return 3  # anything else is step()'s business
            return 0
        finally:
            self.pc = pc
            self.retired = retired
            self.mem_accesses += accessed

    def run(self, max_steps: int | None = None, trace: bool = True):
        """Run to halt, fault, or step limit. -> (RunStatus, events | None)."""
        evs = [] if trace else None
        limit = DEFAULT_MAX_STEPS if max_steps is None else max_steps
        step = self.step
        while limit > 0:
            before = self.retired
            if self.run_block(evs, limit) == 0:
                break  # limit exhausted inside the block
            limit -= self.retired - before
            if limit <= 0:
                break
            st = step(evs)
            if st == 1:
                return RunStatus.HALTED, evs
            if st == 2:
                return RunStatus.FAULT, evs
            limit -= 1
        return RunStatus.STEP_LIMIT, evs


# -- loader ------------------------------------------------------------------

def load_program(prog: isa.Program, mode: str = "purecap",
                 heap: tuple[int, int] | None = None,
                 mem_size: int = isa.MEM_SIZE, enforce: bool = True) -> Machine:
    """Build a machine: memory image, regions, register conventions.

    Register conventions set up here (and assumed by generated code):
    x2 stack capability (cursor at the top; grows down), x3 data-section
    capability, x4 blinded-section capability (non-blinded when the
    program says `.option noblind`), x31 code capability with address 0
    so a label value is also the CINCOFFSET delta.
    """
    from .alloc import Allocator

    mem = Memory(mem_size)
    m = Machine(prog, mem, mode=mode, enforce=enforce)

    if prog.data_image:
        mem.buf[isa.DATA_BASE:isa.DATA_BASE + len(prog.data_image)] = prog.data_image
    if prog.blinded_image:
        mem.buf[isa.BLINDED_BASE:isa.BLINDED_BASE + len(prog.blinded_image)] = \
            prog.blinded_image

    heap_base, heap_len = heap if heap else (isa.HEAP_BASE, isa.HEAP_END - isa.HEAP_BASE)
    allocator = Allocator(mem, heap_base, heap_len)
    m.alloc = allocator

    allocator.register_fixed("stack", isa.STACK_BASE, isa.STACK_TOP - isa.STACK_BASE,
                             "normal")
    if prog.data_image:
        allocator.register_fixed("data", isa.DATA_BASE, len(prog.data_image), "normal")
    if prog.blinded_image:
        kind = "normal" if prog.noblind else "blinded"
        allocator.register_fixed("blinded", isa.BLINDED_BASE,
                                 len(prog.blinded_image), kind)

    code_len = max(4 * len(prog.code), 4)
    if mode == "purecap":
        stack = caps.make_root(isa.STACK_BASE, isa.STACK_TOP - isa.STACK_BASE,
                               caps.PERM_LOAD | caps.PERM_STORE |
                               caps.PERM_LOAD_CAP | caps.PERM_STORE_CAP)
        m.write_reg(CSP_INDEX, caps.with_address(stack, isa.STACK_TOP), 0)
        if prog.data_image:
            m.write_reg(3, caps.make_root(isa.DATA_BASE, len(prog.data_image),
                                          caps.PERM_LOAD | caps.PERM_STORE), 0)
        if prog.blinded_image:
            bl = caps.make_root(isa.BLINDED_BASE, len(prog.blinded_image),
                                caps.PERM_LOAD | caps.PERM_STORE)
            if not prog.noblind:
                bl = caps.and_perms(bl, caps.PERM_ALL ^ caps.PERM_NON_OBLIVIOUS)
            m.write_reg(4, bl, 0)
        codecap = caps.make_root(isa.CODE_BASE, code_len, caps.PERM_EXECUTE)
        m.write_reg(31, caps.with_address(codecap, 0), 0)
        m.set_pcc(caps.with_address(codecap, prog.entry))
    else:
        m.rv[CSP_INDEX] = isa.STACK_TOP
        m.rv[3] = isa.DATA_BASE
        m.rv[4] = isa.BLINDED_BASE
        m.rv[31] = 0
    m.pc = prog.entry
    return m


def set_inputs(m: Machine, public=(), secret=()) -> None:
    """Fill the leading words of the data/blinded sections with inputs."""
    for i, v in enumerate(public):
        assert 8 * i < len(m.prog.data_image), "public input beyond .data"
        m.mem.write_data(isa.DATA_BASE + 8 * i, 8, v & M64)
    for i, v in enumerate(secret):
        assert 8 * i < len(m.prog.blinded_image), "secret input beyond .blinded"
        m.mem.write_data(isa.BLINDED_BASE + 8 * i, 8, v & M64)
