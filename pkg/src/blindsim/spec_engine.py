"""Speculative execution layer: predictors, cache observer, transient windows.

The engine wraps a Machine and replays its architectural execution while
modeling what a microarchitectural observer sees:

  PHT    64 two-bit saturating counters indexed by pc mod 64, initialized
         to 1 (weakly not-taken); counter >= 2 predicts taken.
  BTB    16-entry direct-mapped target buffer indexed by (pc>>2) mod 16,
         untagged, so congruent addresses alias (that aliasing is what
         makes cross-address mistraining expressible).
  Cache  direct-mapped, 256 lines of 64 bytes, valid bits only.

Resolution happens at execution: the architectural step both resolves the
branch and retires it, and the predictor is updated at retirement only.
A retired branch whose deciding value was blinded (reachable only with
enforcement off, since it faults otherwise) updates the predictor with
the zero value: not-taken for the PHT, no write for the BTB, so predictor
state never depends on blinded data.

On a misprediction the engine runs a transient episode: up to `window`
instructions execute on shadow registers and a memory overlay starting at
the predicted pc. Transient memory accesses touch the cache and appear in
the trace (phase=1); the shadow state is squashed afterwards while cache
state persists — exactly the Spectre channel. Any fault on the transient
path (blindedness or capability) blocks that instruction: the event
records fault=(kind, suppressed=1), the destination register is poisoned,
and no memory or cache effect happens. Poison spreads to dependents,
which execute as effect-free no-ops. A transient branch resolves on
shadow state and redirects the shadow pc but never trains the predictor;
a branch whose condition is blinded or poisoned ends the episode, as do
ECALL, OUT, HALT and any fetch failure.
"""

from __future__ import annotations

from . import caps, isa
from .caps import Capability
from .faults import FaultKind
from .machine import CSP_INDEX, M64, S64, Machine, RunStatus
from .memory import BRR

PHT_SIZE = 64
BTB_SIZE = 16
CACHE_LINES = 256
DEFAULT_WINDOW = 16


class Predictor:
    """PHT + BTB pair with retirement-only, blinded-zeroed updates."""

    def __init__(self):
        self.pht = [1] * PHT_SIZE
        self.btb: list[int | None] = [None] * BTB_SIZE

    def predict_cond(self, pc: int) -> bool:
        return self.pht[pc % PHT_SIZE] >= 2

    def predict_indirect(self, pc: int) -> int | None:
        """Predicted target, or None meaning fall-through (BTB miss)."""
        return self.btb[(pc >> 2) % BTB_SIZE]

    def update_cond(self, pc: int, taken: bool, outcome_blinded: bool):
        """-> ("pht", index, old, new); blinded outcomes train as the zero
        value (not-taken)."""
        if outcome_blinded:
            taken = False
        i = pc % PHT_SIZE
        old = self.pht[i]
        new = min(3, old + 1) if taken else max(0, old - 1)
        self.pht[i] = new
        return ("pht", i, old, new)

    def update_indirect(self, pc: int, target: int, outcome_blinded: bool):
        """-> ("btb", slot, old, new); blinded outcomes write nothing."""
        i = (pc >> 2) % BTB_SIZE
        old = self.btb[i]
        if outcome_blinded:
            return ("btb", i, old, old)
        self.btb[i] = target
        return ("btb", i, old, target)


class Cache:
    """Direct-mapped valid-bit cache; the observer's side of the channel."""

    def __init__(self, log: bool = True):
        self.valid = bytearray(CACHE_LINES)
        self.log: list[tuple[int, bool]] | None = [] if log else None

    def access(self, line: int) -> bool:
        """Touch one line (line = address>>6). Returns hit or miss."""
        i = line % CACHE_LINES
        hit = bool(self.valid[i])
        self.valid[i] = 1
        if self.log is not None:
            self.log.append((i, hit))
        return hit

    def flush(self):
        self.valid = bytearray(CACHE_LINES)


class SpeculativeEngine:
    def __init__(self, machine: Machine, window: int = DEFAULT_WINDOW,
                 predictor: Predictor | None = None, cache: Cache | None = None):
        self.m = machine
        self.window = window
        self.pred = predictor if predictor is not None else Predictor()
        self.cache = cache if cache is not None else Cache(log=False)
        self.status: RunStatus | None = None

    # -- architectural loop ----------------------------------------------

    def events(self, max_steps: int = 10_000_000):
        """Generator over trace events (architectural and transient).

        At predicted instruction kinds (conditional branches, CJALR) it
        consults the predictor first, attaches the retirement update to
        the branch's event, and runs a transient episode on
        mispredictions. Sets self.status when exhausted.
        """
        for chunk in self.event_chunks(max_steps):
            yield from chunk

    CHUNK_CAP = 4096
    # Conditional branches normally retire inside Machine.run_block with the
    # predictor passed straight through (fast path). Setting this False keeps
    # them on the step-at-a-time path below; both must produce identical
    # traces, which the test suite checks differentially.
    inline_branches = True

    def event_chunks(self, max_steps: int = 10_000_000,
                     touch_cache: bool = True):
        """Generator over lists of trace events; concatenated, the lists
        equal the events() stream. Chunk boundaries depend only on the
        event sequence (a fixed size cap), so identical traces chunk
        identically — which lets a consumer compare two runs list-by-list
        at native speed.

        Cache state is a pure fold of the event stream and is never
        consulted while generating it; `touch_cache=False` skips
        maintaining the cache model for bulk trace comparison.
        """
        m = self.m
        code = m.code
        ncode = m.ncode
        base = isa.CODE_BASE
        if touch_cache:
            cache_access = self.cache.access
        else:
            cache_access = None
        pred = self.pred
        bpred = pred if self.inline_branches else None
        window = self.window
        cap = self.CHUNK_CAP
        left = max_steps
        chunk: list = []
        while left > 0:
            room = cap - len(chunk)
            if room <= 0:
                yield chunk
                chunk = []
                room = cap
            before = m.retired
            blocked = m.run_block(chunk, room if room < left else left, bpred)
            executed = m.retired - before
            left -= executed
            if cache_access is not None and executed:
                for i in range(len(chunk) - executed, len(chunk)):
                    line = chunk[i][4]
                    if line is not None:
                        cache_access(line)
            if blocked == 0:
                continue  # block hit the room/step budget; outer loop decides
            if blocked == 4:
                # a mispredicted conditional branch just retired in the block
                chunk.extend(self._episode(m.block_pred_pc, m.pcc, window,
                                           cache_access))
                continue

            pc = m.pc
            idx = (pc - base) >> 2
            kind = 0
            if 0 <= idx < ncode and not pc & 3:
                op = code[idx][0]
                if 29 <= op <= 32:
                    kind = 1
                elif op == 34:
                    kind = 2
            if kind == 0:
                # complex instruction, or a fetch/decode problem: one
                # authoritative step() handles it (and any fault).
                st = m.step(chunk)
                if cache_access is not None and chunk:
                    line = chunk[-1][4]
                    if line is not None:
                        cache_access(line)
                if st:
                    self.status = RunStatus.HALTED if st == 1 else RunStatus.FAULT
                    if chunk:
                        yield chunk
                    return
                left -= 1
                continue

            # predicted instruction: consult, execute, update, maybe speculate
            f = code[idx]
            if kind == 1:
                taken_pred = pred.predict_cond(pc)
                pred_pc = f[3] if taken_pred else pc + 4
                blinded_outcome = bool(m.rb[f[1]] or m.rb[f[2]])
                # the PHT trains on the resolved outcome, which the pc change
                # alone cannot recover when the target is the fall-through
                v1, v2 = m.rv[f[1]], m.rv[f[2]]
                taken_actual = False
                if type(v1) is int and type(v2) is int:
                    o = f[0]
                    if o == 29:
                        taken_actual = v1 == v2
                    elif o == 30:
                        taken_actual = v1 != v2
                    elif o == 31:
                        taken_actual = (v1 ^ S64) < (v2 ^ S64)
                    else:
                        taken_actual = (v1 ^ S64) >= (v2 ^ S64)
            else:
                t = pred.predict_indirect(pc)
                pred_pc = pc + 4 if t is None else t
                tv = m.rv[f[2]]
                blinded_outcome = bool(m.rb[f[2]]) or (
                    type(tv) is Capability and tv.blinded)
                pre_pcc = m.pcc
            bb: list = []
            st = m.step(bb)
            if st == 2:
                # the branch itself faulted: nothing retired, no update,
                # no speculation past a faulting fetch/decode
                chunk.extend(bb)
                self.status = RunStatus.FAULT
                if chunk:
                    yield chunk
                return
            actual_pc = m.pc
            if kind == 1:
                upd = pred.update_cond(pc, taken_actual, blinded_outcome)
            else:
                upd = pred.update_indirect(pc, actual_pc, blinded_outcome)
            ev = bb[0]
            chunk.append((ev[0], ev[1], ev[2], ev[3], ev[4], upd, ev[6]))
            left -= 1
            if pred_pc != actual_pc:
                pcc = m.pcc if kind == 1 else pre_pcc
                chunk.extend(self._episode(pred_pc, pcc, window, cache_access))
        self.status = RunStatus.STEP_LIMIT
        if chunk:
            yield chunk

    def run(self, max_steps: int = 10_000_000, sink=None):
        """Consume the whole run. Returns (status, event count). Events go
        to `sink` (a callable) when given, else are counted and dropped."""
        n = 0
        for ev in self.events(max_steps):
            if sink is not None:
                sink(ev)
            n += 1
        return self.status, n

    # -- transient episode -------------------------------------------------

    def _episode(self, start_pc: int, pcc: Capability | None, window: int,
                 cache_access=...):
        """Execute up to `window` instructions on shadow state; returns the
        list of phase=1 events. All effects except cache fills are
        discarded. `cache_access` overrides the cache-touch callable (None
        skips cache maintenance, matching event_chunks(touch_cache=False))."""
        out: list = []
        m = self.m
        mem = m.mem
        en = m.enforce
        bare = m.bare
        step_no = m.retired
        rv = m.rv[:]
        rb = m.rb[:]
        poison = [0] * 32
        overlay: dict[int, int] = {}       # 8-byte data by exact address
        overlay_tag: dict = {}             # granule content by exact address
        if cache_access is ...:
            cache_access = self.cache.access
        code = m.code
        ncode = m.ncode
        base = isa.CODE_BASE
        pc = start_pc

        if pcc is not None:
            pcc_ok = pcc.valid and bool(pcc.perms & caps.PERM_EXECUTE)
            pcc_base, pcc_top = pcc.base, pcc.top
        for _ in range(window):
            # transient fetch
            if not bare:
                if not pcc_ok or pc < pcc_base or pc + 4 > pcc_top:
                    k = FaultKind.TagViolation if pcc is None or not pcc.valid \
                        else (FaultKind.PermissionViolation
                              if not pcc.perms & caps.PERM_EXECUTE
                              else FaultKind.BoundsViolation)
                    out.append((step_no, 1, pc, "FETCH", None, None,
                                (int(k), 1)))
                    return out
            if pc & 3:
                out.append((step_no, 1, pc, "FETCH", None, None,
                            (int(FaultKind.MisalignedAccess), 1)))
                return out
            idx = (pc - base) >> 2
            if idx < 0 or idx >= ncode:
                out.append((step_no, 1, pc, "FETCH", None, None,
                            (int(FaultKind.IllegalInstruction), 1)))
                return out
            op, a, b, c = code[idx]
            name = m.mnem[idx]
            next_pc = pc + 4
            line = None
            fault = None

            if op < 11:  # ALU register
                if poison[b] or poison[c]:
                    if a:
                        poison[a] = 1
                else:
                    v1, v2 = rv[b], rv[c]
                    if type(v1) is not int or type(v2) is not int:
                        fault = (int(FaultKind.IllegalInstruction), 1)
                        if a:
                            poison[a] = 1
                    else:
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
                            rv[a], rb[a], poison[a] = r, rb[b] | rb[c], 0

            elif op < 16:  # ALU immediate
                if poison[b]:
                    if a:
                        poison[a] = 1
                else:
                    v1 = rv[b]
                    if type(v1) is not int:
                        fault = (int(FaultKind.IllegalInstruction), 1)
                        if a:
                            poison[a] = 1
                    else:
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
                            rv[a], rb[a], poison[a] = r, rb[b], 0

            elif op == 16:  # LI
                if a:
                    rv[a], rb[a], poison[a] = c & M64, 0, 0

            elif op == 17:  # MV
                if a:
                    rv[a], rb[a], poison[a] = rv[b], rb[b], poison[b]

            elif op == 18 or op == 20:  # LD / LDX
                res = self._t_load(op, a, b, c, rv, rb, poison, overlay, en, bare)
                if res is None:
                    pass
                elif res[0] == "ok":
                    line = res[1]
                    if cache_access is not None:
                        cache_access(line)
                else:
                    fault = res[1]

            elif op == 19 or op == 21:  # SD / SDX
                res = self._t_store(op, a, b, c, rv, rb, poison, overlay, en, bare)
                if res is None:
                    pass
                elif res[0] == "ok":
                    line = res[1]
                    if cache_access is not None:
                        cache_access(line)
                else:
                    fault = res[1]

            elif op == 22 or op == 23:  # CSC / CLC
                res = self._t_capmem(op, a, b, c, rv, rb, poison,
                                     overlay, overlay_tag, en, bare)
                if res is None:
                    pass
                elif res[0] == "ok":
                    line = res[1]
                    if cache_access is not None:
                        cache_access(line)
                else:
                    fault = res[1]

            elif op < 27:  # capability modifications
                if poison[b] or poison[c]:
                    if a:
                        poison[a] = 1
                elif en and (rb[b] or rb[c]):
                    fault = (int(FaultKind.BlindedCapForgery), 1)
                    if a:
                        poison[a] = 1
                else:
                    cv, arg = rv[b], rv[c]
                    if type(cv) is not Capability or not cv.valid:
                        fault = (int(FaultKind.TagViolation), 1)
                        if a:
                            poison[a] = 1
                    elif type(arg) is not int:
                        fault = (int(FaultKind.IllegalInstruction), 1)
                        if a:
                            poison[a] = 1
                    else:
                        res_cap = None
                        if op == 24:
                            res_cap = caps.and_perms(cv, arg)
                        elif op == 25:
                            try:
                                res_cap = caps.set_bounds(cv, cv.addr,
                                                          (arg ^ S64) - S64)
                            except caps.MonotonicityViolation:
                                fault = (int(FaultKind.BoundsViolation), 1)
                                if a:
                                    poison[a] = 1
                        else:
                            res_cap = caps.with_address(cv, (cv.addr + arg) & M64)
                        if res_cap is not None and a:
                            rv[a], rb[a], poison[a] = res_cap, 0, 0

            elif op == 27:  # CGETADDR
                if poison[b]:
                    if a:
                        poison[a] = 1
                elif type(rv[b]) is not Capability:
                    fault = (int(FaultKind.IllegalInstruction), 1)
                    if a:
                        poison[a] = 1
                elif a:
                    rv[a], rb[a], poison[a] = rv[b].addr, 0, 0

            elif op == 28:  # CGETTAG
                if poison[b]:
                    if a:
                        poison[a] = 1
                elif a:
                    v = rv[b]
                    rv[a] = 1 if type(v) is Capability and v.valid else 0
                    rb[a], poison[a] = 0, 0

            elif op < 33:  # conditional branch on shadow state
                if poison[a] or poison[b]:
                    out.append((step_no, 1, pc, name, None, None, None))
                    return out
                if en and (rb[a] or rb[b]):
                    out.append((step_no, 1, pc, name, None, None,
                                (int(FaultKind.BlindedBranchCondition), 1)))
                    return out
                v1, v2 = rv[a], rv[b]
                if type(v1) is not int or type(v2) is not int:
                    out.append((step_no, 1, pc, name, None, None,
                                (int(FaultKind.IllegalInstruction), 1)))
                    return out
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
                if poison[b]:
                    out.append((step_no, 1, pc, name, None, None, None))
                    return out
                if en and rb[b]:
                    out.append((step_no, 1, pc, name, None, None,
                                (int(FaultKind.BlindedJumpTarget), 1)))
                    return out
                tv = rv[b]
                if bare:
                    if type(tv) is not int:
                        out.append((step_no, 1, pc, name, None, None,
                                    (int(FaultKind.IllegalInstruction), 1)))
                        return out
                    if a:
                        rv[a], rb[a], poison[a] = pc + 4, 0, 0
                    next_pc = tv
                else:
                    if type(tv) is not Capability:
                        out.append((step_no, 1, pc, name, None, None,
                                    (int(FaultKind.TagViolation), 1)))
                        return out
                    if en and tv.blinded:
                        out.append((step_no, 1, pc, name, None, None,
                                    (int(FaultKind.BlindedJumpTarget), 1)))
                        return out
                    if a:
                        rv[a] = caps.with_address(pcc, pc + 4) if pcc else pc + 4
                        rb[a], poison[a] = 0, 0
                    pcc = tv
                    pcc_ok = pcc.valid and bool(pcc.perms & caps.PERM_EXECUTE)
                    pcc_base, pcc_top = pcc.base, pcc.top
                    next_pc = tv.addr

            else:  # ECALL, OUT, HALT: never speculated past
                out.append((step_no, 1, pc, name, None, None, None))
                return out

            out.append((step_no, 1, pc, name, line, None, fault))
            pc = next_pc
        return out

    # -- transient memory helpers -------------------------------------------

    def _t_load(self, op, a, b, c, rv, rb, poison, overlay, en, bare):
        """None = poisoned no-op; ("ok", line) = performed; ("f", fault)."""
        m = self.m
        if op == 18:
            off, idx_b, idx_p = c, 0, 0
        else:
            if poison[c]:
                if a:
                    poison[a] = 1
                return None
            off = rv[c]
            idx_b, idx_p = rb[c], 0
            if type(off) is not int:
                if a:
                    poison[a] = 1
                return ("f", (int(FaultKind.IllegalInstruction), 1))
        if poison[b]:
            if a:
                poison[a] = 1
            return None
        base_v = rv[b]
        if en and (rb[b] or idx_b):
            if a:
                poison[a] = 1
            return ("f", (int(FaultKind.BlindedAddress), 1))
        if bare:
            if type(base_v) is not int:
                if a:
                    poison[a] = 1
                return ("f", (int(FaultKind.IllegalInstruction), 1))
            ea = (base_v + off) & M64
            res_b = 0
        else:
            if type(base_v) is not Capability:
                if a:
                    poison[a] = 1
                return ("f", (int(FaultKind.TagViolation), 1))
            ea = (base_v.addr + off) & M64
            k = None
            if not base_v.valid:
                k = FaultKind.TagViolation
            elif not base_v.perms & caps.PERM_LOAD:
                k = FaultKind.PermissionViolation
            elif ea < base_v.base or ea + 8 > base_v.top:
                k = FaultKind.BoundsViolation
            if k is not None:
                if a:
                    poison[a] = 1
                return ("f", (int(k), 1))
            res_b = 1 if base_v.blinded else 0
        if ea + 8 > m.mem.size:
            if a:
                poison[a] = 1
            return ("f", (int(FaultKind.BoundsViolation), 1))
        if a:
            got = overlay.get(ea)
            if got is None:
                got = int.from_bytes(m.mem.buf[ea:ea + 8], "little")
            rv[a], rb[a], poison[a] = got, res_b, 0
        return ("ok", ea >> 6)

    def _t_store(self, op, a, b, c, rv, rb, poison, overlay, en, bare):
        m = self.m
        if op == 19:
            off, idx_b = c, 0
        else:
            if poison[c]:
                return None
            off = rv[c]
            idx_b = rb[c]
            if type(off) is not int:
                return ("f", (int(FaultKind.IllegalInstruction), 1))
        if poison[b] or poison[a]:
            return None
        base_v = rv[b]
        data = rv[a]
        if type(data) is not int:
            return ("f", (int(FaultKind.IllegalInstruction), 1))
        if bare:
            if en:
                if rb[b] or idx_b:
                    return ("f", (int(FaultKind.BlindedAddress), 1))
                if rb[a]:
                    return ("f", (int(FaultKind.BlindedStore), 1))
            if type(base_v) is not int:
                return ("f", (int(FaultKind.IllegalInstruction), 1))
            ea = (base_v + off) & M64
        else:
            if en and (rb[b] or idx_b):
                return ("f", (int(FaultKind.BlindedAddress), 1))
            if type(base_v) is not Capability:
                return ("f", (int(FaultKind.TagViolation), 1))
            if en and rb[a] and not base_v.blinded:
                return ("f", (int(FaultKind.BlindedStore), 1))
            ea = (base_v.addr + off) & M64
            if not base_v.valid:
                return ("f", (int(FaultKind.TagViolation), 1))
            if not base_v.perms & caps.PERM_STORE:
                return ("f", (int(FaultKind.PermissionViolation), 1))
            if ea < base_v.base or ea + 8 > base_v.top:
                return ("f", (int(FaultKind.BoundsViolation), 1))
        if ea + 8 > m.mem.size:
            return ("f", (int(FaultKind.BoundsViolation), 1))
        overlay[ea] = data
        return ("ok", ea >> 6)

    def _t_capmem(self, op, a, b, c, rv, rb, poison, overlay, overlay_tag,
                  en, bare):
        """Transient CSC/CLC over the granule overlay."""
        m = self.m
        if poison[b] or (op == 22 and poison[a]):
            if op == 23 and a:
                poison[a] = 1
            return None
        base_v = rv[b]
        if en and rb[b]:
            if op == 23 and a:
                poison[a] = 1
            return ("f", (int(FaultKind.BlindedAddress), 1))
        if bare:
            if type(base_v) is not int:
                return ("f", (int(FaultKind.IllegalInstruction), 1))
            ea = (base_v + c) & M64
            target_blinded = False
        else:
            if type(base_v) is not Capability:
                return ("f", (int(FaultKind.TagViolation), 1))
            ea = (base_v.addr + c) & M64
            target_blinded = base_v.blinded
        if ea & 15:
            return ("f", (int(FaultKind.MisalignedAccess), 1))
        if ea + 16 > m.mem.size:
            return ("f", (int(FaultKind.BoundsViolation), 1))

        if op == 22:  # CSC
            src = rv[a]
            is_cap = type(src) is Capability and src.valid
            as_brr = False
            if is_cap:
                if en and target_blinded:
                    return ("f", (int(FaultKind.CapStoreToBlinded), 1))
            elif type(src) is not Capability and rb[a]:
                if b == CSP_INDEX and not target_blinded:
                    as_brr = True
                elif en and not target_blinded:
                    return ("f", (int(FaultKind.BlindedStore), 1))
            if not bare:
                if not base_v.valid:
                    return ("f", (int(FaultKind.TagViolation), 1))
                need = caps.PERM_STORE_CAP if is_cap else caps.PERM_STORE
                if not base_v.perms & need:
                    return ("f", (int(FaultKind.PermissionViolation), 1))
                if ea < base_v.base or ea + 16 > base_v.top:
                    return ("f", (int(FaultKind.BoundsViolation), 1))
            if is_cap:
                overlay_tag[ea] = src
            elif type(src) is Capability:
                overlay_tag[ea] = None
            elif as_brr:
                overlay_tag[ea] = BRR(src & M64)
            else:
                overlay_tag[ea] = None
                overlay[ea] = src & M64
            return ("ok", ea >> 6)

        # CLC
        if ea in overlay_tag:
            content = overlay_tag[ea]
        else:
            content = m.mem.tagged.get(ea >> 4)
        if not bare:
            if not base_v.valid:
                return ("f", (int(FaultKind.TagViolation), 1))
            need = caps.PERM_LOAD_CAP if content is not None else caps.PERM_LOAD
            if not base_v.perms & need:
                return ("f", (int(FaultKind.PermissionViolation), 1))
            if ea < base_v.base or ea + 16 > base_v.top:
                return ("f", (int(FaultKind.BoundsViolation), 1))
        if content is None:
            got = overlay.get(ea)
            if got is None:
                got = int.from_bytes(m.mem.buf[ea:ea + 8], "little")
            if a:
                rv[a] = got
                rb[a] = 1 if (not bare and base_v.blinded) else 0
                poison[a] = 0
        elif type(content) is BRR:
            if a:
                rv[a], rb[a], poison[a] = content.payload, 1, 0
        else:
            if a:
                rv[a], rb[a], poison[a] = content, 0, 0
        return ("ok", ea >> 6)


def speculative_run(machine: Machine, window: int = DEFAULT_WINDOW,
                    max_steps: int = 10_000_000,
                    predictor: Predictor | None = None,
                    cache: Cache | None = None):
    """Convenience wrapper: full run, materialized trace.
    -> (engine, status, events list)."""
    eng = SpeculativeEngine(machine, window=window, predictor=predictor,
                            cache=cache)
    evs = list(eng.events(max_steps))
    return eng, eng.status, evs
