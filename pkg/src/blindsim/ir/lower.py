"""Lowering: instrumented AST -> assembly text for the toy ISA.

Register conventions
--------------------
========  ==========================================================
x0        zero
x1        link
x2        stack capability (grows down; spills through x2 use CSC/CLC
          so blinded register values round-trip with their taint)
x3 / x4   data / blinded section capabilities (set by the loader)
x5 - x7   expression temporaries (spilled to the frame beyond three)
x8        holds the constant 3 (word <-> byte shift), set per function
x9        intra-statement scratch and return-value carrier
x10-x13   call and ECALL arguments / results
x14-x28   register pool for named locals and storage capabilities
x29, x30  call/epilogue scratch
x31       code capability (set by the loader)
========  ==========================================================

Storage locals (arrays, and scalars annotated ``blinded``) live in the
frame behind a capability derived from the stack capability in *every*
configuration; when blinding is on, a blinded local's capability additionally
gets its non-oblivious permission cleared (LI + CANDPERM, exactly two extra
instructions) and the epilogue zeroizes it on every exit path.  This keeps
the instruction-count difference between the blinded and unblinded builds of
a program exactly equal to the statically predicted expansion.

``declassify`` routes a value through a result buffer pair obtained from the
allocator (blinded write capability, unblinded read capability), so reading
it back strips the taint by construction rather than by fiat.

The lowerer never emits a branch conditioned on may- or must-blinded data;
secret-dependent selection in the source language is expressed with mask
arithmetic, and the analysis rejects secret branches before we get here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..caps import PERM_LOAD, PERM_STORE
from . import nodes as N
from .analyze import AnalysisResult, Diagnostic
from .nodes import MAY, MUST, UNBLINDED

ARG_REGS = (10, 11, 12, 13)
POOL_REGS = tuple(range(14, 29))
TEMP_REGS = (5, 6, 7)
GRANULE = 16

# ECALL service codes understood by the machine.
SVC_MALLOC = 1
SVC_BMALLOC = 2
SVC_DEALLOC = 3
SVC_RESULT_ALLOC = 4

_IMM_OPS = {"+": "ADDI", "&": "ANDI", "|": "ORI", "^": "XORI"}


class LoweringError(Exception):
    def __init__(self, diag: Diagnostic):
        self.diagnostic = diag
        super().__init__(str(diag))


@dataclass
class LoweredProgram:
    asm: str
    # instruction index -> (description, static blindedness level) for every
    # store the program can retire; used to audit taint conservativeness.
    provenance: dict[int, tuple[str, int]] = field(default_factory=dict)
    # fn name -> predicted extra instructions retired per execution of the
    # function when built with blinding on versus off.
    fn_delta: dict[str, int] = field(default_factory=dict)
    global_offsets: dict[str, tuple[str, int]] = field(default_factory=dict)
    blinding: bool = True
    mode: str = "purecap"
    analysis: object = None  # AnalysisResult, attached by build_source


def zeroization_cost(words: int | None) -> int:
    """Instructions retired zeroizing one storage local (None = scalar)."""
    if words is None:
        return 1
    if words <= 4:
        return words
    return 1 + 3 * words


class _Emitter:
    def __init__(self):
        self.lines: list[str] = []
        self.index = 0  # instruction index within the final code image
        self.provenance: dict[int, tuple[str, int]] = {}

    def ins(self, text: str, prov: tuple[str, int] | None = None):
        if prov is not None:
            self.provenance[self.index] = prov
        self.lines.append("    " + text)
        self.index += 1

    def label(self, name: str):
        self.lines.append(f"{name}:")

    def raw(self, text: str):
        self.lines.append(text)


class _Temp:
    __slots__ = ("reg", "slot", "level", "pinned")

    def __init__(self, reg: int, level: int):
        self.reg = reg
        self.slot = None
        self.level = level
        self.pinned = False


class _Operand:
    """Either a constant, a fixed register (pool/x0), or a temporary."""

    __slots__ = ("kind", "value", "temp", "level")

    def __init__(self, kind, value=None, temp=None, level=UNBLINDED):
        self.kind = kind  # 'const' | 'reg' | 'temp'
        self.value = value
        self.temp = temp
        self.level = level


def _const(v: int, level=UNBLINDED) -> _Operand:
    return _Operand("const", value=v, level=level)


def _fixed(reg: int, level=UNBLINDED) -> _Operand:
    return _Operand("reg", value=reg, level=level)


# ---------------------------------------------------------------------------


def _walk_stmts(stmts):
    for s in stmts:
        yield s
        if isinstance(s, N.If):
            yield from _walk_stmts(s.then)
            yield from _walk_stmts(s.els)
        elif isinstance(s, N.While):
            yield from _walk_stmts(s.body)


def _walk_exprs(stmts):
    def sub(e):
        if e is None:
            return
        yield e
        if isinstance(e, N.Unary):
            yield from sub(e.operand)
        elif isinstance(e, N.Binary):
            yield from sub(e.left)
            yield from sub(e.right)
        elif isinstance(e, N.IndexRef):
            yield from sub(e.index)
        elif isinstance(e, N.Call):
            for a in e.args:
                yield from sub(a)
        elif isinstance(e, N.Declassify):
            yield from sub(e.operand)
        elif isinstance(e, N.AllocExpr):
            yield from sub(e.size)

    for s in _walk_stmts(stmts):
        for attr in ("init", "value", "index", "cond", "target", "call"):
            e = getattr(s, attr, None)
            if isinstance(e, N.Expr):
                yield from sub(e)


def _temp_need(e: N.Expr | None) -> int:
    if e is None:
        return 0
    if isinstance(e, (N.Num, N.VarRef)):
        return 1
    if isinstance(e, N.IndexRef):
        return max(_temp_need(e.index), 1)
    if isinstance(e, N.Unary):
        return max(_temp_need(e.operand), 1)
    if isinstance(e, N.Binary):
        return max(_temp_need(e.left), _temp_need(e.right) + 1, 2)
    if isinstance(e, N.Call):
        worst = 1
        for i, a in enumerate(e.args):
            worst = max(worst, _temp_need(a) + i)
        return worst
    if isinstance(e, N.Declassify):
        return max(_temp_need(e.operand), 1)
    if isinstance(e, N.AllocExpr):
        return max(_temp_need(e.size), 1)
    return 1


def _stmt_need(s: N.Stmt) -> int:
    if isinstance(s, N.VarDecl):
        return _temp_need(s.init)
    if isinstance(s, N.Assign):
        return _temp_need(s.value)
    if isinstance(s, N.StoreIdx):
        return max(_temp_need(s.value), _temp_need(s.index) + 1)
    if isinstance(s, (N.If, N.While)):
        return _temp_need(s.cond)
    if isinstance(s, N.Return):
        return _temp_need(s.value)
    if isinstance(s, N.Out):
        return _temp_need(s.value)
    if isinstance(s, N.Free):
        return 1
    if isinstance(s, N.ExprStmt):
        return _temp_need(s.call)
    return 0


# ---------------------------------------------------------------------------


class _FunctionLowerer:
    def __init__(self, parent: "_Lowerer", fn: N.Function):
        self.p = parent
        self.fn = fn
        self.em = parent.em
        self.purecap = parent.purecap
        self.blinding = parent.blinding
        self.env = parent.analysis.locals[fn.name]
        self.is_main = fn.name == "main"

        self.makes_calls = any(isinstance(e, N.Call) for e in _walk_exprs(fn.body))
        self.uses_declassify = any(isinstance(e, N.Declassify)
                                   for e in _walk_exprs(fn.body))
        self.uses_ecall = self.uses_declassify or any(
            isinstance(e, N.AllocExpr) for e in _walk_exprs(fn.body)) or any(
            isinstance(s, N.Free) for s in _walk_stmts(fn.body))

        # --- register pool assignment -------------------------------------
        self.pool: dict[str, int] = {}      # named scalar/handle/param -> reg
        self.capreg: dict[str, int] = {}    # storage local -> capability reg
        self.storage: list[N.VarDecl] = []  # decl-order storage locals
        avail = list(POOL_REGS)

        def take(what: str) -> int:
            if not avail:
                raise LoweringError(Diagnostic(
                    "error", "E_REG_PRESSURE",
                    f"function '{fn.name}' needs more than "
                    f"{len(POOL_REGS)} pooled registers ({what})",
                    fn.line, fn.col, parent.prog.filename))
            return avail.pop(0)

        for prm in fn.params:
            self.pool[prm.name] = take(f"parameter '{prm.name}'")
        for decl in _walk_decls_ordered(fn.body):
            info = self.env[decl.name]
            if decl.size is not None or (decl.blinded and info.kind != "handle"):
                self.storage.append(decl)
                self.capreg[decl.name] = take(f"storage for '{decl.name}'")
            else:
                self.pool[decl.name] = take(f"local '{decl.name}'")
        self.res_w = self.res_r = None
        if self.uses_declassify:
            self.res_w = take("declassify write capability")
            self.res_r = take("declassify read capability")

        # --- frame layout ---------------------------------------------------
        # Calls may force every concurrently live temp into a frame slot, so
        # size the spill area by the worst-case temp pressure, not just the
        # overflow beyond the three temp registers.
        need = max((_stmt_need(s) for s in _walk_stmts(fn.body)), default=0)
        self.n_spill = need + 1
        off = 0
        self.link_off = None
        if self.makes_calls and not self.is_main:
            self.link_off = off
            off += GRANULE
        self.save_offs: dict[int, int] = {}
        if not self.is_main:
            used = sorted(set(self.pool.values()) | set(self.capreg.values())
                          | ({self.res_w, self.res_r} - {None}))
            for r in used:
                self.save_offs[r] = off
                off += GRANULE
        self.slot_off: dict[str, int] = {}
        self.slot_bytes: dict[str, int] = {}
        for decl in self.storage:
            words = self.env[decl.name].size
            nbytes = GRANULE if words is None else 8 * words
            self.slot_off[decl.name] = off
            self.slot_bytes[decl.name] = nbytes
            off += (nbytes + GRANULE - 1) // GRANULE * GRANULE
        self.spill_base = off
        off += GRANULE * self.n_spill
        self.frame = (off + GRANULE - 1) // GRANULE * GRANULE

        # --- temp machinery ---------------------------------------------------
        self.free_regs = list(TEMP_REGS)
        self.active: list[_Temp] = []
        self.free_slots = list(range(self.n_spill))
        self.labelno = 0

    # -- temps ---------------------------------------------------------------

    def _spill_one(self):
        for t in self.active:
            if t.reg is not None and not t.pinned:
                victim = t
                break
        else:  # pragma: no cover - static bound prevents this
            raise AssertionError("temporary registers exhausted")
        assert self.free_slots, "spill slots exhausted"
        victim.slot = self.free_slots.pop(0)
        offs = self.spill_base + GRANULE * victim.slot
        self.em.ins(f"CSC x{victim.reg}, {offs}(x2)", prov=("spill", victim.level))
        self.free_regs.append(victim.reg)
        victim.reg = None

    def _take_reg(self) -> int:
        if not self.free_regs:
            self._spill_one()
        return self.free_regs.pop(0)

    def acquire(self, level: int) -> _Temp:
        t = _Temp(self._take_reg(), level)
        self.active.append(t)
        return t

    def temp_reg(self, t: _Temp) -> int:
        if t.reg is None:
            t.reg = self._take_reg()
            offs = self.spill_base + GRANULE * t.slot
            self.em.ins(f"CLC x{t.reg}, {offs}(x2)")
            self.free_slots.append(t.slot)
            self.free_slots.sort()
            t.slot = None
        return t.reg

    def release(self, t: _Temp):
        self.active.remove(t)
        if t.reg is not None:
            self.free_regs.append(t.reg)
            self.free_regs.sort()
        elif t.slot is not None:
            self.free_slots.append(t.slot)
            self.free_slots.sort()

    # -- operand helpers -------------------------------------------------------

    def op_reg(self, o: _Operand, pin: bool = True) -> int:
        """Materialize the operand in a register (pinned against spills)."""
        if o.kind == "reg":
            return o.value
        if o.kind == "temp":
            r = self.temp_reg(o.temp)
            if pin:
                o.temp.pinned = True
            return r
        # constant
        t = self.acquire(o.level)
        self.em.ins(f"LI x{t.reg}, {o.value}")
        o.kind = "temp"
        o.temp = t
        o.value = None
        if pin:
            t.pinned = True
        return t.reg

    def unpin(self, *ops: _Operand):
        for o in ops:
            if o.kind == "temp" and o.temp is not None:
                o.temp.pinned = False

    def free_op(self, o: _Operand):
        if o.kind == "temp" and o.temp is not None:
            o.temp.pinned = False
            self.release(o.temp)
            o.temp = None

    def result_temp(self, *consumed: _Operand, level: int) -> _Temp:
        """Reuse the first consumed temp as the result, releasing the rest."""
        out = None
        for o in consumed:
            if out is None and o.kind == "temp" and o.temp is not None \
                    and o.temp.reg is not None:
                out = o.temp
                o.temp.pinned = False
                o.temp = None
            else:
                self.free_op(o)
        if out is None:
            out = self.acquire(level)
        out.level = level
        return out

    def new_label(self, tag: str) -> str:
        self.labelno += 1
        return f".L_{self.fn.name}_{tag}{self.labelno}"

    # -- variable access --------------------------------------------------------

    def _ginfo(self, name: str):
        return self.p.analysis.globals.get(name)

    def load_var(self, e: N.VarRef) -> _Operand:
        name = e.name
        if name in self.pool:
            info = self.env[name]
            return _fixed(self.pool[name], info.level)
        if name in self.capreg:
            info = self.env[name]
            if info.kind == "array":
                return _fixed(self.capreg[name], UNBLINDED)
            # annotated blinded scalar: load through its slot capability
            t = self.acquire(info.level)
            self.em.ins(f"CLC x{t.reg}, 0(x{self.capreg[name]})")
            return _Operand("temp", temp=t, level=info.level)
        ginfo = self._ginfo(name)
        if ginfo is not None:
            if ginfo.is_arrayish:
                return self.global_array_cap(name)
            sect, offs = self.p.global_offsets[name]
            base = 4 if sect == "blinded" else 3
            t = self.acquire(ginfo.level)
            self.em.ins(f"LD x{t.reg}, {offs}(x{base})")
            return _Operand("temp", temp=t, level=ginfo.level)
        raise LoweringError(Diagnostic(
            "error", "E_UNDEF", f"undefined variable '{name}'",
            e.line, e.col, self.p.prog.filename))

    def global_array_cap(self, name: str) -> _Operand:
        ginfo = self._ginfo(name)
        sect, offs = self.p.global_offsets[name]
        base = 4 if sect == "blinded" else 3
        t = self.acquire(UNBLINDED)
        self.em.ins(f"LI x9, {offs}")
        if self.purecap:
            self.em.ins(f"CINCOFFSET x{t.reg}, x{base}, x9")
            self.em.ins(f"LI x9, {8 * ginfo.size}")
            self.em.ins(f"CSETBOUNDS x{t.reg}, x{t.reg}, x9")
        else:
            self.em.ins(f"ADD x{t.reg}, x{base}, x9")
        return _Operand("temp", temp=t, level=UNBLINDED)

    def store_var(self, name: str, val: _Operand, node: N.Node):
        r = self.op_reg(val)
        if name in self.pool:
            self.em.ins(f"MV x{self.pool[name]}, x{r}")
        elif name in self.capreg:
            info = self.env[name]
            self.em.ins(f"CSC x{r}, 0(x{self.capreg[name]})",
                        prov=(name, info.level))
        else:
            ginfo = self._ginfo(name)
            if ginfo is None:
                raise LoweringError(Diagnostic(
                    "error", "E_UNDEF", f"undefined variable '{name}'",
                    node.line, node.col, self.p.prog.filename))
            sect, offs = self.p.global_offsets[name]
            base = 4 if sect == "blinded" else 3
            self.em.ins(f"SD x{r}, {offs}(x{base})", prov=(name, ginfo.level))
        self.unpin(val)
        self.free_op(val)

    def array_ea(self, name: str, idx: _Operand, node: N.Node):
        """Emit index scaling into x9; return (cap_reg_text, owner_operand)."""
        ir = self.op_reg(idx)
        self.em.ins(f"SLL x9, x{ir}, x8")
        self.unpin(idx)
        if name in self.capreg:
            return f"x{self.capreg[name]}", None
        if name in self.pool:  # heap handle or array parameter
            return f"x{self.pool[name]}", None
        ginfo = self._ginfo(name)
        if ginfo is None or not ginfo.is_arrayish:
            raise LoweringError(Diagnostic(
                "error", "E_NOT_ARRAY", f"'{name}' is not an array",
                node.line, node.col, self.p.prog.filename))
        sect, offs = self.p.global_offsets[name]
        base = 4 if sect == "blinded" else 3
        if offs:
            self.em.ins(f"ADDI x9, x9, {offs}")
        return f"x{base}", None

    # -- expressions -----------------------------------------------------------

    def const_element(self, name: str, idx: int, node: N.Node):
        """Return 'off(xN)' addressing for a constant array index."""
        if name in self.capreg:
            return f"{8 * idx}(x{self.capreg[name]})"
        if name in self.pool:
            return f"{8 * idx}(x{self.pool[name]})"
        ginfo = self._ginfo(name)
        if ginfo is None or not ginfo.is_arrayish:
            raise LoweringError(Diagnostic(
                "error", "E_NOT_ARRAY", f"'{name}' is not an array",
                node.line, node.col, self.p.prog.filename))
        sect, offs = self.p.global_offsets[name]
        base = 4 if sect == "blinded" else 3
        return f"{offs + 8 * idx}(x{base})"

    def eval_expr(self, e: N.Expr) -> _Operand:
        if isinstance(e, N.Num):
            return _const(e.value, e.level)
        if isinstance(e, N.VarRef):
            return self.load_var(e)
        if isinstance(e, N.IndexRef):
            if isinstance(e.index, N.Num):
                t = self.acquire(e.level)
                self.em.ins(f"LD x{t.reg}, {self.const_element(e.name, e.index.value, e)}")
                return _Operand("temp", temp=t, level=e.level)
            idx = self.eval_expr(e.index)
            cap, _ = self.array_ea(e.name, idx, e)
            t = self.result_temp(idx, level=e.level)
            self.em.ins(f"LDX x{t.reg}, x9({cap})")
            return _Operand("temp", temp=t, level=e.level)
        if isinstance(e, N.Unary):
            return self.eval_unary(e)
        if isinstance(e, N.Binary):
            return self.eval_binary(e)
        if isinstance(e, N.Call):
            return self.eval_call(e)
        if isinstance(e, N.Declassify):
            return self.eval_declassify(e)
        if isinstance(e, N.AllocExpr):
            return self.eval_alloc(e)
        raise TypeError(f"unknown expression {type(e).__name__}")

    def eval_unary(self, e: N.Unary) -> _Operand:
        v = self.eval_expr(e.operand)
        r = self.op_reg(v)
        t = self.result_temp(v, level=e.level)
        if e.op == "-":
            self.em.ins(f"SUB x{t.reg}, x0, x{r}")
        elif e.op == "~":
            self.em.ins(f"XORI x{t.reg}, x{r}, -1")
        elif e.op == "!":
            self.em.ins(f"SLTU x{t.reg}, x0, x{r}")
            self.em.ins(f"XORI x{t.reg}, x{t.reg}, 1")
        else:  # pragma: no cover
            raise AssertionError(e.op)
        return _Operand("temp", temp=t, level=e.level)

    def eval_binary(self, e: N.Binary) -> _Operand:
        op = e.op
        lvl = e.level
        left = self.eval_expr(e.left)
        # Constant-fold the easy case so index math stays tight.
        if (left.kind == "const" and isinstance(e.right, N.Num)):
            return _const(_fold(op, left.value, e.right.value), lvl)
        right = self.eval_expr(e.right)
        if right.kind == "const" and op in _IMM_OPS:
            lr = self.op_reg(left)
            t = self.result_temp(left, level=lvl)
            self.em.ins(f"{_IMM_OPS[op]} x{t.reg}, x{lr}, {right.value}")
            self.free_op(right)
            return _Operand("temp", temp=t, level=lvl)
        if right.kind == "const" and op == "-":
            lr = self.op_reg(left)
            t = self.result_temp(left, level=lvl)
            self.em.ins(f"ADDI x{t.reg}, x{lr}, {-right.value}")
            self.free_op(right)
            return _Operand("temp", temp=t, level=lvl)
        if right.kind == "const" and op == "<":
            lr = self.op_reg(left)
            t = self.result_temp(left, level=lvl)
            self.em.ins(f"SLTI x{t.reg}, x{lr}, {right.value}")
            self.free_op(right)
            return _Operand("temp", temp=t, level=lvl)
        if right.kind == "const" and right.value == 0 and op in ("==", "!="):
            lr = self.op_reg(left)
            t = self.result_temp(left, level=lvl)
            self.em.ins(f"SLTU x{t.reg}, x0, x{lr}")
            if op == "==":
                self.em.ins(f"XORI x{t.reg}, x{t.reg}, 1")
            self.free_op(right)
            return _Operand("temp", temp=t, level=lvl)
        lr = self.op_reg(left)
        rr = self.op_reg(right)
        t = self.result_temp(left, right, level=lvl)
        self._emit_binop(t.reg, op, lr, rr)
        return _Operand("temp", temp=t, level=lvl)

    def _emit_binop(self, d: int, op: str, lr: int, rr: int) -> None:
        # Each sequence reads its sources in its first instruction only, so
        # the destination may alias either source register.
        simple = {"+": "ADD", "-": "SUB", "*": "MUL", "&": "AND", "|": "OR",
                  "^": "XOR", "<<": "SLL", ">>": "SRL", "<": "SLT"}
        if op in simple:
            self.em.ins(f"{simple[op]} x{d}, x{lr}, x{rr}")
        elif op == ">":
            self.em.ins(f"SLT x{d}, x{rr}, x{lr}")
        elif op == "<=":
            self.em.ins(f"SLT x{d}, x{rr}, x{lr}")
            self.em.ins(f"XORI x{d}, x{d}, 1")
        elif op == ">=":
            self.em.ins(f"SLT x{d}, x{lr}, x{rr}")
            self.em.ins(f"XORI x{d}, x{d}, 1")
        elif op == "==":
            self.em.ins(f"XOR x{d}, x{lr}, x{rr}")
            self.em.ins(f"SLTU x{d}, x0, x{d}")
            self.em.ins(f"XORI x{d}, x{d}, 1")
        elif op == "!=":
            self.em.ins(f"XOR x{d}, x{lr}, x{rr}")
            self.em.ins(f"SLTU x{d}, x0, x{d}")
        else:  # pragma: no cover
            raise AssertionError(op)

    def _emit_call(self, e: N.Call) -> None:
        args = []
        for a in e.args:
            o = self.eval_expr(a)
            if o.kind == "temp":
                o.temp.pinned = False
            args.append(o)
        for i, o in enumerate(args):
            r = self.op_reg(o)
            self.em.ins(f"MV x{ARG_REGS[i]}, x{r}")
            self.unpin(o)
            self.free_op(o)
        # Pool registers are callee-saved, but x5-x7 are not: spill any temp
        # still live in a register to its frame slot before transferring.
        for t in list(self.active):
            if t.reg is not None:
                assert self.free_slots, "spill slots exhausted"
                t.slot = self.free_slots.pop(0)
                offs = self.spill_base + GRANULE * t.slot
                self.em.ins(f"CSC x{t.reg}, {offs}(x2)", prov=("spill", t.level))
                self.free_regs.append(t.reg)
                self.free_regs.sort()
                t.reg = None
        if self.purecap:
            self.em.ins(f"LI x29, fn_{e.name}")
            self.em.ins("CINCOFFSET x30, x31, x29")
            self.em.ins("CJALR x1, x30")
        else:
            self.em.ins(f"LI x30, fn_{e.name}")
            self.em.ins("CJALR x1, x30")

    def eval_call(self, e: N.Call) -> _Operand:
        self._emit_call(e)
        t = self.acquire(e.level)
        self.em.ins(f"MV x{t.reg}, x10")
        return _Operand("temp", temp=t, level=e.level)

    def eval_declassify(self, e: N.Declassify) -> _Operand:
        v = self.eval_expr(e.operand)
        r = self.op_reg(v)
        if not self.purecap:
            t = self.result_temp(v, level=UNBLINDED)
            if t.reg != r:
                self.em.ins(f"MV x{t.reg}, x{r}")
            return _Operand("temp", temp=t, level=UNBLINDED)
        self.em.ins(f"SD x{r}, 0(x{self.res_w})",
                    prov=("declassify", e.operand.level))
        t = self.result_temp(v, level=UNBLINDED)
        self.em.ins(f"LD x{t.reg}, 0(x{self.res_r})")
        return _Operand("temp", temp=t, level=UNBLINDED)

    def eval_alloc(self, e: N.AllocExpr) -> _Operand:
        size = self.eval_expr(e.size)
        blinded = e.blinded and self.blinding
        code = SVC_BMALLOC if blinded else SVC_MALLOC
        if size.kind == "const":
            self.em.ins(f"LI x11, {8 * size.value}")
            self.free_op(size)
        else:
            r = self.op_reg(size)
            self.em.ins(f"SLL x11, x{r}, x8")
            self.unpin(size)
            self.free_op(size)
        self.em.ins(f"LI x10, {code}")
        self.em.ins("ECALL")
        t = self.acquire(UNBLINDED)
        self.em.ins(f"MV x{t.reg}, x10")
        return _Operand("temp", temp=t, level=UNBLINDED)

    # -- destination-directed evaluation ----------------------------------------
    #
    # When the destination is a plain register (a pool variable, or x9 for
    # return values), most expressions can write their result straight into
    # it instead of routing through a temp plus a MV.  Every multi-instruction
    # sequence used here reads its source registers in its first instruction
    # only, so the destination may alias any operand register.

    def eval_into(self, dest: int, e: N.Expr) -> None:
        if isinstance(e, N.Num):
            self.em.ins(f"LI x{dest}, {e.value}")
            return
        if isinstance(e, N.VarRef):
            name = e.name
            if name in self.pool:
                r = self.pool[name]
                if r != dest:
                    self.em.ins(f"MV x{dest}, x{r}")
                return
            if name in self.capreg and self.env[name].kind != "array":
                self.em.ins(f"CLC x{dest}, 0(x{self.capreg[name]})")
                return
            ginfo = self._ginfo(name)
            if ginfo is not None and not ginfo.is_arrayish:
                sect, offs = self.p.global_offsets[name]
                base = 4 if sect == "blinded" else 3
                self.em.ins(f"LD x{dest}, {offs}(x{base})")
                return
            # arrays and anything unusual fall back to the generic path
        elif isinstance(e, N.IndexRef):
            if isinstance(e.index, N.Num):
                self.em.ins(
                    f"LD x{dest}, {self.const_element(e.name, e.index.value, e)}")
                return
            idx = self.eval_expr(e.index)
            cap, _ = self.array_ea(e.name, idx, e)
            self.free_op(idx)
            self.em.ins(f"LDX x{dest}, x9({cap})")
            return
        elif isinstance(e, N.Unary):
            v = self.eval_expr(e.operand)
            r = self.op_reg(v)
            if e.op == "-":
                self.em.ins(f"SUB x{dest}, x0, x{r}")
            elif e.op == "~":
                self.em.ins(f"XORI x{dest}, x{r}, -1")
            else:  # '!'
                self.em.ins(f"SLTU x{dest}, x0, x{r}")
                self.em.ins(f"XORI x{dest}, x{dest}, 1")
            self.unpin(v)
            self.free_op(v)
            return
        elif isinstance(e, N.Binary):
            self.binary_into(dest, e)
            return
        elif isinstance(e, N.Call):
            self._emit_call(e)
            self.em.ins(f"MV x{dest}, x10")
            return
        elif isinstance(e, N.Declassify):
            v = self.eval_expr(e.operand)
            r = self.op_reg(v)
            if self.purecap:
                self.em.ins(f"SD x{r}, 0(x{self.res_w})",
                            prov=("declassify", e.operand.level))
                self.em.ins(f"LD x{dest}, 0(x{self.res_r})")
            elif r != dest:
                self.em.ins(f"MV x{dest}, x{r}")
            self.unpin(v)
            self.free_op(v)
            return
        o = self.eval_expr(e)
        r = self.op_reg(o)
        if r != dest:
            self.em.ins(f"MV x{dest}, x{r}")
        self.unpin(o)
        self.free_op(o)

    def binary_into(self, dest: int, e: N.Binary) -> None:
        op = e.op
        left = self.eval_expr(e.left)
        if left.kind == "const" and isinstance(e.right, N.Num):
            self.em.ins(f"LI x{dest}, {_fold(op, left.value, e.right.value)}")
            return
        right = self.eval_expr(e.right)
        if right.kind == "const":
            if op in _IMM_OPS:
                lr = self.op_reg(left)
                self.em.ins(f"{_IMM_OPS[op]} x{dest}, x{lr}, {right.value}")
                self.unpin(left)
                self.free_op(left)
                return
            if op == "-":
                lr = self.op_reg(left)
                self.em.ins(f"ADDI x{dest}, x{lr}, {-right.value}")
                self.unpin(left)
                self.free_op(left)
                return
            if op == "<":
                lr = self.op_reg(left)
                self.em.ins(f"SLTI x{dest}, x{lr}, {right.value}")
                self.unpin(left)
                self.free_op(left)
                return
            if right.value == 0 and op in ("==", "!="):
                lr = self.op_reg(left)
                self.em.ins(f"SLTU x{dest}, x0, x{lr}")
                if op == "==":
                    self.em.ins(f"XORI x{dest}, x{dest}, 1")
                self.unpin(left)
                self.free_op(left)
                return
        lr = self.op_reg(left)
        rr = self.op_reg(right)
        self._emit_binop(dest, op, lr, rr)
        self.unpin(left)
        self.free_op(left)
        self.unpin(right)
        self.free_op(right)

    # -- statements ---------------------------------------------------------------

    def stmts(self, body: list[N.Stmt]):
        for s in body:
            self.stmt(s)

    def stmt(self, s: N.Stmt):
        if isinstance(s, N.VarDecl):
            self.lower_decl(s)
        elif isinstance(s, N.Assign):
            if s.name in self.pool:
                self.eval_into(self.pool[s.name], s.value)
            else:
                v = self.eval_expr(s.value)
                self.store_var(s.name, v, s)
        elif isinstance(s, N.StoreIdx):
            info = self.env.get(s.name) or self._ginfo(s.name)
            lvl = info.level if info is not None else UNBLINDED
            val = self.eval_expr(s.value)
            if isinstance(s.index, N.Num):
                vr = self.op_reg(val)
                self.em.ins(
                    f"SD x{vr}, {self.const_element(s.name, s.index.value, s)}",
                    prov=(s.name, lvl))
                self.unpin(val)
                self.free_op(val)
            else:
                idx = self.eval_expr(s.index)
                vr = self.op_reg(val)
                cap, _ = self.array_ea(s.name, idx, s)
                self.em.ins(f"SDX x{vr}, x9({cap})", prov=(s.name, lvl))
                self.unpin(val)
                self.free_op(val)
                self.free_op(idx)
        elif isinstance(s, N.If):
            self.lower_if(s)
        elif isinstance(s, N.While):
            self.lower_while(s)
        elif isinstance(s, N.Return):
            if s.value is not None:
                self.eval_into(9, s.value)
            else:
                self.em.ins("MV x9, x0")
            self.em.ins(f"J .L_{self.fn.name}_epi")
        elif isinstance(s, N.Out):
            v = self.eval_expr(s.value)
            r = self.op_reg(v)
            self.em.ins(f"OUT x{r}")
            self.unpin(v)
            self.free_op(v)
        elif isinstance(s, N.Free):
            v = self.eval_expr(s.target)
            r = self.op_reg(v)
            self.em.ins(f"MV x11, x{r}")
            self.unpin(v)
            self.free_op(v)
            self.em.ins(f"LI x10, {SVC_DEALLOC}")
            self.em.ins("ECALL")
        elif isinstance(s, N.ExprStmt):
            v = self.eval_expr(s.call)
            self.free_op(v)
        else:  # pragma: no cover
            raise AssertionError(type(s).__name__)

    def lower_decl(self, s: N.VarDecl):
        if s.name in self.capreg:
            info = self.env[s.name]
            if s.size is None:
                # annotated blinded scalar: initialize its slot
                if s.init is not None:
                    v = self.eval_expr(s.init)
                    r = self.op_reg(v)
                    self.em.ins(f"CSC x{r}, 0(x{self.capreg[s.name]})",
                                prov=(s.name, info.level))
                    self.unpin(v)
                    self.free_op(v)
                else:
                    self.em.ins(f"CSC x0, 0(x{self.capreg[s.name]})",
                                prov=(s.name, UNBLINDED))
            return  # arrays take no decl-site code
        if s.init is not None:
            self.eval_into(self.pool[s.name], s.init)
        else:
            self.em.ins(f"MV x{self.pool[s.name]}, x0")

    def _branch_over(self, cond: N.Expr, target: str):
        """Branch to target when cond is FALSE (public conditions only)."""
        if isinstance(cond, N.Binary) and cond.op in ("==", "!=", "<", "<=",
                                                      ">", ">="):
            a, b = cond.left, cond.right
            if cond.op in ("==", "!=") and isinstance(b, N.Num) and b.value == 0:
                v = self.eval_expr(a)
                r = self.op_reg(v)
                br = "BNE" if cond.op == "==" else "BEQ"
                self.em.ins(f"{br} x{r}, x0, {target}")
                self.unpin(v)
                self.free_op(v)
                return
            l = self.eval_expr(a)
            rr = self.eval_expr(b)
            lr = self.op_reg(l)
            r2 = self.op_reg(rr)
            if cond.op == "==":
                t = self.result_temp(l, rr, level=cond.level)
                self.em.ins(f"XOR x{t.reg}, x{lr}, x{r2}")
                self.em.ins(f"BNE x{t.reg}, x0, {target}")
                self.release(t)
                return
            if cond.op == "!=":
                t = self.result_temp(l, rr, level=cond.level)
                self.em.ins(f"XOR x{t.reg}, x{lr}, x{r2}")
                self.em.ins(f"BEQ x{t.reg}, x0, {target}")
                self.release(t)
                return
            # relational: branch on the inverse comparison
            if cond.op == "<":
                self.em.ins(f"BGE x{lr}, x{r2}, {target}")
            elif cond.op == ">=":
                self.em.ins(f"BLT x{lr}, x{r2}, {target}")
            elif cond.op == ">":
                self.em.ins(f"BGE x{r2}, x{lr}, {target}")
            else:  # <=
                self.em.ins(f"BLT x{r2}, x{lr}, {target}")
            self.unpin(l, rr)
            self.free_op(l)
            self.free_op(rr)
            return
        v = self.eval_expr(cond)
        r = self.op_reg(v)
        self.em.ins(f"BEQ x{r}, x0, {target}")
        self.unpin(v)
        self.free_op(v)

    def lower_if(self, s: N.If):
        els = self.new_label("else")
        end = self.new_label("endif")
        self._branch_over(s.cond, els if s.els else end)
        self.stmts(s.then)
        if s.els:
            self.em.ins(f"J {end}")
            self.em.label(els)
            self.stmts(s.els)
        self.em.label(end)

    def lower_while(self, s: N.While):
        head = self.new_label("while")
        end = self.new_label("endwhile")
        self.em.label(head)
        self._branch_over(s.cond, end)
        self.stmts(s.body)
        self.em.ins(f"J {head}")
        self.em.label(end)

    # -- whole function -------------------------------------------------------------

    def emit(self):
        em = self.em
        if self.is_main:
            em.label("main")
        em.label(f"fn_{self.fn.name}")
        # frame push
        if self.frame:
            if self.purecap:
                em.ins(f"LI x9, {-self.frame}")
                em.ins("CINCOFFSET x2, x2, x9")
            else:
                em.ins(f"ADDI x2, x2, {-self.frame}")
        if self.link_off is not None:
            em.ins(f"CSC x1, {self.link_off}(x2)", prov=("save:ra", UNBLINDED))
        # Callee saves hold the caller's register state, which may carry
        # blinded values; the spill channel is designed for that, so the
        # static level of these stores is may-blinded.
        for r, offs in self.save_offs.items():
            em.ins(f"CSC x{r}, {offs}(x2)", prov=(f"save:x{r}", MAY))
        em.ins("LI x8, 3")
        for i, prm in enumerate(self.fn.params):
            em.ins(f"MV x{self.pool[prm.name]}, x{ARG_REGS[i]}")
        # derive storage capabilities
        for decl in self.storage:
            name = decl.name
            cr = self.capreg[name]
            offs = self.slot_off[name]
            nbytes = self.slot_bytes[name]
            if self.purecap:
                em.ins(f"LI x9, {offs}")
                em.ins(f"CINCOFFSET x{cr}, x2, x9")
                em.ins(f"LI x9, {nbytes}")
                em.ins(f"CSETBOUNDS x{cr}, x{cr}, x9")
                if decl.blind_storage and self.blinding:
                    em.ins(f"LI x9, {PERM_LOAD | PERM_STORE}")
                    em.ins(f"CANDPERM x{cr}, x{cr}, x9")
            else:
                em.ins(f"LI x9, {offs}")
                em.ins(f"ADD x{cr}, x2, x9")
        if self.uses_declassify and self.purecap:
            em.ins(f"LI x10, {SVC_RESULT_ALLOC}")
            em.ins("LI x11, 8")
            em.ins("ECALL")
            em.ins(f"MV x{self.res_w}, x10")
            em.ins(f"MV x{self.res_r}, x11")

        self.stmts(self.fn.body)

        if not self.is_main:
            em.ins("MV x9, x0")  # fall-through returns 0
        em.label(f".L_{self.fn.name}_epi")
        if self.blinding and self.purecap:
            for decl in self.storage:
                if not decl.blind_storage:
                    continue
                name = decl.name
                cr = self.capreg[name]
                words = self.env[name].size
                if words is None:
                    em.ins(f"SD x0, 0(x{cr})", prov=(f"zeroize:{name}", UNBLINDED))
                elif words <= 4:
                    for w in range(words):
                        em.ins(f"SD x0, {8 * w}(x{cr})",
                               prov=(f"zeroize:{name}", UNBLINDED))
                else:
                    lz = self.new_label("zero")
                    em.ins(f"LI x9, {8 * words}")
                    em.label(lz)
                    em.ins("ADDI x9, x9, -8")
                    em.ins(f"SDX x0, x9(x{cr})", prov=(f"zeroize:{name}", UNBLINDED))
                    em.ins(f"BNE x9, x0, {lz}")
        if self.uses_declassify and self.purecap:
            em.ins(f"MV x11, x{self.res_w}")
            em.ins(f"LI x10, {SVC_DEALLOC}")
            em.ins("ECALL")
        if self.is_main:
            em.ins("HALT")
            return
        for r, offs in self.save_offs.items():
            em.ins(f"CLC x{r}, {offs}(x2)")
        if self.link_off is not None:
            em.ins(f"CLC x1, {self.link_off}(x2)")
        if self.frame:
            if self.purecap:
                em.ins(f"LI x29, {self.frame}")
                em.ins("CINCOFFSET x2, x2, x29")
            else:
                em.ins(f"ADDI x2, x2, {self.frame}")
        em.ins("MV x10, x9")
        em.ins("CJALR x0, x1")

    def static_delta(self) -> int:
        """Predicted extra retired instructions (blinding on vs off)."""
        d = 0
        for decl in self.storage:
            if decl.blind_storage:
                d += 2  # LI mask + CANDPERM
                d += zeroization_cost(self.env[decl.name].size)
        return d


def _walk_decls_ordered(stmts):
    for s in stmts:
        if isinstance(s, N.VarDecl):
            yield s
        elif isinstance(s, N.If):
            yield from _walk_decls_ordered(s.then)
            yield from _walk_decls_ordered(s.els)
        elif isinstance(s, N.While):
            yield from _walk_decls_ordered(s.body)


def _fold(op: str, a: int, b: int) -> int:
    m = (1 << 64) - 1

    def s64(x):
        x &= m
        return x - (1 << 64) if x >= (1 << 63) else x

    a &= m
    b &= m
    if op == "+":
        return (a + b) & m
    if op == "-":
        return (a - b) & m
    if op == "*":
        return (a * b) & m
    if op == "&":
        return a & b
    if op == "|":
        return a | b
    if op == "^":
        return a ^ b
    if op == "<<":
        return (a << (b & 63)) & m
    if op == ">>":
        return a >> (b & 63)
    if op == "<":
        return 1 if s64(a) < s64(b) else 0
    if op == "<=":
        return 1 if s64(a) <= s64(b) else 0
    if op == ">":
        return 1 if s64(a) > s64(b) else 0
    if op == ">=":
        return 1 if s64(a) >= s64(b) else 0
    if op == "==":
        return 1 if a == b else 0
    if op == "!=":
        return 1 if a != b else 0
    raise AssertionError(op)


# ---------------------------------------------------------------------------


class _Lowerer:
    def __init__(self, prog: N.Program, analysis: AnalysisResult,
                 blinding: bool, mode: str):
        self.prog = prog
        self.analysis = analysis
        self.purecap = mode == "purecap"
        self.blinding = blinding and self.purecap
        self.mode = mode
        self.em = _Emitter()
        self.global_offsets: dict[str, tuple[str, int]] = {}

    def run(self) -> LoweredProgram:
        prog = self.prog
        if prog.function("main") is None:
            raise LoweringError(Diagnostic(
                "error", "E_NO_MAIN", "program has no 'main' function",
                prog.line, prog.col, prog.filename))
        header: list[str] = []
        if not self.blinding:
            header.append(".option noblind")
        data_words: list[int] = []
        blinded_words: list[int] = []
        for g in prog.globals:
            words = g.size or 1
            vals = [0] * words
            if isinstance(g.init, int):
                vals[0] = g.init
            elif isinstance(g.init, list):
                vals[:len(g.init)] = g.init
            target = blinded_words if g.blinded else data_words
            sect = "blinded" if g.blinded else "data"
            self.global_offsets[g.name] = (sect, 8 * len(target))
            target.extend(vals)
        if data_words:
            header.append(".data")
            header.extend(f"    .word {v}" for v in data_words)
        if blinded_words:
            header.append(".blinded")
            header.extend(f"    .word {v}" for v in blinded_words)
        header.append(".text")

        fn_delta: dict[str, int] = {}
        order = [prog.function("main")] + [f for f in prog.functions
                                           if f.name != "main"]
        for fn in order:
            fl = _FunctionLowerer(self, fn)
            fl.emit()
            fn_delta[fn.name] = fl.static_delta()

        asm = "\n".join(header + self.em.lines) + "\n"
        return LoweredProgram(asm=asm, provenance=self.em.provenance,
                              fn_delta=fn_delta,
                              global_offsets=self.global_offsets,
                              blinding=self.blinding, mode=self.mode)


def lower(prog: N.Program, analysis: AnalysisResult, *, blinding: bool = True,
          mode: str = "purecap") -> LoweredProgram:
    return _Lowerer(prog, analysis, blinding, mode).run()
