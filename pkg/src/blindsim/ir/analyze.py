"""Static blindedness analysis.

Every variable carries a level from the three-point lattice
``unblinded < may-blinded < must-blinded``.  For scalars the level describes
the value; for arrays, allocations, and array parameters it describes the
*contents*.  The analysis is flow-insensitive: assignments only ever raise
levels, and an assignment nested under a conditional raises its target at
most to may-blinded (the other path may leave it untouched).

Sources of blindedness:

* declarations and parameters annotated ``blinded``
* ``bmalloc`` results (their contents)
* loads out of blinded arrays

Calls transfer blindedness through *declared* annotations only: a parameter
is blinded iff annotated, a call result is blinded iff the callee carries the
function-level ``blinded`` attribute.  Undeclared blinded flow across a call
boundary is flagged with a warning (W_BLINDED_ARG / W_BLINDED_RETURN) and is
caught at runtime by the machine's taint tracking.

Diagnostics print as ``file:line:col: severity CODE message``.  Errors abort
a build; warnings do not.  A program with no errors *and* no warnings is
guaranteed never to trip a blindedness fault at runtime.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import nodes as N
from .nodes import MAY, MUST, UNBLINDED

MAX_CALL_ARGS = 4


@dataclass
class Diagnostic:
    severity: str            # 'error' | 'warning'
    code: str
    message: str
    line: int
    col: int
    filename: str = "<input>"

    def __str__(self) -> str:
        return (f"{self.filename}:{self.line}:{self.col}: "
                f"{self.severity} {self.code} {self.message}")


class VarInfo:
    """Static facts about one variable (global or per-function)."""

    __slots__ = ("kind", "blinded", "size", "level", "alloc")

    def __init__(self, kind: str, blinded: bool, size=None):
        # kind: 'scalar' | 'array' | 'param' | 'param_array' | 'handle'
        self.kind = kind
        self.blinded = blinded            # annotated in the source
        self.size = size                  # word count for arrays
        self.level = MUST if blinded else UNBLINDED
        self.alloc = None                 # 'malloc' | 'bmalloc' for handles

    @property
    def is_arrayish(self) -> bool:
        return self.kind in ("array", "param_array", "handle")


@dataclass
class AnalysisResult:
    program: N.Program
    diagnostics: list[Diagnostic] = field(default_factory=list)
    # name -> VarInfo for globals; fn name -> {var name -> VarInfo}
    globals: dict = field(default_factory=dict)
    locals: dict = field(default_factory=dict)
    # fn name -> computed join of levels flowing into 'return'
    return_levels: dict = field(default_factory=dict)

    @property
    def errors(self) -> list[Diagnostic]:
        return [d for d in self.diagnostics if d.severity == "error"]

    @property
    def ok(self) -> bool:
        return not self.errors

    @property
    def clean(self) -> bool:
        return not self.diagnostics

    def level_of(self, fn: str | None, var: str) -> int:
        if fn is not None and var in self.locals.get(fn, {}):
            return self.locals[fn][var].level
        if var in self.globals:
            return self.globals[var].level
        return UNBLINDED


def _cap(level: int, conditional: bool) -> int:
    """An assignment under a conditional raises its target at most to MAY."""
    if conditional and level == MUST:
        return MAY
    return level


class Analyzer:
    def __init__(self, prog: N.Program):
        self.prog = prog
        self.res = AnalysisResult(program=prog)
        self.fns = {f.name: f for f in prog.functions}
        self.emit = False
        self.changed = False
        self.cur_fn: N.Function | None = None

        for g in prog.globals:
            kind = "array" if g.size is not None else "scalar"
            self.res.globals[g.name] = VarInfo(kind, g.blinded, g.size)
        for f in prog.functions:
            env: dict[str, VarInfo] = {}
            for p in f.params:
                env[p.name] = VarInfo("param_array" if p.is_array else "param",
                                      p.blinded)
            self._collect_decls(f, f.body, env)
            self.res.locals[f.name] = env
            self.res.return_levels[f.name] = UNBLINDED

    def _collect_decls(self, fn: N.Function, stmts: list[N.Stmt], env: dict):
        for s in stmts:
            if isinstance(s, N.VarDecl):
                if s.name in env:
                    self._diag_now("error", "E_REDECL",
                                   f"duplicate declaration of '{s.name}'", s)
                    continue
                kind = "array" if s.size is not None else "scalar"
                if s.size is None and isinstance(s.init, N.AllocExpr):
                    kind = "handle"
                env[s.name] = VarInfo(kind, s.blinded, s.size)
            elif isinstance(s, N.If):
                self._collect_decls(fn, s.then, env)
                self._collect_decls(fn, s.els, env)
            elif isinstance(s, N.While):
                self._collect_decls(fn, s.body, env)

    # ------------------------------------------------------------------

    def run(self) -> AnalysisResult:
        # Phase 1: iterate levels to a fixed point (lattice height is 2, so
        # this converges in a handful of whole-program passes).
        self.emit = False
        self.changed = True
        guard = 0
        while self.changed:
            self.changed = False
            for f in self.prog.functions:
                self.cur_fn = f
                self._stmts(f.body, conditional=False)
            guard += 1
            if guard > 64:  # pragma: no cover - lattice guarantees termination
                break
        # Phase 2: re-walk once with stable levels, emitting diagnostics and
        # annotating every expression node with its level.
        self.emit = True
        for f in self.prog.functions:
            self.cur_fn = f
            self._check_signature(f)
            self._stmts(f.body, conditional=False)
        return self.res

    # ------------------------------------------------------------------

    def _diag_now(self, severity: str, code: str, message: str, node: N.Node):
        self.res.diagnostics.append(Diagnostic(
            severity, code, message, node.line, node.col, self.prog.filename))

    def _diag(self, severity: str, code: str, message: str, node: N.Node):
        if self.emit:
            self._diag_now(severity, code, message, node)

    def _check_signature(self, f: N.Function):
        if len(f.params) > MAX_CALL_ARGS:
            self._diag_now("error", "E_ARITY",
                           f"function '{f.name}' takes more than "
                           f"{MAX_CALL_ARGS} parameters", f)
        if f.name == "main" and f.params:
            self._diag_now("error", "E_MAIN_PARAMS",
                           "'main' must not take parameters", f)

    def _lookup(self, name: str) -> VarInfo | None:
        env = self.res.locals.get(self.cur_fn.name, {})
        if name in env:
            return env[name]
        return self.res.globals.get(name)

    def _raise_var(self, info: VarInfo, level: int):
        if level > info.level and not info.blinded:
            info.level = level
            self.changed = True
        elif level > info.level:
            info.level = level  # annotated vars are already MUST
            self.changed = True

    # -- statements ------------------------------------------------------

    def _stmts(self, stmts: list[N.Stmt], conditional: bool):
        for s in stmts:
            self._stmt(s, conditional)

    def _stmt(self, s: N.Stmt, conditional: bool):
        if isinstance(s, N.VarDecl):
            info = self._lookup(s.name)
            if info is None:
                return
            if s.init is not None:
                lvl = self._expr(s.init)
                if isinstance(s.init, N.AllocExpr):
                    if info.kind == "handle":
                        if info.alloc is None or s.init.blinded:
                            info.alloc = "bmalloc" if s.init.blinded else "malloc"
                        if s.init.blinded:
                            self._raise_var(info, MUST)
                    if info.blinded:
                        self._diag("error", "E_CAP_IN_BLINDED",
                                   "allocation handle cannot live in blinded "
                                   "storage (capabilities may not be stored "
                                   "through blinded capabilities)", s)
                else:
                    self._raise_var(info, _cap(lvl, conditional))
        elif isinstance(s, N.Assign):
            info = self._lookup(s.name)
            if info is None:
                self._diag("error", "E_UNDEF", f"undefined variable '{s.name}'", s)
                self._expr(s.value)
                return
            lvl = self._expr(s.value)
            if isinstance(s.value, N.AllocExpr):
                if info.kind in ("scalar", "handle", "param"):
                    info.kind = "handle" if info.kind != "param" else info.kind
                    if info.alloc is None or s.value.blinded:
                        info.alloc = "bmalloc" if s.value.blinded else "malloc"
                    if s.value.blinded:
                        self._raise_var(info, MUST)
                if info.blinded:
                    self._diag("error", "E_CAP_IN_BLINDED",
                               "allocation handle cannot live in blinded storage", s)
                return
            if info.kind in ("array", "param_array"):
                self._diag("error", "E_BAD_ASSIGN",
                           f"cannot assign to array '{s.name}'", s)
                return
            self._raise_var(info, _cap(lvl, conditional))
        elif isinstance(s, N.StoreIdx):
            info = self._lookup(s.name)
            if info is None:
                self._diag("error", "E_UNDEF", f"undefined variable '{s.name}'", s)
                self._expr(s.index)
                self._expr(s.value)
                return
            if not info.is_arrayish:
                self._diag("error", "E_NOT_ARRAY",
                           f"'{s.name}' is not an array", s)
            ilvl = self._expr(s.index)
            self._index_diag(ilvl, s)
            vlvl = self._expr(s.value)
            self._raise_var(info, _cap(vlvl, conditional))
            if (info.kind == "param_array" and not info.blinded
                    and vlvl >= MAY):
                self._diag("warning", "W_MAYBE_BLINDED_STORE",
                           f"storing {N.LEVEL_NAMES[vlvl]} value through "
                           f"parameter array '{s.name}' whose blindedness is "
                           "unknown at this call boundary", s)
        elif isinstance(s, N.If):
            clvl = self._expr(s.cond)
            self._branch_diag(clvl, s)
            self._stmts(s.then, True)
            self._stmts(s.els, True)
        elif isinstance(s, N.While):
            clvl = self._expr(s.cond)
            self._branch_diag(clvl, s)
            self._stmts(s.body, True)
        elif isinstance(s, N.Return):
            lvl = UNBLINDED
            if s.value is not None:
                lvl = self._expr(s.value)
            f = self.cur_fn
            if lvl > self.res.return_levels[f.name]:
                self.res.return_levels[f.name] = lvl
                self.changed = True
            if lvl >= MAY and not f.blinded:
                self._diag("warning", "W_BLINDED_RETURN",
                           f"returning {N.LEVEL_NAMES[lvl]} value from "
                           f"'{f.name}', which is not declared blinded; "
                           "callers will treat the result as unblinded", s)
        elif isinstance(s, N.Out):
            lvl = self._expr(s.value)
            if lvl == MUST:
                self._diag("error", "E_BLINDED_OUT",
                           "blinded value reaches the output channel", s)
            elif lvl == MAY:
                self._diag("warning", "W_MAYBE_BLINDED_OUT",
                           "may-blinded value reaches the output channel", s)
        elif isinstance(s, N.Free):
            t = s.target
            if not (isinstance(t, N.VarRef) and (info := self._lookup(t.name))
                    and info.kind in ("handle", "param", "scalar")):
                self._diag("error", "E_BAD_FREE",
                           "free() takes a heap allocation handle", s)
            else:
                self._expr(t)
        elif isinstance(s, N.ExprStmt):
            self._expr(s.call)

    def _branch_diag(self, lvl: int, node: N.Node):
        if lvl == MUST:
            self._diag("error", "E_BLINDED_BRANCH",
                       "branch condition depends on blinded data", node)
        elif lvl == MAY:
            self._diag("warning", "W_MAYBE_BLINDED_BRANCH",
                       "branch condition may depend on blinded data", node)

    def _index_diag(self, lvl: int, node: N.Node):
        if lvl == MUST:
            self._diag("error", "E_BLINDED_INDEX",
                       "memory address depends on blinded data", node)
        elif lvl == MAY:
            self._diag("warning", "W_MAYBE_BLINDED_INDEX",
                       "memory address may depend on blinded data", node)

    # -- expressions -----------------------------------------------------

    def _expr(self, e: N.Expr) -> int:
        lvl = self._expr_inner(e)
        if self.emit:
            e.level = lvl
        return lvl

    def _expr_inner(self, e: N.Expr) -> int:
        if isinstance(e, N.Num):
            return UNBLINDED
        if isinstance(e, N.VarRef):
            info = self._lookup(e.name)
            if info is None:
                self._diag("error", "E_UNDEF",
                           f"undefined variable '{e.name}'", e)
                return UNBLINDED
            if info.is_arrayish:
                # The array handle itself (a capability) is never blinded;
                # only loads out of it are.
                return UNBLINDED
            return info.level
        if isinstance(e, N.IndexRef):
            info = self._lookup(e.name)
            if info is None:
                self._diag("error", "E_UNDEF",
                           f"undefined variable '{e.name}'", e)
                self._expr(e.index)
                return UNBLINDED
            if not info.is_arrayish:
                self._diag("error", "E_NOT_ARRAY",
                           f"'{e.name}' is not an array", e)
            ilvl = self._expr(e.index)
            self._index_diag(ilvl, e)
            return max(info.level, ilvl)
        if isinstance(e, N.Unary):
            return self._expr(e.operand)
        if isinstance(e, N.Binary):
            l = self._expr(e.left)
            r = self._expr(e.right)
            return max(l, r)
        if isinstance(e, N.Declassify):
            self._expr(e.operand)
            return UNBLINDED
        if isinstance(e, N.AllocExpr):
            slvl = self._expr(e.size)
            if slvl == MUST:
                self._diag("error", "E_BLINDED_SIZE",
                           "allocation size depends on blinded data", e)
            elif slvl == MAY:
                self._diag("warning", "W_MAYBE_BLINDED_SIZE",
                           "allocation size may depend on blinded data", e)
            return UNBLINDED
        if isinstance(e, N.Call):
            callee = self.fns.get(e.name)
            if callee is None:
                self._diag("error", "E_UNDEF_FN",
                           f"call to undefined function '{e.name}'", e)
                for a in e.args:
                    self._expr(a)
                return UNBLINDED
            if len(e.args) != len(callee.params):
                self._diag("error", "E_ARITY",
                           f"'{e.name}' takes {len(callee.params)} "
                           f"argument(s), got {len(e.args)}", e)
            for a, p in zip(e.args, callee.params):
                alvl = self._expr(a)
                # For array arguments the relevant level is the contents.
                if (isinstance(a, N.VarRef)
                        and (ai := self._lookup(a.name)) is not None
                        and ai.is_arrayish):
                    alvl = ai.level
                    if p is not None and not p.is_array:
                        self._diag("error", "E_BAD_ARG",
                                   f"array '{a.name}' passed to scalar "
                                   f"parameter '{p.name}'", a)
                elif p is not None and p.is_array:
                    self._diag("error", "E_BAD_ARG",
                               f"scalar passed to array parameter '{p.name}'", a)
                if p is not None and alvl >= MAY and not p.blinded:
                    self._diag("warning", "W_BLINDED_ARG",
                               f"passing {N.LEVEL_NAMES[alvl]} value to "
                               f"parameter '{p.name}' of '{e.name}', which is "
                               "not declared blinded", a)
            return MUST if callee.blinded else UNBLINDED
        raise TypeError(f"unknown expression node {type(e).__name__}")


def analyze(prog: N.Program) -> AnalysisResult:
    return Analyzer(prog).run()
