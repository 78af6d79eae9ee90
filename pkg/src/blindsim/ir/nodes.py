"""AST node definitions for the mini source language.

The language is a small C-like expression language over 64-bit words:

* scalar variables and fixed-size word arrays, at global or function scope
* a ``blinded`` storage qualifier on declarations (and on whole functions,
  where it declares the return value blinded)
* ``if``/``else``, ``while``, assignments, calls, ``return``
* builtins: ``malloc``, ``bmalloc``, ``free``, ``declassify``
* ``out e;`` writes a word to the machine's output channel

There is deliberately no ``&&``/``||`` (they would lower to hidden branches)
and no division (the target ISA has none).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union


# Blindedness lattice values attached to expressions/variables by analysis.
UNBLINDED = 0
MAY = 1
MUST = 2

LEVEL_NAMES = {UNBLINDED: "unblinded", MAY: "may-blinded", MUST: "blinded"}


@dataclass
class Node:
    line: int = field(default=0, kw_only=True)
    col: int = field(default=0, kw_only=True)


# --------------------------------------------------------------------------
# Expressions
# --------------------------------------------------------------------------

@dataclass
class Expr(Node):
    # Filled in by analysis: UNBLINDED / MAY / MUST.
    level: int = field(default=UNBLINDED, kw_only=True)


@dataclass
class Num(Expr):
    value: int = 0


@dataclass
class VarRef(Expr):
    name: str = ""


@dataclass
class IndexRef(Expr):
    """``name[index]`` — load from an array variable."""

    name: str = ""
    index: Expr = None


@dataclass
class Unary(Expr):
    op: str = ""  # '-', '!', '~'
    operand: Expr = None


@dataclass
class Binary(Expr):
    op: str = ""  # * + - << >> < <= > >= == != & ^ |
    left: Expr = None
    right: Expr = None


@dataclass
class Call(Expr):
    name: str = ""
    args: list[Expr] = field(default_factory=list)


@dataclass
class Declassify(Expr):
    operand: Expr = None


@dataclass
class AllocExpr(Expr):
    """``malloc(n)`` / ``bmalloc(n)`` — n is a word count."""

    blinded: bool = False
    size: Expr = None


# --------------------------------------------------------------------------
# Statements
# --------------------------------------------------------------------------

@dataclass
class Stmt(Node):
    pass


@dataclass
class VarDecl(Stmt):
    name: str = ""
    blinded: bool = False          # written in the source
    size: Optional[int] = None     # None = scalar, else word count
    init: Optional[Expr] = None    # scalar initializer expression
    # Set by instrumentation: storage must be allocated blinded.
    blind_storage: bool = field(default=False, kw_only=True)


@dataclass
class Assign(Stmt):
    name: str = ""
    value: Expr = None


@dataclass
class StoreIdx(Stmt):
    """``name[index] = value;``"""

    name: str = ""
    index: Expr = None
    value: Expr = None


@dataclass
class If(Stmt):
    cond: Expr = None
    then: list[Stmt] = field(default_factory=list)
    els: list[Stmt] = field(default_factory=list)


@dataclass
class While(Stmt):
    cond: Expr = None
    body: list[Stmt] = field(default_factory=list)


@dataclass
class Return(Stmt):
    value: Optional[Expr] = None


@dataclass
class Out(Stmt):
    value: Expr = None


@dataclass
class Free(Stmt):
    target: Expr = None


@dataclass
class ExprStmt(Stmt):
    """A bare call used for its side effects."""

    call: Call = None


# --------------------------------------------------------------------------
# Top level
# --------------------------------------------------------------------------

@dataclass
class Param(Node):
    name: str = ""
    blinded: bool = False
    is_array: bool = False


@dataclass
class GlobalVar(Node):
    name: str = ""
    blinded: bool = False
    size: Optional[int] = None           # None = scalar
    init: Union[int, list[int], None] = None


@dataclass
class Function(Node):
    name: str = ""
    blinded: bool = False                # function-level attribute: return is blinded
    params: list[Param] = field(default_factory=list)
    body: list[Stmt] = field(default_factory=list)


@dataclass
class Program(Node):
    filename: str = "<input>"
    globals: list[GlobalVar] = field(default_factory=list)
    functions: list[Function] = field(default_factory=list)

    def function(self, name: str) -> Optional[Function]:
        for f in self.functions:
            if f.name == name:
                return f
        return None
