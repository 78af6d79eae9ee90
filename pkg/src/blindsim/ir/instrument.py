"""Instrumentation pass: decide which storage must be allocated blinded.

Runs after analysis and marks the AST in place:

* every local with storage (arrays, and scalars annotated ``blinded``) whose
  contents are may- or must-blinded gets ``blind_storage`` set — lowering
  will derive its capability with the non-oblivious permission cleared and
  zeroize it on every function exit path;
* heap allocations whose contents turn out to carry blinded data are
  upgraded from ``malloc`` to ``bmalloc`` so the runtime hands back a
  blinded capability.

The pass never changes program meaning for unblinded data; it only widens
where secrets are allowed to live.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import nodes as N
from .analyze import AnalysisResult
from .nodes import MAY


@dataclass
class InstrumentationReport:
    # fn name -> names of locals whose storage is allocated blinded
    blinded_storage: dict[str, list[str]] = field(default_factory=dict)
    # fn name -> names of handles whose allocation was upgraded to bmalloc
    upgraded_allocs: dict[str, list[str]] = field(default_factory=dict)


def _walk_decls(stmts):
    for s in stmts:
        if isinstance(s, N.VarDecl):
            yield s
        elif isinstance(s, N.If):
            yield from _walk_decls(s.then)
            yield from _walk_decls(s.els)
        elif isinstance(s, N.While):
            yield from _walk_decls(s.body)


def _walk_alloc_sites(stmts):
    """Yield (target name, AllocExpr) for every allocation bound to a var."""
    for s in stmts:
        if isinstance(s, N.VarDecl) and isinstance(s.init, N.AllocExpr):
            yield s.name, s.init
        elif isinstance(s, N.Assign) and isinstance(s.value, N.AllocExpr):
            yield s.name, s.value
        elif isinstance(s, N.If):
            yield from _walk_alloc_sites(s.then)
            yield from _walk_alloc_sites(s.els)
        elif isinstance(s, N.While):
            yield from _walk_alloc_sites(s.body)


def instrument(prog: N.Program, analysis: AnalysisResult) -> InstrumentationReport:
    report = InstrumentationReport()
    for fn in prog.functions:
        env = analysis.locals.get(fn.name, {})
        blinded_names: list[str] = []
        for decl in _walk_decls(fn.body):
            info = env.get(decl.name)
            if info is None:
                continue
            has_storage = decl.size is not None or decl.blinded
            if info.kind == "handle":
                has_storage = False  # lives in a register; heap side handled below
            if has_storage and (decl.blinded or info.level >= MAY):
                if not decl.blind_storage:
                    decl.blind_storage = True
                if decl.name not in blinded_names:
                    blinded_names.append(decl.name)
        upgraded: list[str] = []
        for name, alloc in _walk_alloc_sites(fn.body):
            info = env.get(name)
            if info is None:
                continue
            if info.level >= MAY and not alloc.blinded:
                alloc.blinded = True
                if name not in upgraded:
                    upgraded.append(name)
        if blinded_names:
            report.blinded_storage[fn.name] = blinded_names
        if upgraded:
            report.upgraded_allocs[fn.name] = upgraded
    return report
