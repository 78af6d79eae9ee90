"""Mini compiler: C-like secret-aware source -> toy-ISA assembly.

Pipeline: :func:`parse` -> :func:`analyze` -> :func:`instrument` ->
:func:`lower`.  :func:`build_source` runs all four and returns
``(LoweredProgram | None, diagnostics)``; lowering is skipped when analysis
reports errors.
"""

from __future__ import annotations

from . import nodes
from .analyze import AnalysisResult, Diagnostic, analyze
from .instrument import InstrumentationReport, instrument
from .lower import LoweredProgram, LoweringError, lower, zeroization_cost
from .parser import ParseError, parse

__all__ = [
    "nodes", "parse", "ParseError", "analyze", "AnalysisResult",
    "Diagnostic", "instrument", "InstrumentationReport", "lower",
    "LoweredProgram", "LoweringError", "zeroization_cost", "build_source",
]


def build_source(src: str, filename: str = "<input>", *,
                 blinding: bool = True, mode: str = "purecap"):
    """Compile source text; returns (LoweredProgram | None, diagnostics).

    The program is None when parsing or analysis produced errors (warnings
    alone do not stop a build).
    """
    try:
        prog = parse(src, filename)
    except ParseError as e:
        return None, [Diagnostic("error", "E_PARSE", e.message, e.line,
                                 e.col, e.filename)]
    analysis = analyze(prog)
    if not analysis.ok:
        return None, analysis.diagnostics
    instrument(prog, analysis)
    try:
        lowered = lower(prog, analysis, blinding=blinding, mode=mode)
    except LoweringError as e:
        return None, analysis.diagnostics + [e.diagnostic]
    lowered.analysis = analysis
    return lowered, analysis.diagnostics
