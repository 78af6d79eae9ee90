"""blindsim: a desk-scale emulator and toolchain for blinded capabilities.

Capability hardware that tracks secret (blinded) data end to end: a small
ISA with tagged memory and taint rules, an allocator with revocation
hygiene, a speculative engine for transient-leak experiments, and a mini
compiler that rejects or instruments programs handling blinded values.
"""

from .caps import (
    Capability,
    PERM_LOAD,
    PERM_STORE,
    PERM_EXECUTE,
    PERM_LOAD_CAP,
    PERM_STORE_CAP,
    PERM_NON_OBLIVIOUS,
    PERM_ALL,
)
from .faults import FaultKind
from .isa import Program, assemble, AssemblyError
from .machine import Machine, RunStatus, load_program, set_inputs
from .memory import BRR, Memory

__version__ = "0.1.0"

__all__ = [
    "Capability",
    "FaultKind",
    "Program",
    "assemble",
    "AssemblyError",
    "Machine",
    "RunStatus",
    "load_program",
    "set_inputs",
    "BRR",
    "Memory",
    "PERM_LOAD",
    "PERM_STORE",
    "PERM_EXECUTE",
    "PERM_LOAD_CAP",
    "PERM_STORE_CAP",
    "PERM_NON_OBLIVIOUS",
    "PERM_ALL",
    "__version__",
]
