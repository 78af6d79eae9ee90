"""Shared helpers for the test suite.

Program builders (assembly and IR), random program generators for the
property suites, and the differential observable-state extractor used by
the invariant tests. All randomness is seeded from BLINDSIM_SEED.
"""

from __future__ import annotations

import os
import random

from blindsim import isa
from blindsim.caps import Capability
from blindsim.faults import FaultKind
from blindsim.ir import build_source
from blindsim.machine import RunStatus, load_program, set_inputs

SEED = int(os.environ.get("BLINDSIM_SEED", "0"))

#: Fault kinds raised by the blindedness rules (as opposed to capability
#: checks, alignment, or decode problems).
BLINDEDNESS_FAULTS = frozenset({
    FaultKind.BlindedStore,
    FaultKind.CapStoreToBlinded,
    FaultKind.BlindedBranchCondition,
    FaultKind.BlindedJumpTarget,
    FaultKind.BlindedAddress,
    FaultKind.BlindedCapForgery,
    FaultKind.BlindedOutput,
})


def make_rng(salt: int = 0) -> random.Random:
    return random.Random((SEED << 16) ^ salt)


# -- program runners -----------------------------------------------------


def run_asm(src: str, mode: str = "purecap", enforce: bool = True,
            public=(), secret=(), max_steps: int = 100_000, heap=None,
            trace: bool = True):
    """Assemble, load, feed inputs, run. -> (machine, status, events)."""
    m = load_program(isa.assemble(src), mode=mode, heap=heap, enforce=enforce)
    set_inputs(m, public=public, secret=secret)
    status, evs = m.run(max_steps=max_steps, trace=trace)
    return m, status, evs


def fault_kind(m) -> FaultKind | None:
    return None if m.pending_fault is None else m.pending_fault[0]


def build_ir(src: str, blinding: bool = True, mode: str = "purecap"):
    """build_source that fails the test with the diagnostics on error."""
    lowered, diags = build_source(src, blinding=blinding, mode=mode)
    assert lowered is not None, "\n".join(str(d) for d in diags)
    return lowered, diags


def run_ir(src: str, public=(), secret=(), blinding: bool = True,
           mode: str = "purecap", enforce: bool = True,
           max_steps: int = 5_000_000, store_log=None):
    """Compile and run an IR program. -> (machine, status)."""
    lowered, _ = build_ir(src, blinding=blinding, mode=mode)
    m = load_program(isa.assemble(lowered.asm), mode=mode, enforce=enforce)
    if store_log is not None:
        m.store_log = store_log
    set_inputs(m, public=public, secret=secret)
    status, _ = m.run(max_steps=max_steps, trace=False)
    return m, status


# -- canonical example programs ------------------------------------------

#: Oblivious conditional select: public condition, two secret operands,
#: declassified result. Builds with zero diagnostics; select(1, 5, 9) = 5.
SELECT_SRC = """\
var cond;
blinded var x;
blinded var y;

fn main() {
    var r = cond * x + (1 - cond) * y;
    out declassify(r);
}
"""

#: Branches directly on a secret: rejected at compile time
#: (E_BLINDED_BRANCH at the `a != 0` condition).
REJECTED_SRC = """\
var cond;
blinded var a;

fn main() {
    var b = 0;
    if (a != 0) {
        b = 1;
    }
    if (cond != 0) {
        b = a;
    }
    if (b != 0) {
        out 1;
    } else {
        out 2;
    }
}
"""

#: REJECTED_SRC with the secret branch removed: `b` is only may-blinded
#: (assigned a secret under a public conditional), so the final branch
#: compiles with a warning and faults at runtime exactly when cond != 0.
LEAKY_SRC = """\
var cond;
blinded var a;

fn main() {
    var b = 0;
    if (cond != 0) {
        b = a;
    }
    if (b != 0) {
        out 1;
    } else {
        out 2;
    }
}
"""


# -- random assembly soups -------------------------------------------------

_ALU_OPS = ("ADD", "SUB", "MUL", "AND", "OR", "XOR", "SLL", "SRL", "SRA",
            "SLT", "SLTU")


def branchy_soup(rng: random.Random, labels: int = 6) -> str:
    """Random straight-line/branch soup over public and blinded data.

    Used for engine differentials: heavy on conditional branches so the
    predictor and transient machinery get exercised. Loads pull from both
    the public and the blinded section; stores only target the public
    section, so programs are legal in every mode/enforcement combination
    (blinded loads make some branches fault under enforcement - that is
    part of the point).
    """
    lines = [".data"] + [f".word {rng.getrandbits(16)}" for _ in range(8)]
    lines += [".blinded"] + [f".word {rng.getrandbits(16)}" for _ in range(8)]
    lines += [".text"]
    body = []
    for i in range(labels):
        body.append(f"L{i}:")
        for _ in range(rng.randrange(2, 7)):
            k = rng.random()
            r = lambda: rng.randrange(5, 15)
            if k < 0.45:
                body.append(f"{rng.choice(_ALU_OPS)} x{r()}, x{r()}, x{r()}")
            elif k < 0.6:
                body.append(f"ADDI x{r()}, x{r()}, {rng.randrange(-64, 64)}")
            elif k < 0.7:
                body.append(f"LD x{r()}, {rng.randrange(0, 8) * 8}"
                            f"(x{rng.choice([3, 4])})")
            elif k < 0.8:
                body.append(f"SD x{r()}, {rng.randrange(0, 8) * 8}(x3)")
            elif k < 0.92:
                op = rng.choice(["BEQ", "BNE", "BLT", "BGE"])
                body.append(f"{op} x{r()}, x{r()}, L{rng.randrange(labels)}")
            else:
                body.append(f"CGETTAG x{r()}, x{rng.choice([2, 3, 4])}")
    body.append("HALT")
    return "\n".join(lines + body)


def taint_soup(rng: random.Random, labels: int = 5) -> str:
    """Random purecap program mixing secret and public data flows.

    Used by the invariant property suite: it may load secrets, compute on
    them, store them back through the blinded capability, attempt stores
    and branches that the blindedness rules fault on, output public
    values, and call the allocator. It never uses CSC/CLC or result
    buffers, so a run's entire observable behavior must be a function of
    public data alone.
    """
    lines = [".data"] + [f".word {rng.getrandbits(16)}" for _ in range(8)]
    lines += [".blinded"] + [f".word {rng.getrandbits(16)}" for _ in range(8)]
    lines += [".text"]
    body = []
    for i in range(labels):
        body.append(f"L{i}:")
        for _ in range(rng.randrange(3, 8)):
            k = rng.random()
            r = lambda: rng.randrange(5, 16)
            if k < 0.30:
                body.append(f"{rng.choice(_ALU_OPS)} x{r()}, x{r()}, x{r()}")
            elif k < 0.40:
                body.append(f"ADDI x{r()}, x{r()}, {rng.randrange(-32, 32)}")
            elif k < 0.52:  # loads from either section, direct or indexed
                if rng.random() < 0.5:
                    body.append(f"LD x{r()}, {rng.randrange(0, 8) * 8}"
                                f"(x{rng.choice([3, 4])})")
                else:
                    body.append(f"LDX x{r()}, x{r()}(x{rng.choice([3, 4])})")
            elif k < 0.64:  # stores to either section, direct or indexed
                if rng.random() < 0.5:
                    body.append(f"SD x{r()}, {rng.randrange(0, 8) * 8}"
                                f"(x{rng.choice([3, 4])})")
                else:
                    body.append(f"SDX x{r()}, x{r()}(x{rng.choice([3, 4])})")
            elif k < 0.78:
                op = rng.choice(["BEQ", "BNE", "BLT", "BGE"])
                body.append(f"{op} x{r()}, x{r()}, L{rng.randrange(labels)}")
            elif k < 0.84:
                body.append(f"OUT x{r()}")
            elif k < 0.90:
                body.append(f"CGETADDR x{r()}, x{rng.choice([2, 3, 4])}")
            elif k < 0.95:
                body.append(f"LI x10, {rng.choice([1, 2])}")
                body.append(f"LI x11, {rng.choice([16, 48, 64])}")
                body.append("ECALL")
            else:
                body.append(f"CINCOFFSET x{r()}, x3, x{r()}")
    body.append("HALT")
    return "\n".join(lines + body)


def random_secrets(rng: random.Random, n: int = 8) -> list[int]:
    return [rng.getrandbits(32) for _ in range(n)]


def taint_soup_violation(salt: int, max_steps: int = 2000) -> str | None:
    """Run one random soup twice with different secrets; report divergence.

    Same public inputs, fresh secret inputs on each side. Under full
    enforcement every observable artifact - outputs, faults, timing counters,
    non-blinded registers and memory, the whole trace - must be identical,
    or a blinded value influenced something an observer can see. Returns
    None when the pair agrees, else a short description of the divergence.
    """
    rng = make_rng(0xA50000 + salt)
    src = taint_soup(rng)
    prog = isa.assemble(src)
    publics = [rng.getrandbits(16) for _ in range(8)]
    sides = []
    for _ in range(2):
        m = load_program(prog)
        set_inputs(m, public=publics, secret=random_secrets(rng))
        status, evs = m.run(max_steps=max_steps, trace=True)
        sides.append((status, evs, observable_state(m)))
    (st1, evs1, obs1), (st2, evs2, obs2) = sides
    if st1 != st2:
        return f"soup {salt}: status {st1} vs {st2}"
    if evs1 != evs2:
        return f"soup {salt}: trace divergence"
    if obs1 != obs2:
        keys = [k for k in obs1 if obs1[k] != obs2[k]]
        return f"soup {salt}: observable divergence in {keys}"
    return None


# -- observable state (invariant differential) -----------------------------


def blinded_spans(m) -> list[tuple[int, int]]:
    """Address ranges an observer may not see: live blinded/result regions."""
    spans = []
    for reg in m.alloc.regions():
        if reg.kind in ("blinded", "result") and reg.state == "live":
            spans.append((reg.base, reg.base + reg.length))
    spans.sort()
    return spans


def observable_state(m) -> dict:
    """Everything outside the blinded domain: an attacker-visible digest.

    Two runs that differ only in secret input values must produce equal
    observable states under full enforcement - that is the machine-level
    non-interference property the invariant suite checks.
    """
    spans = blinded_spans(m)
    buf = m.mem.buf
    vis_mem = []
    pos = 0
    for b, t in spans:
        vis_mem.append(bytes(buf[pos:b]))
        pos = t
    vis_mem.append(bytes(buf[pos:]))
    regs = []
    for v, b in zip(m.rv, m.rb):
        if b:
            regs.append("<blinded>")
        else:
            regs.append(str(v) if isinstance(v, Capability) else v)
    return {
        "status": (m.halted, m.pending_fault),
        "pc": m.pc,
        "retired": m.retired,
        "outputs": tuple(m.outputs),
        "rb": tuple(m.rb),
        "regs": tuple(regs),
        "mem": b"".join(vis_mem),
        "tags": dict(m.mem.tagged),
        "mem_accesses": m.mem_accesses,
    }


# -- random IR programs (compiler soundness suite) -------------------------


class _IRGen:
    """Grammar-driven random IR programs with a taint shadow.

    The generator tracks which variables can carry secrets. With
    risky=False it never branches or indexes on anything that may be
    tainted, so the build must be diagnostic-free. With risky=True it may
    assign a secret to a public variable under a public conditional and
    later branch on it - the may-blinded pattern that compiles with a
    warning and faults only on the runtime paths where the value really
    is blinded.
    """

    def __init__(self, rng: random.Random, risky: bool):
        self.rng = rng
        self.risky = risky
        self.tmp = 0
        self.taint: dict[str, bool] = {}
        self.arrays: dict[str, tuple[int, bool]] = {}  # name -> (size, secret)
        self.loop_vars: list[tuple[str, int]] = []     # (name, bound)

    def fresh(self) -> str:
        self.tmp += 1
        return f"t{self.tmp}"

    # -- expressions --

    def pub_atom(self) -> str:
        rng = self.rng
        opts = [str(rng.randrange(0, 10))]
        pubs = [v for v, t in self.taint.items() if not t]
        if pubs:
            opts.append(rng.choice(pubs))
        pub_arrays = [a for a, (_, sec) in self.arrays.items() if not sec]
        if pub_arrays:
            a = rng.choice(pub_arrays)
            opts.append(f"{a}[{self.index_expr(a)}]")
        return rng.choice(opts)

    def any_atom(self) -> tuple[str, bool]:
        rng = self.rng
        choices = [(str(rng.randrange(0, 10)), False)]
        for v, t in self.taint.items():
            choices.append((v, t))
        for a, (_, sec) in self.arrays.items():
            choices.append((f"{a}[{self.index_expr(a)}]", sec))
        return rng.choice(choices)

    def index_expr(self, arr: str) -> str:
        size = self.arrays[arr][0]
        rng = self.rng
        fitting = [v for v, bound in self.loop_vars if bound <= size]
        if fitting and rng.random() < 0.6:
            return rng.choice(fitting)
        return str(rng.randrange(size))

    def pub_expr(self) -> str:
        a, b = self.pub_atom(), self.pub_atom()
        op = self.rng.choice("+-*&|^")
        return f"{a} {op} {b}"

    def any_expr(self) -> tuple[str, bool]:
        (a, ta) = self.any_atom()
        (b, tb) = self.any_atom()
        op = self.rng.choice(["+", "-", "*", "&", "|", "^", "<"])
        return f"{a} {op} {b}", ta or tb

    # -- statements --

    def stmts(self, depth: int, count: int, conditional: bool) -> list[str]:
        out = []
        for _ in range(count):
            out.extend(self.stmt(depth, conditional))
        return out

    def stmt(self, depth: int, conditional: bool) -> list[str]:
        rng = self.rng
        k = rng.random()
        if k < 0.30:
            e, t = self.any_expr()
            name = self.fresh()
            self.taint[name] = t
            return [f"var {name} = {e};"]
        if k < 0.45 and self.taint:
            name = rng.choice(list(self.taint))
            e, t = self.any_expr()
            if conditional:
                # an assignment under a conditional can only raise taint
                self.taint[name] = self.taint[name] or t
            else:
                self.taint[name] = t
            return [f"{name} = {e};"]
        if k < 0.58 and self.arrays:
            arr = rng.choice(list(self.arrays))
            size, sec = self.arrays[arr]
            if sec:
                e, _t = self.any_expr()
            else:
                e = self.pub_expr()
            return [f"{arr}[{self.index_expr(arr)}] = {e};"]
        if k < 0.70 and depth > 0:
            cond = f"{self.pub_atom()} < {self.pub_atom()}"
            body = self.stmts(depth - 1, rng.randrange(1, 3), True)
            block = [f"if ({cond}) {{"] + ["    " + s for s in body]
            if rng.random() < 0.4:
                els = self.stmts(depth - 1, rng.randrange(1, 3), True)
                block += ["} else {"] + ["    " + s for s in els]
            block.append("}")
            return block
        if k < 0.82 and depth > 0:
            i = self.fresh()
            self.taint[i] = False
            bound = rng.choice([2, 4])
            self.loop_vars.append((i, bound))
            body = self.stmts(depth - 1, rng.randrange(1, 3), True)
            self.loop_vars.pop()
            return ([f"var {i} = 0;", f"while ({i} < {bound}) {{"]
                    + ["    " + s for s in body]
                    + [f"    {i} = {i} + 1;", "}"])
        if k < 0.90:
            e, t = self.any_expr()
            if t:
                return [f"out declassify({e});"]
            return [f"out {e};"]
        if self.risky and self.taint:
            # the may-blinded pattern: public var, secret assigned under a
            # public conditional, then branched on
            name = self.fresh()
            self.taint[name] = True
            sec_e = None
            for _ in range(8):
                e, t = self.any_expr()
                if t:
                    sec_e = e
                    break
            if sec_e is None:
                return [f"out {self.pub_atom()};"]
            return [
                f"var {name} = 0;",
                f"if ({self.pub_atom()} < {self.pub_atom()}) {{",
                f"    {name} = {sec_e};",
                "}",
                f"if ({name} != 0) {{",
                f"    out {self.pub_atom()};",
                "}",
            ]
        e, t = self.any_expr()
        if t:
            return [f"out declassify({e});"]
        return [f"out {e};"]

    def program(self) -> str:
        rng = self.rng
        lines = []
        for i in range(rng.randrange(1, 3)):
            name = f"p{i}"
            lines.append(f"var {name};")
            self.taint[name] = False
        for i in range(rng.randrange(1, 3)):
            name = f"s{i}"
            lines.append(f"blinded var {name};")
            self.taint[name] = True
        sa_size = rng.choice([4, 8])
        lines.append(f"blinded var sa[{sa_size}];")
        self.arrays["sa"] = (sa_size, True)
        if rng.random() < 0.6:
            pa_size = rng.choice([4, 8])
            lines.append(f"var pa[{pa_size}];")
            self.arrays["pa"] = (pa_size, False)
        body = self.stmts(depth=2, count=rng.randrange(3, 8),
                          conditional=False)
        body.append(f"out {self.pub_atom()};")
        lines.append("")
        lines.append("fn main() {")
        lines.extend("    " + s for s in body)
        lines.append("}")
        return "\n".join(lines)


def random_ir_program(rng: random.Random, risky: bool = False) -> str:
    return _IRGen(rng, risky).program()


def fill_inputs(m, rng: random.Random) -> None:
    """Randomize the entire public and blinded input sections."""
    pub = [rng.getrandbits(16) for _ in range(len(m.prog.data_image) // 8)]
    sec = [rng.getrandbits(16) for _ in range(len(m.prog.blinded_image) // 8)]
    set_inputs(m, public=pub, secret=sec)
