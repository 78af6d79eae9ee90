"""Instruction set, assembler, and the default memory layout.

Programs are kept in decoded form: Program.code is a list of
(op, a, b, c) int tuples with a parallel mnemonic list for traces.
Instructions occupy 4 logical bytes each starting at CODE_BASE, so label
arithmetic and the program counter behave like a real address space even
though fetch reads the decoded list.
"""

from __future__ import annotations

from dataclasses import dataclass, field

# Default layout inside the 2^24-byte memory. The assembler resolves data
# labels against these bases; the loader registers matching regions.
MEM_SIZE = 1 << 24
CODE_BASE = 0x1000
DATA_BASE = 0x10_0000
BLINDED_BASE = 0x18_0000
HEAP_BASE = 0x40_0000
HEAP_END = 0xF0_0000
STACK_BASE = 0xF0_0000
STACK_TOP = 0x100_0000

# Opcodes. Grouping matters: the machine dispatches on ranges.
(ADD, SUB, MUL, AND, OR, XOR, SLL, SRL, SRA, SLT, SLTU,
 ADDI, ANDI, ORI, XORI, SLTI,
 LI, MV,
 LD, SD, LDX, SDX,
 CSC, CLC,
 CANDPERM, CSETBOUNDS, CINCOFFSET, CGETADDR, CGETTAG,
 BEQ, BNE, BLT, BGE,
 J, CJALR,
 ECALL, OUT, HALT) = range(38)

ALU_R = {ADD, SUB, MUL, AND, OR, XOR, SLL, SRL, SRA, SLT, SLTU}
ALU_I = {ADDI, ANDI, ORI, XORI, SLTI}
COND_BRANCHES = {BEQ, BNE, BLT, BGE}
#: Instructions the speculative engine predicts.
PREDICTED = COND_BRANCHES | {CJALR}

MNEMONICS = {
    "ADD": ADD, "SUB": SUB, "MUL": MUL, "AND": AND, "OR": OR, "XOR": XOR,
    "SLL": SLL, "SRL": SRL, "SRA": SRA, "SLT": SLT, "SLTU": SLTU,
    "ADDI": ADDI, "ANDI": ANDI, "ORI": ORI, "XORI": XORI, "SLTI": SLTI,
    "LI": LI, "MV": MV,
    "LD": LD, "SD": SD, "LDX": LDX, "SDX": SDX,
    "CSC": CSC, "CLC": CLC,
    "CANDPERM": CANDPERM, "CSETBOUNDS": CSETBOUNDS, "CINCOFFSET": CINCOFFSET,
    "CGETADDR": CGETADDR, "CGETTAG": CGETTAG,
    "BEQ": BEQ, "BNE": BNE, "BLT": BLT, "BGE": BGE,
    "J": J, "CJALR": CJALR,
    "ECALL": ECALL, "OUT": OUT, "HALT": HALT,
}
OPNAMES = {v: k for k, v in MNEMONICS.items()}


class AssemblyError(Exception):
    """Carries (line_number, message) pairs for every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"line {ln}: {msg}" for ln, msg in self.errors))


@dataclass
class Program:
    code: list = field(default_factory=list)          # (op, a, b, c) tuples
    mnem: list = field(default_factory=list)          # mnemonic per instruction
    lines: list = field(default_factory=list)         # source line per instruction
    labels: dict = field(default_factory=dict)        # name -> absolute address
    data_image: bytes = b""
    blinded_image: bytes = b""
    entry: int = CODE_BASE
    noblind: bool = False   # .option noblind: load the .blinded section unblinded

    @property
    def code_top(self) -> int:
        return CODE_BASE + 4 * len(self.code)


def _parse_int(tok: str) -> int:
    tok = tok.strip()
    neg = tok.startswith("-")
    if neg:
        tok = tok[1:]
    if tok.lower().startswith("0x"):
        val = int(tok, 16)
    elif tok.isdigit():
        val = int(tok, 10)
    else:
        raise ValueError(tok)
    return -val if neg else val


def _parse_reg(tok: str) -> int:
    tok = tok.strip().lower()
    if tok.startswith("x") and tok[1:].isdigit():
        n = int(tok[1:])
        if 0 <= n < 32:
            return n
    raise ValueError(f"bad register {tok!r}")


def _strip_comment(line: str) -> str:
    for ch in (";", "#"):
        pos = line.find(ch)
        if pos >= 0:
            line = line[:pos]
    return line.strip()


def assemble(text: str, name: str = "<asm>") -> Program:
    """Two-pass assembler. Raises AssemblyError listing every bad line."""
    errors: list[tuple[int, str]] = []
    prog = Program()
    labels: dict[str, int] = {}

    # Pass 1: sizes and label addresses.
    section = "text"
    counts = {"text": 0, "data": 0, "blinded": 0}
    parsed: list[tuple[int, str, str, str]] = []  # (lineno, section, head, rest)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        if not line:
            continue
        while True:  # labels may stack before a statement
            head, _, rest = line.partition(":")
            if _is_label(head) and line != head:
                base = {"text": CODE_BASE + 4 * counts["text"],
                        "data": DATA_BASE + counts["data"],
                        "blinded": BLINDED_BASE + counts["blinded"]}[section]
                if head in labels:
                    errors.append((lineno, f"duplicate label {head!r}"))
                labels[head] = base
                line = rest.strip()
                if not line:
                    break
            else:
                break
        if not line:
            continue
        head, _, rest = line.partition(" ")
        head_up = head.upper()
        if head == ".text":
            section = "text"
        elif head == ".data":
            section = "data"
        elif head == ".blinded":
            section = "blinded"
        elif head == ".option":
            if rest.strip() == "noblind":
                prog.noblind = True
            else:
                errors.append((lineno, f"unknown option {rest.strip()!r}"))
        elif head == ".word":
            if section == "text":
                errors.append((lineno, ".word outside a data section"))
            else:
                n = len(rest.split(","))
                counts[section] += 8 * n
                parsed.append((lineno, section, ".word", rest))
        elif head_up in MNEMONICS:
            if section != "text":
                errors.append((lineno, f"instruction {head_up} in .{section}"))
            else:
                counts["text"] += 1
                parsed.append((lineno, "text", head_up, rest.strip()))
        else:
            errors.append((lineno, f"unknown directive or mnemonic {head!r}"))

    if CODE_BASE + 4 * counts["text"] > DATA_BASE:
        errors.append((0, "code section overflows its window"))
    if DATA_BASE + counts["data"] > BLINDED_BASE:
        errors.append((0, ".data section overflows its window"))
    if BLINDED_BASE + counts["blinded"] > HEAP_BASE:
        errors.append((0, ".blinded section overflows its window"))

    def resolve(tok: str, lineno: int) -> int:
        tok = tok.strip()
        try:
            return _parse_int(tok)
        except ValueError:
            pass
        if tok in labels:
            return labels[tok]
        errors.append((lineno, f"undefined symbol {tok!r}"))
        return 0

    # Pass 2: encode.
    data = bytearray()
    blinded = bytearray()
    for lineno, section, head, rest in parsed:
        if head == ".word":
            dest = data if section == "data" else blinded
            for tok in rest.split(","):
                val = resolve(tok, lineno) & ((1 << 64) - 1)
                dest += val.to_bytes(8, "little")
            continue
        op = MNEMONICS[head]
        try:
            enc = _encode(op, rest, resolve, lineno)
        except ValueError as e:
            errors.append((lineno, str(e)))
            continue
        prog.code.append(enc)
        prog.mnem.append(head)
        prog.lines.append(lineno)

    if errors:
        raise AssemblyError(errors)
    prog.labels = labels
    prog.data_image = bytes(data)
    prog.blinded_image = bytes(blinded)
    prog.entry = labels.get("main", CODE_BASE)
    return prog


def _is_label(tok: str) -> bool:
    return bool(tok) and (tok[0].isalpha() or tok[0] in "._") and all(
        c.isalnum() or c in "._$" for c in tok)


def _split_ops(rest: str, n: int, lineno: int):
    parts = [p.strip() for p in rest.split(",")] if rest else []
    if len(parts) != n:
        raise ValueError(f"expected {n} operands, got {len(parts)}")
    return parts


def _parse_mem(tok: str):
    """imm(xN) or rx(xN)."""
    tok = tok.strip()
    if not tok.endswith(")") or "(" not in tok:
        raise ValueError(f"bad memory operand {tok!r}")
    off, _, base = tok[:-1].partition("(")
    return off.strip(), _parse_reg(base)


def _encode(op, rest, resolve, lineno):
    if op in ALU_R or op in (CANDPERM, CSETBOUNDS, CINCOFFSET):
        a, b, c = _split_ops(rest, 3, lineno)
        return (op, _parse_reg(a), _parse_reg(b), _parse_reg(c))
    if op in ALU_I:
        a, b, c = _split_ops(rest, 3, lineno)
        return (op, _parse_reg(a), _parse_reg(b), resolve(c, lineno))
    if op == LI:
        a, b = _split_ops(rest, 2, lineno)
        return (op, _parse_reg(a), 0, resolve(b, lineno))
    if op in (MV, CGETADDR, CGETTAG, CJALR):
        a, b = _split_ops(rest, 2, lineno)
        return (op, _parse_reg(a), _parse_reg(b), 0)
    if op in (LD, SD, CLC, CSC):
        a, m = _split_ops(rest, 2, lineno)
        off, base = _parse_mem(m)
        return (op, _parse_reg(a), base, resolve(off, lineno))
    if op in (LDX, SDX):
        a, m = _split_ops(rest, 2, lineno)
        idx, base = _parse_mem(m)
        return (op, _parse_reg(a), base, _parse_reg(idx))
    if op in COND_BRANCHES:
        a, b, t = _split_ops(rest, 3, lineno)
        return (op, _parse_reg(a), _parse_reg(b), resolve(t, lineno))
    if op == J:
        (t,) = _split_ops(rest, 1, lineno)
        return (op, 0, 0, resolve(t, lineno))
    if op == OUT:
        (a,) = _split_ops(rest, 1, lineno)
        return (op, _parse_reg(a), 0, 0)
    if op in (ECALL, HALT):
        if rest:
            raise ValueError(f"{OPNAMES[op]} takes no operands")
        return (op, 0, 0, 0)
    raise ValueError(f"unhandled opcode {op}")
