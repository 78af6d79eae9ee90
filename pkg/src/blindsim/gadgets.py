"""Built-in transient-execution attack demonstrations.

Three gadgets exercise the covert cache channel of the speculative engine.
Each runs the same program twice, once per candidate secret value, and
compares the observer's complete ordered cache-access trace (architectural
and transient accesses alike): ``leaked`` is true iff the traces differ,
i.e. iff a cache observer can distinguish the secrets.

pht
    In-bounds conditional-branch gadget. A loop-exit branch is trained
    not-taken on public data, then flips; the mispredicted fall-through
    path transiently loads a blinded word and indexes a probe array with
    it (``probe[secret * 64]``). With enforcement on, the transiently
    loaded value carries its blindedness, so the dependent probe access is
    suppressed and the traces stay identical.  With the enforcement switch
    off the probe access lands in a secret-dependent line and the traces
    differ.

pht_oob
    Bounds-check-bypass gadget. The same trained branch guards an indexed
    read through a capability whose bounds were narrowed to a 4-element
    array; the mispredicted path reads element 4 — one past the end, where
    an unblinded secret sits — and probes with the stolen value.  In
    purecap mode the capability bounds hold on the transient path too, so
    nothing leaks even with blindedness enforcement off.

btb
    Indirect-branch target injection. A trainer jump whose slot in the
    untagged branch-target buffer aliases the victim's plants the leak
    sequence as a predicted target; the victim's indirect jump then
    transiently executes that sequence with a blinded capability in hand.
    Enforcement suppresses the secret-indexed probe access exactly as in
    the pht gadget.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import isa
from .machine import RunStatus, load_program, set_inputs
from .spec_engine import Cache, SpeculativeEngine

GADGETS = ("pht", "pht_oob", "btb")

#: Secret pair used when the caller does not supply one. Small values keep
#: the probe offsets (secret * 64 bytes) inside the 64-word probe area.
DEFAULT_SECRETS = (3, 5)

_PROBE_WORDS = 64


@dataclass(frozen=True)
class GadgetReport:
    gadget: str
    mode: str
    enforce: bool
    secrets: tuple[int, int]
    #: True iff the two runs' cache-access traces differ.
    leaked: bool
    #: RunStatus name per run; gadgets are built to halt architecturally.
    statuses: tuple[str, str]
    #: Cache accesses observed per run.
    trace_lengths: tuple[int, int]

    def to_dict(self) -> dict:
        return {
            "gadget": self.gadget,
            "mode": self.mode,
            "enforcement": "on" if self.enforce else "off",
            "secrets": list(self.secrets),
            "leaked": self.leaked,
            "statuses": list(self.statuses),
            "cache_accesses": list(self.trace_lengths),
        }


def _probe_area() -> list[str]:
    return [".word 0"] * _PROBE_WORDS


def _pht_source() -> str:
    # x3 = public data capability (training source + probe), x4 = blinded
    # capability holding the secret. Four training iterations run the leak
    # body architecturally on the public word (a fixed probe line), then
    # the source register is swapped to the blinded capability and the
    # loop-exit branch flips against its training.
    lines = [".data"] + _probe_area() + [".blinded", ".word 0", ".text"]
    lines += [
        "LI x8, 6",        # probe scale: value -> value * 64 (line size)
        "LI x15, 4",       # training iterations / loop bound
        "MV x16, x3",      # leak source: public during training
        "MV x18, x3",      # probe capability
        "LI x17, 0",       # i
        "loop:",
        "BGE x17, x15, done",   # trained not-taken; taken (mispredicted) at i=4
        "LD x20, 0(x16)",       # leak body: load source word
        "SLL x21, x20, x8",     # scale into a probe offset
        "LDX x22, x21(x18)",    # probe access
        "ADDI x17, x17, 1",
        "BEQ x17, x15, swap",   # after the last training pass: arm the attack
        "J loop",
        "swap:",
        "MV x16, x4",           # leak source is now the blinded secret
        "J loop",
        "done:",
        "HALT",
    ]
    return "\n".join(lines)


def _pht_oob_source() -> str:
    # A 4-word public array (all ones) under a capability narrowed with
    # CSETBOUNDS; the unblinded secret sits at word 4, one past the end.
    # The trained in-bounds loop probes with array values (fixed line);
    # the mispredicted fifth iteration reads out of bounds transiently.
    data = [".word 1"] * 4 + [".word 0"] + [".word 0"] * (_PROBE_WORDS - 5)
    lines = [".data"] + data + [".blinded", ".word 0", ".text"]
    lines += [
        "LI x8, 6",        # probe scale
        "LI x9, 3",        # index scale: i -> i * 8
        "LI x15, 4",       # array length / training iterations
        "LI x17, 0",       # i
        "MV x18, x3",      # probe capability (whole data section)
        "LI x20, 32",
        "CSETBOUNDS x19, x3, x20",   # array capability: exactly 4 words
        "loop:",
        "BGE x17, x15, done",    # bounds check; mispredicted at i=4
        "SLL x21, x17, x9",
        "LDX x20, x21(x19)",     # array[i] through the narrowed capability
        "SLL x22, x20, x8",
        "LDX x23, x22(x18)",     # probe access
        "ADDI x17, x17, 1",
        "J loop",
        "done:",
        "HALT",
    ]
    return "\n".join(lines)


_OOB_SECRET_OFFSET = 32  # byte offset of the out-of-bounds word in .data


def _btb_source(bare: bool) -> str:
    # The branch-target buffer is untagged and indexed by (pc >> 2) mod
    # its size, so a trainer jump placed a multiple of 16 instructions
    # before the victim's jump shares its slot. The trainer executes the
    # leak sequence architecturally on a public capability (training the
    # slot with the sequence's address); the victim then jumps to a benign
    # routine, but prediction supplies the leak sequence, which runs
    # transiently with the blinded capability installed.
    body = [
        "LI x8, 6",
        "MV x14, x3",      # leak source: public during training
        "MV x15, x3",      # probe capability
    ]
    if bare:
        body += ["LI x21, gadget"]
    else:
        body += ["LI x20, gadget", "CINCOFFSET x21, x31, x20"]
    body.append("CJALR x1, x21")     # trainer jump
    trainer = len(body) - 1
    body.append("MV x14, x4")        # arm: leak source is now blinded
    if bare:
        body += ["LI x21, benign"]
    else:
        body += ["LI x20, benign", "CINCOFFSET x21, x31, x20"]
    while (len(body) - trainer) % 16:
        body.append("LI x28, 0")     # pad until the victim aliases the slot
    victim = len(body)
    body.append("CJALR x1, x21")     # victim jump (to benign)
    body.append("HALT")
    benign = len(body)
    body += ["benign:", "CJALR x0, x1"]
    gadget_ret = benign + 4
    body += [
        "gadget:",
        "LD x22, 0(x14)",
        "SLL x23, x22, x8",
        "LDX x24, x23(x15)",
        "CJALR x0, x1",
    ]
    # The return jumps retire through the same untagged table; their slots
    # must not alias the trainer's, or they would overwrite the planted
    # target before the victim consults it.
    for other in (benign, gadget_ret):
        assert (other - trainer) % 16, "gadget layout aliases the trained slot"
    assert (victim - trainer) % 16 == 0
    lines = [".data"] + _probe_area() + [".blinded", ".word 0", ".text"]
    return "\n".join(lines + body)


def _build(gadget: str, mode: str) -> isa.Program:
    if gadget == "pht":
        src = _pht_source()
    elif gadget == "pht_oob":
        src = _pht_oob_source()
    elif gadget == "btb":
        src = _btb_source(bare=(mode == "bare"))
    else:
        raise ValueError(f"unknown gadget {gadget!r} (expected one of {GADGETS})")
    return isa.assemble(src)


def _run_once(prog: isa.Program, gadget: str, mode: str, enforce: bool,
              secret: int, window: int | None):
    m = load_program(prog, mode=mode, enforce=enforce)
    if gadget == "pht_oob":
        # the out-of-bounds word is ordinary unblinded data
        base = m.rv[3].base if mode == "purecap" else m.rv[3]
        addr = base + _OOB_SECRET_OFFSET
        m.mem.buf[addr:addr + 8] = secret.to_bytes(8, "little")
    else:
        set_inputs(m, secret=[secret])
    cache = Cache(log=True)
    if window is None:
        eng = SpeculativeEngine(m, cache=cache)
    else:
        eng = SpeculativeEngine(m, window=window, cache=cache)
    eng.run(max_steps=100_000)
    return tuple(cache.log), eng.status


def run_gadget(gadget: str, enforce: bool = True, mode: str = "purecap",
               secrets: tuple[int, int] = DEFAULT_SECRETS,
               window: int | None = None) -> GadgetReport:
    """Run one gadget across two secret values and compare cache traces.

    The returned report's `leaked` field is true iff the ordered
    cache-access traces of the two runs differ anywhere.
    """
    if gadget == "pht_oob" and mode != "purecap":
        raise ValueError("pht_oob demonstrates capability bounds and only "
                         "runs in purecap mode")
    a, b = secrets
    if not (0 <= a < _PROBE_WORDS and 0 <= b < _PROBE_WORDS):
        raise ValueError(f"secrets must be in [0, {_PROBE_WORDS}) so probe "
                         "offsets stay inside the probe area")
    prog = _build(gadget, mode)
    trace_a, status_a = _run_once(prog, gadget, mode, enforce, a, window)
    trace_b, status_b = _run_once(prog, gadget, mode, enforce, b, window)
    return GadgetReport(
        gadget=gadget,
        mode=mode,
        enforce=enforce,
        secrets=(a, b),
        leaked=trace_a != trace_b,
        statuses=(status_a.name if status_a else "NONE",
                  status_b.name if status_b else "NONE"),
        trace_lengths=(len(trace_a), len(trace_b)),
    )
