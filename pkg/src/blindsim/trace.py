"""Trace events and the non-interference comparator.

A trace event is a plain tuple, cheap to build in the interpreter loop:

    (step, phase, pc, opcode, line, pred, fault)

  step    architectural progress marker (retired count at emission)
  phase   0 architectural, 1 transient
  pc      address of the instruction
  opcode  mnemonic string
  line    cache line (address>>6) for memory accesses, else None
  pred    predictor update (kind, index, old, new) with kind "pht"|"btb",
          attached to resolved branches, else None
  fault   (fault kind int, suppressed flag 0|1), else None

Events never contain register values or effective addresses beyond the
cache-line granule: the trace is exactly what a microarchitectural
observer could see, which is why trace equality witnesses
non-interference.

The comparator consumes two event iterables in lockstep without
materializing them, so traces of any length compare in constant memory.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

PHASE_ARCH = 0
PHASE_TRANSIENT = 1

_PHASE_NAME = {PHASE_ARCH: "arch", PHASE_TRANSIENT: "transient"}


def event_to_json(ev) -> str:
    """One event as a JSON Lines record with fixed field order."""
    step, phase, pc, op, line, pred, fault = ev
    parts = [
        f'"step": {step}',
        f'"phase": "{_PHASE_NAME[phase]}"',
        f'"pc": {pc}',
        f'"op": {json.dumps(op)}',
        f'"line": {"null" if line is None else line}',
        f'"pred": {json.dumps(list(pred)) if pred else "null"}',
        f'"fault": {json.dumps(list(fault)) if fault else "null"}',
    ]
    return "{" + ", ".join(parts) + "}"


def write_jsonl(events, fh) -> int:
    n = 0
    for ev in events:
        fh.write(event_to_json(ev))
        fh.write("\n")
        n += 1
    return n


def event_from_json(line: str):
    d = json.loads(line)
    phase = PHASE_TRANSIENT if d["phase"] == "transient" else PHASE_ARCH
    pred = tuple(d["pred"]) if d.get("pred") else None
    fault = tuple(d["fault"]) if d.get("fault") else None
    return (d["step"], phase, d["pc"], d["op"], d.get("line"), pred, fault)


def projection(ev):
    """The observable part compared for non-interference: everything but
    the step counter. (Step counters are a function of the prior
    projection sequence, so comparing them too never changes a verdict.)"""
    return ev[1:]


@dataclass
class NIResult:
    identical: bool
    index: int = -1          # divergence position, or total events if identical
    left: tuple | None = None
    right: tuple | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.identical

    def describe(self) -> str:
        if self.identical:
            return "identical"
        out = [f"divergence at event {self.index}: {self.reason}"]
        for tag, ev in (("A", self.left), ("B", self.right)):
            out.append(f"  {tag}: " + (event_to_json(ev) if ev else "<end of trace>"))
        return "\n".join(out)


def ni_compare(trace_a, trace_b) -> NIResult:
    """Lockstep comparison of two event iterables.

    Returns the first differing event, or a length mismatch reported as a
    divergence at the shorter trace's end. Identical runs compare equal
    including step counters; a step-counter difference cannot occur
    before a projection difference, so whole tuples are compared.
    """
    it_a = iter(trace_a)
    it_b = iter(trace_b)
    i = 0
    _sentinel = object()
    while True:
        ea = next(it_a, _sentinel)
        eb = next(it_b, _sentinel)
        if ea is _sentinel or eb is _sentinel:
            if ea is _sentinel and eb is _sentinel:
                return NIResult(True, i)
            return NIResult(False, i,
                            None if ea is _sentinel else ea,
                            None if eb is _sentinel else eb,
                            "length mismatch")
        if ea != eb and projection(ea) != projection(eb):
            return NIResult(False, i, ea, eb, "event mismatch")
        i += 1


def ni_compare_chunks(chunks_a, chunks_b) -> NIResult:
    """ni_compare over two iterables of event *lists*.

    Aligned equal chunks — the whole trace, for interference-free pairs —
    cost one native list comparison each.  Any difference (content or
    chunk framing) falls back to event-by-event comparison with exactly
    ni_compare's semantics, so the verdict never depends on how the
    producers chunked their streams.
    """
    from itertools import chain

    it_a = iter(chunks_a)
    it_b = iter(chunks_b)
    i = 0
    while True:
        ca = next(it_a, None)
        cb = next(it_b, None)
        if ca is None and cb is None:
            return NIResult(True, i)
        if ca is not None and cb is not None and ca == cb:
            i += len(ca)
            continue
        flat_a = chain(ca or (), (e for ch in it_a for e in ch))
        flat_b = chain(cb or (), (e for ch in it_b for e in ch))
        res = ni_compare(flat_a, flat_b)
        res.index += i
        return res
