"""Command-line interface.

Subcommands:

build
    Compile a ``.bir`` source file to assembly. Diagnostics print as
    ``file:line:col: severity CODE message``; exit 1 when there are errors.
check
    Same pipeline as build but writes nothing; exit 1 on errors.
run
    Assemble and execute a program (``.bir`` sources are built first).
    ``OUT`` values print one per line; the exit code is 0 for a clean halt,
    2 for a step-limit stop, and 10 + fault-kind for a fault.
ni
    Run one program twice with different secret inputs under the
    speculative engine and compare the observable traces; exit 0 iff the
    traces are identical.
spectre
    Run a built-in transient-leak gadget across two secret values and
    report ``{"leaked": ...}`` as JSON.
bench
    Instruction-count benchmark suite over the oblivious kernel corpus;
    prints the report table and CSV.

The ``BLINDSIM_SEED`` environment variable seeds randomized work (the
bench input generator) when no ``--seed`` is given.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import isa
from .bench import CONFIGS, DEFAULT_SIZES, run_bench
from .corpus import CORPUS_NAMES
from .faults import FaultKind
from .gadgets import GADGETS, run_gadget
from .ir import build_source
from .machine import (DEFAULT_MAX_STEPS, RunStatus, exit_code, load_program,
                      set_inputs)
from .memory import Memory
from .spec_engine import DEFAULT_WINDOW, SpeculativeEngine
from .trace import ni_compare_chunks, write_jsonl


def _ints(values: list[str]) -> list[int]:
    out: list[int] = []
    for chunk in values:
        for part in chunk.replace(",", " ").split():
            out.append(int(part, 0))
    return out


def _heap(spec: str) -> tuple[int, int]:
    base, _, size = spec.partition(":")
    if not size:
        raise argparse.ArgumentTypeError("--heap expects base:size")
    return int(base, 0), int(size, 0)


def _build_file(path: str, blinding: str, mode: str):
    """-> (LoweredProgram | None, diagnostics); used by build/check/run."""
    with open(path, "r", encoding="utf-8") as fh:
        src = fh.read()
    return build_source(src, filename=path,
                        blinding=(blinding == "on"), mode=mode)


def _print_diags(diags) -> None:
    for d in diags:
        print(d, file=sys.stderr)


def _load_for_run(args) -> isa.Program | None:
    """Assemble args.file (building first for .bir); None on failure."""
    if args.file.endswith(".bir"):
        lowered, diags = _build_file(args.file, args.blinding, args.mode)
        _print_diags(diags)
        if lowered is None:
            return None
        asm = lowered.asm
    else:
        with open(args.file, "r", encoding="utf-8") as fh:
            asm = fh.read()
    try:
        return isa.assemble(asm)
    except isa.AssemblyError as e:
        for line, msg in e.errors:
            print(f"{args.file}:{line}: error {msg}", file=sys.stderr)
        return None


def _machine_for_run(prog: isa.Program, args):
    m = load_program(prog, mode=args.mode, heap=args.heap,
                     enforce=(args.enforce == "on"))
    if getattr(args, "load_mem", None):
        with open(args.load_mem, "rb") as fh:
            restored = Memory.load_snapshot(fh.read())
        if restored.size != m.mem.size:
            print(f"snapshot size {restored.size} != memory size "
                  f"{m.mem.size}", file=sys.stderr)
            return None
        m.mem.buf[:] = restored.buf
        m.mem.tagged.clear()
        m.mem.tagged.update(restored.tagged)
    set_inputs(m, public=_ints(args.public), secret=_ints(args.secret))
    return m


def cmd_build(args) -> int:
    lowered, diags = _build_file(args.file, args.blinding, args.mode)
    _print_diags(diags)
    if lowered is None:
        return 1
    out = args.output
    if out is None:
        stem = args.file[:-4] if args.file.endswith(".bir") else args.file
        out = stem + ".asm"
    with open(out, "w", encoding="utf-8") as fh:
        fh.write(lowered.asm)
    print(f"wrote {out}")
    return 0


def cmd_check(args) -> int:
    lowered, diags = _build_file(args.file, args.blinding, args.mode)
    _print_diags(diags)
    if lowered is None:
        return 1
    print(f"{args.file}: ok"
          + (f" ({len(diags)} warning(s))" if diags else ""))
    return 0


def cmd_run(args) -> int:
    prog = _load_for_run(args)
    if prog is None:
        return 1
    m = _machine_for_run(prog, args)
    if m is None:
        return 1
    max_steps = args.max_steps if args.max_steps is not None else DEFAULT_MAX_STEPS

    trace_fh = open(args.trace, "w", encoding="utf-8") if args.trace else None
    try:
        if args.spec == "on":
            eng = SpeculativeEngine(m, window=args.window)
            if trace_fh is not None:
                write_jsonl(eng.events(max_steps), trace_fh)
            else:
                eng.run(max_steps)
            status = eng.status
        else:
            status, evs = m.run(max_steps=max_steps,
                                trace=trace_fh is not None)
            if trace_fh is not None:
                write_jsonl(evs, trace_fh)
    finally:
        if trace_fh is not None:
            trace_fh.close()

    for v in m.outputs:
        print(v)
    if args.dump_mem:
        with open(args.dump_mem, "wb") as fh:
            fh.write(m.mem.save_snapshot())
    fault = None
    if m.pending_fault is not None:
        fault = FaultKind(m.pending_fault[0])
        print(f"fault: {fault.name} at pc={m.pending_fault[1]:#x}",
              file=sys.stderr)
    elif status is RunStatus.STEP_LIMIT:
        print("stopped: step limit reached", file=sys.stderr)
    return exit_code(status, fault)


def cmd_ni(args) -> int:
    prog = _load_for_run(args)
    if prog is None:
        return 1
    public = _ints(args.public)
    max_steps = args.max_steps if args.max_steps is not None else DEFAULT_MAX_STEPS

    def chunks(secret):
        m = load_program(prog, mode=args.mode, heap=args.heap,
                         enforce=(args.enforce == "on"))
        set_inputs(m, public=public, secret=secret)
        eng = SpeculativeEngine(m, window=args.window)
        return eng.event_chunks(max_steps, touch_cache=False)

    res = ni_compare_chunks(chunks(_ints(args.secret_a)),
                            chunks(_ints(args.secret_b)))
    print(res.describe())
    return 0 if res.identical else 1


def cmd_spectre(args) -> int:
    report = run_gadget(args.variant, enforce=(args.enforcement == "on"),
                        mode=args.mode, window=args.window)
    print(json.dumps(report.to_dict()))
    return 0


def cmd_bench(args) -> int:
    programs = args.programs.split(",") if args.programs else list(CORPUS_NAMES)
    for p in programs:
        if p not in CORPUS_NAMES:
            print(f"unknown corpus program {p!r} (have: "
                  f"{', '.join(CORPUS_NAMES)})", file=sys.stderr)
            return 1
    sizes = tuple(_ints([args.sizes])) if args.sizes else DEFAULT_SIZES
    report = run_bench(programs=programs, sizes=sizes, seed=args.seed)
    print(report.table())
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as fh:
            fh.write(report.csv())
        print(f"wrote {args.csv}")
    else:
        print(report.csv(), end="")
    return 0


def _add_build_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--blinding", choices=("on", "off"), default="on",
                   help="emit blinding instrumentation (default on)")
    p.add_argument("--mode", choices=("purecap", "bare"), default="purecap",
                   help="target machine mode (default purecap)")


def _add_exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--enforce", choices=("on", "off"), default="on",
                   help="blindedness enforcement (test-only switch; "
                        "default on)")
    p.add_argument("--heap", type=_heap, default=None, metavar="BASE:SIZE",
                   help="heap placement, e.g. 0x400000:0xb00000")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW,
                   help=f"speculation window (default {DEFAULT_WINDOW})")
    p.add_argument("--public", action="append", default=[], metavar="V,V,...",
                   help="public input words (repeatable)")


def main(argv=None) -> int:
    top = argparse.ArgumentParser(
        prog="blindsim",
        description="Capability-machine emulator with hardware taint "
                    "tracking for secret data: compiler, interpreter, "
                    "speculative engine, and verification suites.")
    sub = top.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build", help="compile .bir source to assembly")
    p.add_argument("file")
    p.add_argument("-o", "--output", default=None, metavar="OUT.asm")
    _add_build_flags(p)
    p.set_defaults(fn=cmd_build)

    p = sub.add_parser("check", help="diagnose a .bir source without output")
    p.add_argument("file")
    _add_build_flags(p)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("run", help="execute a program (.bir or assembly)")
    p.add_argument("file")
    _add_build_flags(p)
    _add_exec_flags(p)
    p.add_argument("--secret", action="append", default=[], metavar="V,V,...",
                   help="secret (blinded) input words (repeatable)")
    p.add_argument("--spec", choices=("on", "off"), default="off",
                   help="run under the speculative engine (default off)")
    p.add_argument("--trace", default=None, metavar="PATH",
                   help="write the event trace as JSON Lines")
    p.add_argument("--dump-mem", default=None, metavar="PATH",
                   help="write a memory snapshot after the run")
    p.add_argument("--load-mem", default=None, metavar="PATH",
                   help="restore a memory snapshot before the run")
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("ni", help="non-interference trace comparison")
    p.add_argument("file")
    _add_build_flags(p)
    _add_exec_flags(p)
    p.add_argument("--secret-a", action="append", default=[], required=True,
                   metavar="V,V,...", help="secret inputs for run A")
    p.add_argument("--secret-b", action="append", default=[], required=True,
                   metavar="V,V,...", help="secret inputs for run B")
    p.set_defaults(fn=cmd_ni)

    p = sub.add_parser("spectre", help="run a built-in transient-leak gadget")
    p.add_argument("variant", choices=GADGETS)
    p.add_argument("--enforcement", choices=("on", "off"), default="on")
    p.add_argument("--mode", choices=("purecap", "bare"), default="purecap")
    p.add_argument("--window", type=int, default=None)
    p.set_defaults(fn=cmd_spectre)

    p = sub.add_parser("bench", help="corpus instruction-count benchmarks")
    p.add_argument("--programs", default=None,
                   help=f"comma list from: {', '.join(CORPUS_NAMES)}")
    p.add_argument("--sizes", default=None, metavar="N,N,...",
                   help=f"scale exponents (default "
                        f"{','.join(map(str, DEFAULT_SIZES))})")
    p.add_argument("--seed", type=int,
                   default=int(os.environ.get("BLINDSIM_SEED", "0")))
    p.add_argument("--csv", default=None, metavar="PATH",
                   help="write the CSV here instead of stdout")
    p.set_defaults(fn=cmd_bench)

    args = top.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
