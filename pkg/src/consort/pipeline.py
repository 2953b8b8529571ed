"""End-to-end verification pipeline.

Wires the phases together: parse and desugar the surface program, infer
simple types, lay out invariant templates, solve the ownership
constraints, then emit and solve the Horn clauses. The result is a
single `Report` carrying the verdict, per-phase timings, and the sizes
of the intermediate artifacts. The interpreter entry point used for
differential checking lives here too.
"""

from __future__ import annotations

import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

from . import chc, interp, ownership
from .backends import (
    SolverError,
    SolverNotFound,
    chc_solvers,
    require_spacer,
    run_race,
)
from .desugar import check_program, parse_and_desugar
from .parser import ParseError
from .simple_types import SimpleTypeError, infer_types
from .syntax import Alias, AliasDeref, Expr, IfZero, Program, Seq, Var
from .templates import Templates, build_templates, dump_templates

#: Verdict strings a report can carry.
VERIFIED = "verified"
REJECTED = "rejected"
UNKNOWN = "unknown"
TOOL_ERROR = "tool-error"

_EXIT_CODES = {VERIFIED: 0, REJECTED: 1, UNKNOWN: 2, TOOL_ERROR: 3}


@dataclass(slots=True)
class VerifyConfig:
    """Knobs for one verification run."""

    context_depth: int = 1
    solver: str = "spacer"  # spacer | hoice | eldarica | parallel
    timeout: float = 60.0
    dump_templates: Path | None = None
    dump_ownership: Path | None = None
    dump_chc: Path | None = None
    check_dynamic: bool = False
    seeds: tuple[int, ...] = tuple(range(10))
    fuel: int = 100_000

    def __post_init__(self) -> None:
        if self.context_depth < 0:
            raise ValueError("context depth must be >= 0")
        if self.timeout <= 0:
            raise ValueError("timeout must be positive")


@dataclass(slots=True)
class Report:
    """Everything one verification run produced."""

    source: str
    verdict: str = TOOL_ERROR
    reject_phase: str | None = None  # "ownership" | "refinement"
    detail: str = ""
    solver: str | None = None
    timings: dict[str, float] = field(default_factory=dict)
    context_depth: int = 1
    clauses: int = 0
    predicates: int = 0
    ownership_vars: int = 0
    ownership_positive: int = 0
    aliases: int = 0

    @property
    def exit_code(self) -> int:
        return _EXIT_CODES[self.verdict]

    def headline(self) -> str:
        if self.verdict == VERIFIED:
            return f"{self.source}: verified"
        if self.verdict == REJECTED:
            why = {
                "ownership": "the ownership constraints are unsatisfiable",
                "refinement": "no inductive invariant proves the assertions",
            }[self.reject_phase or "refinement"]
            return f"{self.source}: cannot verify ({why})"
        if self.verdict == UNKNOWN:
            return f"{self.source}: unknown (the solver gave no answer)"
        return f"{self.source}: tool error"

    def describe(self) -> str:
        lines = [self.headline()]
        if self.detail:
            lines += ["  " + ln for ln in self.detail.rstrip().splitlines()]
        lines.append(
            f"  program: {self.aliases} alias annotation(s), "
            f"context depth {self.context_depth}"
        )
        if self.ownership_vars:
            lines.append(
                f"  ownership: {self.ownership_positive}/"
                f"{self.ownership_vars} quantities positive"
            )
        if self.clauses:
            lines.append(
                f"  horn clauses: {self.clauses} over "
                f"{self.predicates} predicates"
            )
        if self.solver:
            lines.append(f"  solver: {self.solver}")
        shown = [k for k in ("frontend", "types", "ownership", "refinement")
                 if k in self.timings]
        if shown:
            parts = ", ".join(f"{k} {self.timings[k]:.2f}s" for k in shown)
            total = self.timings.get("total")
            if total is not None:
                parts += f"; total {total:.2f}s"
            lines.append(f"  time: {parts}")
        return "\n".join(lines) + "\n"


def load_program(path: str | Path) -> Program:
    """Reads, parses, desugars, and normalizes one source file."""
    return source_program(Path(path).read_text())


def source_program(src: str) -> Program:
    return check_program(parse_and_desugar(src))


def count_aliases(program: Program) -> int:
    """Alias annotations in the program (both forms)."""
    count = 0
    stack: list[Expr] = [program.body, *(f.body for f in program.funs)]
    while stack:
        e = stack.pop()
        if isinstance(e, (Alias, AliasDeref)):
            count += 1
        stack.extend(_children(e))
    return count


def _children(e: Expr) -> tuple[Expr, ...]:
    match e:
        case Var(_):
            return ()
        case IfZero(_, then, els):
            return (then, els)
        case Seq(first, rest):
            return (first, rest)
        case _:
            return (e.body,)


def _write_dump(path: Path, text: str) -> None:
    if str(path) == "-":
        sys.stdout.write(text)
    else:
        path.write_text(text)


def verify(path: str | Path, config: VerifyConfig | None = None) -> Report:
    """Verifies one source file; never raises, errors become the verdict."""
    path = Path(path)
    try:
        src = path.read_text()
    except OSError as exc:
        return Report(source=path.name, verdict=TOOL_ERROR, detail=str(exc))
    return verify_source(src, name=path.name, config=config)


def verify_source(src: str, name: str = "<program>",
                  config: VerifyConfig | None = None) -> Report:
    cfg = config or VerifyConfig()
    report = Report(source=name, context_depth=cfg.context_depth)
    started = time.monotonic()

    def mark(phase: str, since: float) -> None:
        report.timings[phase] = time.monotonic() - since

    def finish(verdict: str, detail: str = "",
               reject_phase: str | None = None) -> Report:
        report.verdict = verdict
        report.reject_phase = reject_phase
        if detail:
            report.detail = detail
        mark("total", started)
        if cfg.check_dynamic:
            _check_dynamic(report, cfg, src)
        return report

    # Frontend: parse, desugar, normalize, simple types, templates.
    try:
        t = time.monotonic()
        program = source_program(src)
        mark("frontend", t)
        report.aliases = count_aliases(program)
        t = time.monotonic()
        types = infer_types(program)
        mark("types", t)
        templates = build_templates(program, types, cfg.context_depth)
    except (ParseError, SimpleTypeError) as exc:
        return finish(TOOL_ERROR, f"{type(exc).__name__}: {exc}")
    if cfg.dump_templates:
        _write_dump(cfg.dump_templates, dump_templates(templates))

    # Ownership: generate and solve the fractional permission constraints.
    system = ownership.generate(templates)
    report.ownership_vars = len(system.own_vars)
    try:
        spec = require_spacer()
        t = time.monotonic()
        outcome = ownership.solve(system, spec, cfg.timeout)
        mark("ownership", t)
    except SolverNotFound as exc:
        return finish(TOOL_ERROR, str(exc))
    except ownership.OwnershipSolveError as exc:
        if exc.verdict in ("unknown", "timeout"):
            return finish(UNKNOWN, str(exc))
        return finish(TOOL_ERROR, str(exc))
    except ownership.OwnershipInternalError as exc:
        return finish(TOOL_ERROR, str(exc))
    if cfg.dump_ownership:
        _write_dump(cfg.dump_ownership, system.dump() + outcome.dump())
    if isinstance(outcome, ownership.OwnershipInfeasible):
        return finish(REJECTED, outcome.dump(), reject_phase="ownership")
    report.ownership_positive = len(outcome.positive)

    # Refinement: emit the Horn clauses and ask the configured solver(s).
    chc_system = chc.generate(templates, outcome.values)
    report.clauses = len(chc_system.clauses)
    report.predicates = len(chc_system.predicates())
    if cfg.dump_chc:
        kind = cfg.solver if cfg.solver != "parallel" else "spacer"
        _write_dump(cfg.dump_chc, chc_system.smt_script(solver=kind))
    try:
        specs = chc_solvers(cfg.solver)
    except (SolverNotFound, SolverError) as exc:
        return finish(TOOL_ERROR, str(exc))
    t = time.monotonic()
    run = run_race(specs, lambda s: chc_system.smt_script(solver=s.name),
                   cfg.timeout)
    mark("refinement", t)
    report.solver = run.solver
    if run.verdict == "sat":
        return finish(VERIFIED)
    if run.verdict == "unsat":
        return finish(REJECTED, reject_phase="refinement")
    if run.verdict in ("unknown", "timeout"):
        return finish(UNKNOWN, run.detail or f"solver: {run.verdict}")
    return finish(TOOL_ERROR, run.detail or run.output.strip())


def _check_dynamic(report: Report, cfg: VerifyConfig, src: str) -> None:
    """Cross-checks the static verdict against interpreter runs.

    A program we claim verified must never fail an assertion or get
    stuck dynamically; seeing either is a bug in this tool, so the
    verdict is downgraded to a tool error rather than silently kept.
    """
    if report.verdict == TOOL_ERROR:
        return
    program = source_program(src)
    counts: dict[str, int] = {}
    bad: list[str] = []
    for seed in cfg.seeds:
        result = interp.run(program, seed=seed, fuel=cfg.fuel)
        kind = type(result.outcome).__name__
        counts[kind] = counts.get(kind, 0) + 1
        if result.failed or isinstance(result.outcome, interp.Stuck):
            bad.append(f"seed {seed}: {result.outcome}")
    summary = ", ".join(f"{k}x{v}" for k, v in sorted(counts.items()))
    note = f"dynamic check ({len(cfg.seeds)} seeds): {summary}"
    if bad and report.verdict == VERIFIED:
        report.verdict = TOOL_ERROR
        report.reject_phase = None
        note += "\nsoundness violation: verified program failed at runtime\n"
        note += "\n".join(bad[:5])
    report.detail = (report.detail + "\n" + note).strip()


def interpret(path: str | Path, seeds: tuple[int, ...] = (0,),
              fuel: int = 1_000_000,
              trace: bool = False) -> list[interp.RunResult]:
    """Runs one program under the interpreter, once per seed."""
    program = load_program(path)
    return [interp.run(program, seed=s, fuel=fuel, trace=trace)
            for s in seeds]


def render_dump(path: str | Path, kind: str,
                config: VerifyConfig | None = None) -> str:
    """Renders one intermediate artifact (`templates`, `ownership`,
    or `chc`) for a source file as text."""
    cfg = config or VerifyConfig()
    program = load_program(path)
    types = infer_types(program)
    templates = build_templates(program, types, cfg.context_depth)
    if kind == "templates":
        return dump_templates(templates)
    system = ownership.generate(templates)
    if kind == "ownership":
        outcome = ownership.solve(system, require_spacer(), cfg.timeout)
        return system.dump() + outcome.dump()
    if kind == "chc":
        outcome = ownership.solve(system, require_spacer(), cfg.timeout)
        if isinstance(outcome, ownership.OwnershipInfeasible):
            raise SolverError(
                "ownership constraints are unsatisfiable; "
                "no Horn clause system exists\n" + outcome.dump()
            )
        chc_system = chc.generate(templates, outcome.values)
        solver = cfg.solver if cfg.solver != "parallel" else "spacer"
        return chc_system.smt_script(solver=solver)
    raise ValueError(f"unknown dump kind {kind!r}")
