"""Fractional ownership inference.

Each reference layer of each in-scope variable at each program point carries
an ownership quantity in [0, 1]: 1 grants writing, any positive amount makes
the content's refinement trustworthy, and 0 admits unknown mutable aliases.
This module generates the linear side conditions the program imposes on
those quantities, solves them with an exact-rational SMT solver, and then
maximizes how many quantities are strictly positive so the refinement phase
retains as much information as possible.

Constraint generation walks the program:

- copying a reference splits its ownership between the old and new name;
- creating or writing a reference demands full (= 1) ownership of the
  written cell, and a write moves the source's ownership into the cell;
- reading a cell splits the cell content's ownership with the result;
- alias annotations may redistribute ownership freely between the two
  (now known-equal) references, preserving the layer-wise totals;
- calls hand ownership to the callee's entry template and collect the
  leftovers from its exit template, identically at every call site;
- every other step may only shed ownership moving forward.

Deeper layers of an unowned reference must also be unowned (a zero-ownership
link), which is the one non-linear condition; the soundness re-check of an
"infeasible" verdict therefore runs on the linear relaxation, which can only
under-approximate infeasibility.

Maximization is greedy with binary-search narrowing: a candidate set that
cannot all be positive is split until blockers are isolated; a candidate
rejected against the committed set stays rejected (adding commitments never
makes it feasible), so the result is a maximal — not necessarily maximum —
positivity set, found deterministically.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction

from . import lp
from .backends import (
    SessionError, SolverSession, SolverSpec, classify_answer, parse_model,
    parse_unsat_core, run_solver,
)
from .primitives import PRIMITIVES
from .syntax import (
    Alias, AliasDeref, Assert, Assign, Expr, IfZero, LetCall, LetDeref,
    LetInt, LetMkref, LetVar, Program, Seq, Var, pp_redex,
)
from .templates import RET, Point, Templates, fun_entry, fun_exit

ZERO = Fraction(0)
ONE = Fraction(1)


class OwnershipInternalError(Exception):
    """A solver answer failed this module's own exact re-checking."""


@dataclass(frozen=True, slots=True)
class OwnConstraint:
    """One side condition over ownership variables.

    kind/args:
      "eq-const" (v,)              v = value
      "eq"       (a, b)            a = b
      "sum"      (t, a, b)         t = a + b
      "geq"      (a, b)            a >= b
      "zero-link" (outer, inner)   outer = 0  implies  inner = 0
    """

    kind: str
    args: tuple[str, ...]
    value: Fraction = ZERO
    why: str = ""

    def holds(self, model: dict[str, Fraction]) -> bool:
        vals = [model.get(a, ZERO) for a in self.args]
        if self.kind == "eq-const":
            return vals[0] == self.value
        if self.kind == "eq":
            return vals[0] == vals[1]
        if self.kind == "sum":
            return vals[0] == vals[1] + vals[2]
        if self.kind == "geq":
            return vals[0] >= vals[1]
        if self.kind == "zero-link":
            return vals[0] != 0 or vals[1] == 0
        raise ValueError(self.kind)

    def to_linear(self) -> lp.LinearConstraint | None:
        """Linear form, or None for the zero-ownership link."""
        if self.kind == "eq-const":
            return lp.LinearConstraint(
                ((self.args[0], ONE),), "=", self.value
            )
        if self.kind == "eq":
            return lp.LinearConstraint(
                ((self.args[0], ONE), (self.args[1], -ONE)), "=", ZERO
            )
        if self.kind == "sum":
            t, a, b = self.args
            coeffs: dict[str, Fraction] = {}
            for v, c in ((t, ONE), (a, -ONE), (b, -ONE)):
                coeffs[v] = coeffs.get(v, ZERO) + c
            return lp.LinearConstraint(tuple(coeffs.items()), "=", ZERO)
        if self.kind == "geq":
            if self.args[0] == self.args[1]:
                return None
            return lp.LinearConstraint(
                ((self.args[0], ONE), (self.args[1], -ONE)), ">=", ZERO
            )
        if self.kind == "zero-link":
            return None
        raise ValueError(self.kind)

    def to_smt(self) -> str:
        a = self.args
        if self.kind == "eq-const":
            return f"(= {a[0]} {_rat(self.value)})"
        if self.kind == "eq":
            return f"(= {a[0]} {a[1]})"
        if self.kind == "sum":
            return f"(= {a[0]} (+ {a[1]} {a[2]}))"
        if self.kind == "geq":
            return f"(>= {a[0]} {a[1]})"
        if self.kind == "zero-link":
            return f"(=> (= {a[0]} 0) (= {a[1]} 0))"
        raise ValueError(self.kind)

    def describe(self) -> str:
        a = self.args
        rendered = {
            "eq-const": lambda: f"{a[0]} = {self.value}",
            "eq": lambda: f"{a[0]} = {a[1]}",
            "sum": lambda: f"{a[0]} = {a[1]} + {a[2]}",
            "geq": lambda: f"{a[0]} >= {a[1]}",
            "zero-link": lambda: f"{a[0]} = 0 -> {a[1]} = 0",
        }[self.kind]()
        return f"{rendered}  [{self.why}]"


def _rat(q: Fraction) -> str:
    if q.denominator == 1:
        return str(q.numerator)
    return f"(/ {q.numerator} {q.denominator})"


@dataclass(slots=True)
class OwnershipSystem:
    """All side conditions for one templated program."""

    templates: Templates
    constraints: list[OwnConstraint] = field(default_factory=list)
    own_vars: list[str] = field(default_factory=list)
    aux_vars: list[str] = field(default_factory=list)

    @property
    def variables(self) -> list[str]:
        return self.own_vars + self.aux_vars

    def _assertion_bodies(self) -> list[str]:
        bodies = [f"(and (>= {v} 0) (<= {v} 1))" for v in self.own_vars]
        bodies += [f"(>= {v} 0)" for v in self.aux_vars]
        bodies += [con.to_smt() for con in self.constraints]
        return bodies

    def smt_script(self, positive: list[str] | None = None,
                   named: bool = False) -> str:
        """SMT-LIB2 text: declarations, range bounds, side conditions.

        `positive` adds strict positivity assertions for those variables.
        `named` wraps each assertion with a resolvable name (for cores).
        """
        lines = ["(set-option :produce-models true)"]
        if named:
            lines.append("(set-option :produce-unsat-cores true)")
        lines.append("(set-logic QF_LRA)")
        for v in self.variables:
            lines.append(f"(declare-const {v} Real)")
        for idx, body in enumerate(self._assertion_bodies()):
            if named:
                lines.append(f"(assert (! {body} :named c{idx}))")
            else:
                lines.append(f"(assert {body})")
        for v in positive or ():
            lines.append(f"(assert (> {v} 0))")
        lines.append("(check-sat)")
        if named:
            lines.append("(get-unsat-core)")
        else:
            lines.append("(get-model)")
        return "\n".join(lines) + "\n"

    def session_preamble(self) -> str:
        """Declarations and base assertions only, for incremental querying."""
        lines = ["(set-option :produce-models true)", "(set-logic QF_LRA)"]
        lines += [f"(declare-const {v} Real)" for v in self.variables]
        lines += [f"(assert {b})" for b in self._assertion_bodies()]
        return "\n".join(lines) + "\n"

    def named_assertion_sources(self) -> list[str]:
        """Descriptions for c0..cN in smt_script(named=True) order."""
        out = [
            f"0 <= {v} <= 1  [ownership range]" for v in self.own_vars
        ]
        out += [f"{v} >= 0  [split remainder]" for v in self.aux_vars]
        out += [con.describe() for con in self.constraints]
        return out

    def violations(self, model: dict[str, Fraction]) -> list[str]:
        """Exact check of a model; returns descriptions of what fails."""
        bad = []
        for v in self.own_vars:
            val = model.get(v, ZERO)
            if not (ZERO <= val <= ONE):
                bad.append(f"{v} = {val} out of range [0, 1]")
        for v in self.aux_vars:
            if model.get(v, ZERO) < 0:
                bad.append(f"{v} = {model.get(v)} negative")
        for con in self.constraints:
            if not con.holds(model):
                bad.append(con.describe())
        return bad

    def linear_relaxation(self) -> list[lp.LinearConstraint]:
        out = []
        for v in self.own_vars:
            out.append(lp.LinearConstraint(((v, ONE),), "<=", ONE))
        for con in self.constraints:
            lin = con.to_linear()
            if lin is not None:
                out.append(lin)
        return out

    def dump(self) -> str:
        lines = [f"ownership variables: {len(self.own_vars)}"]
        lines += [f"  {v}" for v in self.own_vars]
        if self.aux_vars:
            lines.append(f"split variables: {len(self.aux_vars)}")
            lines += [f"  {v}" for v in self.aux_vars]
        lines.append(f"constraints: {len(self.constraints)}")
        lines += [f"  {c.describe()}" for c in self.constraints]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Generation.


class _Gen:
    def __init__(self, t: Templates) -> None:
        self.t = t
        self.sys = OwnershipSystem(t)
        self.sys.own_vars = t.ownership_vars()
        self._aux = 0
        self._seq_target: list[Point] = []

    def aux(self, hint: str) -> str:
        self._aux += 1
        name = f"aux!{self._aux}!{hint}"
        self.sys.aux_vars.append(name)
        return name

    def add(self, kind: str, args: tuple[str, ...], why: str,
            value: Fraction = ZERO) -> None:
        self.sys.constraints.append(
            OwnConstraint(kind, args, value=value, why=why)
        )

    def own(self, x: str, m: int, p: Point) -> str:
        return self.t.own_name(x, m, p)

    def layers(self, x: str, p: Point) -> range:
        return self.t.own_layers(x, p)

    def flow_var(self, z: str, p: Point, q: Point, why: str) -> None:
        for m in self.layers(z, p):
            self.add("geq", (self.own(z, m, p), self.own(z, m, q)), why)

    def flow_all(self, p: Point, q: Point, why: str,
                 skip: frozenset[str] = frozenset()) -> None:
        """Weakening flow for every variable in scope at both points."""
        target = set(self.t.scopes[q])
        for z in self.t.scopes[p]:
            if z in skip or z not in target:
                continue
            self.flow_var(z, p, q, why)

    def split(self, src: str, p: Point, into_a: tuple[str, int],
              into_b: tuple[str, int], m: int, q: Point, why: str) -> None:
        """own(src, m, p) = own(a, ma, q) + own(b, mb, q)."""
        (a, ma), (b, mb) = into_a, into_b
        self.add(
            "sum",
            (self.own(src, m, p), self.own(a, ma, q), self.own(b, mb, q)),
            why,
        )

    # -- the walk ----------------------------------------------------------------

    def program(self) -> OwnershipSystem:
        t = self.t
        for f in t.program.funs:
            p0 = t.at(f.body)
            why = f"entry of {f.name}"
            for param in f.params:
                for m in self.layers(param, p0):
                    self.add(
                        "geq",
                        (self.own(param, m, fun_entry(f.name)),
                         self.own(param, m, p0)),
                        why,
                    )
            self.expr(f.body, f.name)
        self.expr(t.program.body, None)
        self.well_formed_links()
        return self.sys

    def well_formed_links(self) -> None:
        t = self.t
        for p in t.points:
            for z in t.scopes[p]:
                d = t.depth_of(z, p)
                for m in range(d - 1):
                    self.add(
                        "zero-link",
                        (self.own(z, m, p), self.own(z, m + 1, p)),
                        f"unowned {z} layer {m} hides layer {m + 1} "
                        f"at point {p}",
                    )

    def expr(self, e: Expr, fn: str | None) -> None:
        t = self.t
        p = t.at(e)
        why = f"{pp_redex(e)} at point {p}"
        match e:
            case Var(x):
                self.tail(e, x, fn)
            case LetVar(y, x, body):
                q = t.at(body)
                for m in self.layers(x, p):
                    self.split(x, p, (x, m), (y, m), m, q, why)
                self.flow_all(p, q, why, skip=frozenset((x,)))
                self.expr(body, fn)
            case LetInt(_, _, body):
                q = t.at(body)
                self.flow_all(p, q, why)
                self.expr(body, fn)
            case LetMkref(y, x, body):
                q = t.at(body)
                self.add("eq-const", (self.own(y, 0, q),),
                         f"fresh cell is fully owned: {why}", value=ONE)
                for m in self.layers(x, p):
                    self.split(x, p, (x, m), (y, m + 1), m, q, why)
                self.flow_all(p, q, why, skip=frozenset((x,)))
                self.expr(body, fn)
            case LetDeref(y, x, body):
                q = t.at(body)
                self.add("geq",
                         (self.own(x, 0, p), self.own(x, 0, q)), why)
                for m in self.layers(y, q):
                    self.split(x, p, (x, m + 1), (y, m), m + 1, q, why)
                self.flow_all(p, q, why, skip=frozenset((x,)))
                self.expr(body, fn)
            case LetCall(y, callee, _, args, body):
                q = t.at(body)
                if callee in PRIMITIVES:
                    self.flow_all(p, q, why)
                else:
                    fb, fe = fun_entry(callee), fun_exit(callee)
                    params = t.program.fun(callee).params
                    for xi, pi in zip(args, params):
                        for m in self.layers(xi, p):
                            self.add("eq", (self.own(xi, m, p),
                                            self.own(pi, m, fb)),
                                     f"argument {xi} enters {callee}: {why}")
                            self.add("eq", (self.own(xi, m, q),
                                            self.own(pi, m, fe)),
                                     f"argument {xi} returned by "
                                     f"{callee}: {why}")
                    for m in self.layers(y, q):
                        self.add("eq", (self.own(y, m, q),
                                        self.own(RET, m, fe)),
                                 f"result of {callee}: {why}")
                    self.flow_all(p, q, why, skip=frozenset(args))
                self.expr(body, fn)
            case IfZero(_, then, els):
                self.flow_all(p, t.at(then), f"{why} (then)")
                self.flow_all(p, t.at(els), f"{why} (else)")
                self.expr(then, fn)
                self.expr(els, fn)
            case Assign(x, z, body):
                q = t.at(body)
                self.add("eq-const", (self.own(x, 0, p),),
                         f"write needs full ownership: {why}", value=ONE)
                self.add("eq-const", (self.own(x, 0, q),),
                         f"write keeps full ownership: {why}", value=ONE)
                for m in self.layers(z, p):
                    self.split(z, p, (z, m), (x, m + 1), m, q, why)
                self.flow_all(p, q, why, skip=frozenset((x, z)))
                self.expr(body, fn)
            case Alias(x, y, body):
                q = t.at(body)
                for m in self.layers(x, p):
                    total = self.aux(f"alias!{m}!{p}")
                    self.add("sum", (total, self.own(x, m, p),
                                     self.own(y, m, p)),
                             f"combined ownership before {why}")
                    self.add("sum", (total, self.own(x, m, q),
                                     self.own(y, m, q)),
                             f"redistribution after {why}")
                self.flow_all(p, q, why, skip=frozenset((x, y)))
                self.expr(body, fn)
            case AliasDeref(x, y, body):
                q = t.at(body)
                self.add("geq",
                         (self.own(y, 0, p), self.own(y, 0, q)), why)
                for m in self.layers(x, p):
                    total = self.aux(f"alias!{m}!{p}")
                    self.add("sum", (total, self.own(x, m, p),
                                     self.own(y, m + 1, p)),
                             f"combined ownership before {why}")
                    self.add("sum", (total, self.own(x, m, q),
                                     self.own(y, m + 1, q)),
                             f"redistribution after {why}")
                self.flow_all(p, q, why, skip=frozenset((x, y)))
                self.expr(body, fn)
            case Assert(_, body):
                self.flow_all(p, t.at(body), why)
                self.expr(body, fn)
            case Seq(first, rest):
                self.flow_all(p, t.at(first), why)
                self.seq_tails(first, t.at(rest), fn)
                self.expr(rest, fn)
            case _:
                raise TypeError(f"not an expression: {e!r}")

    def seq_tails(self, first: Expr, q: Point, fn: str | None) -> None:
        """Walks `first`, flowing each of its result positions into q."""
        self._seq_target.append(q)
        try:
            self.expr(first, fn)
        finally:
            self._seq_target.pop()

    def tail(self, e: Expr, x: str, fn: str | None) -> None:
        t = self.t
        p = t.at(e)
        if self._seq_target:
            q = self._seq_target[-1]
            self.flow_all(p, q, f"{x} discarded before point {q}")
            return
        if fn is None:
            return  # end of the program: ownership may drop on the floor
        fe = fun_exit(fn)
        params = t.program.fun(fn).params
        why = f"return of {x} from {fn}"
        for pi in params:
            if pi == x:
                continue
            for m in self.layers(pi, p):
                self.add("geq", (self.own(pi, m, p), self.own(pi, m, fe)),
                         why)
        if x in params:
            for m in self.layers(x, p):
                a = self.aux(f"retkeep!{m}!{p}")
                b = self.aux(f"retgive!{m}!{p}")
                self.add("sum", (self.own(x, m, p), a, b),
                         f"{x} splits between parameter and result: {why}")
                self.add("geq", (a, self.own(x, m, fe)), why)
                self.add("geq", (b, self.own(RET, m, fe)), why)
        else:
            for m in self.layers(x, p):
                self.add("geq",
                         (self.own(x, m, p), self.own(RET, m, fe)), why)


def generate(t: Templates) -> OwnershipSystem:
    """Builds the ownership side-condition system for a templated program."""
    return _Gen(t).program()


# ---------------------------------------------------------------------------
# Solving.


@dataclass(slots=True)
class OwnershipSolution:
    """A satisfying assignment with a maximal set of positive quantities."""

    values: dict[str, Fraction]
    positive: frozenset[str]
    solver_calls: int

    def value(self, var: str) -> Fraction:
        return self.values.get(var, ZERO)

    def dump(self) -> str:
        lines = [f"solver calls: {self.solver_calls}"]
        for v in sorted(self.values):
            mark = " (+)" if v in self.positive else ""
            lines.append(f"  {v} = {self.values[v]}{mark}")
        return "\n".join(lines) + "\n"


@dataclass(slots=True)
class OwnershipInfeasible:
    """The side conditions admit no assignment; the program is rejected."""

    core: list[str]
    linear_confirmed: bool
    solver_calls: int

    def dump(self) -> str:
        lines = ["ownership side conditions are unsatisfiable"]
        if self.linear_confirmed:
            lines.append(
                "(independently confirmed by exact linear programming)"
            )
        if self.core:
            lines.append("conflicting conditions:")
            lines += [f"  {c}" for c in self.core]
        return "\n".join(lines) + "\n"


OwnershipOutcome = OwnershipSolution | OwnershipInfeasible


class OwnershipSolveError(Exception):
    """The solver failed to answer (error or timeout), not sat/unsat."""

    def __init__(self, message: str, verdict: str = "error") -> None:
        super().__init__(message)
        self.verdict = verdict


def solve(system: OwnershipSystem, spec: SolverSpec,
          timeout: float = 60.0) -> OwnershipOutcome:
    """Solves the system, maximizing which quantities are positive.

    The solver is asked for a model with every candidate strictly positive;
    on refusal the candidate list is split binary-search style, committing
    feasible halves and discarding isolated blockers. Rejection against the
    committed set is final, so one pass yields a maximal positive set. A
    final solve under exactly the committed set produces the model, which is
    then re-checked in exact arithmetic.

    Queries run incrementally (push/pop) over one solver session when the
    backend supports it, falling back to a fresh process per query.
    """
    candidates = sorted(system.own_vars)
    if not candidates and not system.constraints:
        return OwnershipSolution({}, frozenset(), 0)

    calls = 0
    preamble = system.session_preamble()
    session: SolverSession | None = None
    try:
        session = SolverSession(spec)
        if session.eval(preamble, timeout).strip():
            session.close()  # base assertions were rejected
            session = None
    except SessionError:
        session = None

    def session_round(parts: list[str]) -> tuple[str, str] | None:
        """Runs one query block on the session; None means give up on it."""
        nonlocal session
        assert session is not None
        block = "\n".join(parts)
        for retry in (False, True):
            try:
                out = session.eval(block, timeout)
                verdict = classify_answer(out)
                if verdict in ("sat", "unsat"):
                    return verdict, out
                if retry:
                    break
                # An error mid-block can leave an unfinished (push 1) on
                # the stack, poisoning everything after it. Rebuild the
                # state from scratch and retry once — but only if the
                # rebuild itself went through cleanly.
                if session.eval("(reset)\n" + preamble, timeout).strip():
                    break
            except SessionError:
                break
        session.close()
        session = None
        return None

    def attempt(positive: list[str]) -> tuple[str, str]:
        """One feasibility query; returns (verdict, raw output)."""
        nonlocal calls
        calls += 1
        if session is not None:
            parts = ["(push 1)"]
            parts += [f"(assert (> {v} 0))" for v in positive]
            parts += ["(check-sat)", "(get-model)", "(pop 1)"]
            got = session_round(parts)
            if got is not None:
                return got
        run = run_solver(spec, system.smt_script(positive=positive), timeout)
        return run.verdict, run.output

    committed: list[str] = []
    committed_set: set[str] = set()

    try:
        base, _ = attempt([])
        if base == "unsat":
            return _explain_infeasible(system, spec, timeout, calls)
        if base != "sat":
            raise OwnershipSolveError(
                f"ownership solver failed: {base}", verdict=base
            )

        def grow(pending: list[str]) -> None:
            if not pending:
                return
            verdict, _ = attempt(committed + pending)
            if verdict == "sat":
                # Only what was asked for is committed. The model usually
                # makes further quantities positive too, but which ones is
                # the solver's whim; committing them would make the final
                # set depend on timing rather than on the system alone.
                committed.extend(pending)
                committed_set.update(pending)
                return
            if verdict != "unsat":
                raise OwnershipSolveError(
                    f"ownership solver failed during maximization: {verdict}",
                    verdict=verdict,
                )
            if len(pending) == 1:
                return  # blocked for good: commitments only ever grow
            mid = len(pending) // 2
            grow(pending[:mid])
            grow(pending[mid:])

        grow(candidates)
    finally:
        if session is not None:
            session.close()

    def recheck(model: dict[str, Fraction]) -> tuple[
        dict[str, Fraction], list[str]
    ]:
        values = {v: model.get(v, ZERO) for v in system.variables}
        bad = system.violations(values)
        for v in committed:
            if values[v] <= 0:
                bad.append(f"{v} should be positive, model gives {values[v]}")
        return values, bad

    # The model is taken from one fresh single-shot solve rather than from
    # the incremental session: the emitted Horn clauses bake these values
    # in, and only a self-contained query gives the same model every run.
    run = run_solver(spec, system.smt_script(positive=committed), timeout)
    calls += 1
    if run.verdict != "sat":
        raise OwnershipSolveError(
            f"ownership solver failed on the final model query: {run.verdict}",
            verdict=run.verdict,
        )
    values, bad = recheck(parse_model(run.output))
    if bad:
        raise OwnershipInternalError(
            "solver model fails exact re-checking:\n  " + "\n  ".join(bad)
        )
    return OwnershipSolution(values, frozenset(committed), calls)


def _explain_infeasible(system: OwnershipSystem, spec: SolverSpec,
                        timeout: float, calls: int) -> OwnershipInfeasible:
    # Ask again with named assertions to get a core, and cross-check the
    # linear relaxation with exact arithmetic (it can only confirm).
    run = run_solver(spec, system.smt_script(named=True), timeout)
    calls += 1
    core: list[str] = []
    if run.verdict == "unsat":
        sources = system.named_assertion_sources()
        for name in parse_unsat_core(run.output):
            if name.startswith("c"):
                try:
                    core.append(sources[int(name[1:])])
                except (ValueError, IndexError):
                    pass
    feasible = lp.find_feasible(
        system.linear_relaxation(), system.variables
    )
    return OwnershipInfeasible(
        core=core,
        linear_confirmed=feasible is None,
        solver_calls=calls,
    )
