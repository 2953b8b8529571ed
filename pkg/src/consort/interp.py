"""Small-step reference interpreter for core programs.

The interpreter is the dynamic ground truth the static verifier is judged
against: a program the verifier accepts must never reach an assertion or
aliasing failure under any schedule of nondeterministic inputs.

A configuration holds a heap (address -> value), a register file
(variable -> value), a stack of pending function returns, and the current
expression. Registers are single-assignment: binding a name that is already
live first renames the binder (and its scope) to a fresh name, so recursive
activations never clobber their callers. Sequencing is tracked by a spine of
pending continuations per activation; returning from a call restores the
caller's spine.

`ifz` tests integers against zero (zero takes the "then" branch). Assertion
formulas, by contrast, are genuine boolean formulas over the integer-valued
registers in scope.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Union

from .desugar import FreshNames
from .primitives import PRIMITIVES, RuntimeEnv
from .syntax import (
    Alias, AliasDeref, Assert, Assign, Expr, FAnd, FCmp, FFalse, FNot, FOr,
    Formula, FTrue, IfZero, LetCall, LetDeref, LetInt, LetMkref, LetVar,
    Program, Seq, TAdd, TInt, TMul, TNu, TProd, TSub, Term, TVar, Var,
    all_names, pp_formula, pp_redex, rename,
)


@dataclass(frozen=True, slots=True)
class Addr:
    """A heap address; distinct from every integer value."""

    index: int

    def __str__(self) -> str:
        return f"addr#{self.index}"


Value = Union[int, Addr]


# ---------------------------------------------------------------------------
# Outcomes.


@dataclass(frozen=True, slots=True)
class Final:
    """The program ran to completion; `value` is the result."""

    value: Value

    def __str__(self) -> str:
        return f"finished with {self.value}"


@dataclass(frozen=True, slots=True)
class AssertFailure:
    """An assert statement evaluated to false."""

    formula: Formula
    bindings: tuple[tuple[str, int], ...]

    def __str__(self) -> str:
        env = ", ".join(f"{x} = {v}" for x, v in self.bindings)
        where = f" with {env}" if env else ""
        return f"assertion failed: {pp_formula(self.formula)}{where}"


@dataclass(frozen=True, slots=True)
class AliasFailure:
    """An alias annotation named two references that are not aliases."""

    left: str
    right: str
    deref: bool

    def __str__(self) -> str:
        rhs = f"*{self.right}" if self.deref else self.right
        return f"alias annotation failed: alias({self.left} = {rhs})"


@dataclass(frozen=True, slots=True)
class OutOfFuel:
    """The step budget ran out before the program finished."""

    steps: int

    def __str__(self) -> str:
        return f"ran out of fuel after {self.steps} steps"


@dataclass(frozen=True, slots=True)
class Stuck:
    """No rule applies; checked programs never reach this."""

    reason: str

    def __str__(self) -> str:
        return f"stuck: {self.reason}"


Outcome = Union[Final, AssertFailure, AliasFailure, OutOfFuel, Stuck]


@dataclass(slots=True)
class RunResult:
    outcome: Outcome
    steps: int
    trace: list[str] = field(default_factory=list)

    @property
    def failed(self) -> bool:
        return isinstance(self.outcome, (AssertFailure, AliasFailure))


class _StuckError(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------------------
# Formula evaluation over the register file.


def eval_term(t: Term, regs: dict[str, Value]) -> int:
    match t:
        case TVar(x):
            if x not in regs:
                raise _StuckError(f"unbound variable {x!r} in formula")
            v = regs[x]
            if not isinstance(v, int):
                raise _StuckError(
                    f"variable {x!r} holds a reference, not an integer"
                )
            return v
        case TInt(n):
            return n
        case TNu():
            raise _StuckError("placeholder variable in a runtime formula")
        case TAdd(l, r):
            return eval_term(l, regs) + eval_term(r, regs)
        case TSub(l, r):
            return eval_term(l, regs) - eval_term(r, regs)
        case TMul(k, inner):
            return k * eval_term(inner, regs)
        case TProd(l, r):
            return eval_term(l, regs) * eval_term(r, regs)
    raise TypeError(f"not a term: {t!r}")


_CMP = {
    "=": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
}


def eval_formula(f: Formula, regs: dict[str, Value]) -> bool:
    match f:
        case FTrue():
            return True
        case FFalse():
            return False
        case FCmp(op, l, r):
            return _CMP[op](eval_term(l, regs), eval_term(r, regs))
        case FAnd(l, r):
            return eval_formula(l, regs) and eval_formula(r, regs)
        case FOr(l, r):
            return eval_formula(l, regs) or eval_formula(r, regs)
        case FNot(g):
            return not eval_formula(g, regs)
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# The machine.


@dataclass(slots=True)
class _Frame:
    var: str          # caller binder receiving the return value
    label: int
    cont: Expr        # caller continuation
    spine: list[Expr]  # caller's pending sequence rests


class _Machine:
    def __init__(self, program: Program, env: RuntimeEnv,
                 fuel: int, keep_trace: bool) -> None:
        self.program = program
        self.env = env
        self.fuel = fuel
        self.keep_trace = keep_trace
        self.heap: dict[Addr, Value] = {}
        self.regs: dict[str, Value] = {}
        self.stack: list[_Frame] = []
        self.spine: list[Expr] = []
        self.fresh = FreshNames(all_names(program))
        self.next_addr = 0
        self.steps = 0
        self.trace: list[str] = []

    # -- helpers -------------------------------------------------------------

    def lookup(self, x: str) -> Value:
        if x not in self.regs:
            raise _StuckError(f"unbound variable {x!r}")
        return self.regs[x]

    def lookup_addr(self, x: str) -> Addr:
        v = self.lookup(x)
        if not isinstance(v, Addr):
            raise _StuckError(f"{x!r} holds {v}, not a reference")
        return v

    def lookup_int(self, x: str) -> int:
        v = self.lookup(x)
        if not isinstance(v, int):
            raise _StuckError(f"{x!r} holds a reference, not an integer")
        return v

    def bind(self, var: str, body: Expr) -> tuple[str, Expr]:
        """Returns a binder/body pair safe to bind in the register file."""
        if var in self.regs:
            new = self.fresh.fresh(var)
            return new, rename(body, var, new)
        return var, body

    def alloc(self, v: Value) -> Addr:
        a = Addr(self.next_addr)
        self.next_addr += 1
        self.heap[a] = v
        return a

    def record(self, rule: str, e: Expr) -> None:
        self.steps += 1
        if self.keep_trace:
            self.trace.append(f"{rule}  {pp_redex(e)}")

    # -- the step loop ---------------------------------------------------------

    def run(self, e: Expr) -> Outcome:
        while True:
            # Sequencing is administrative: descend to the head statement,
            # remembering the rests on the spine.
            while isinstance(e, Seq):
                self.spine.append(e.rest)
                e = e.first

            if self.steps >= self.fuel:
                return OutOfFuel(self.steps)

            match e:
                case Var(x):
                    v = self.lookup(x)
                    if self.spine:
                        rest = self.spine.pop()
                        self.record("seq", Seq(e, rest))
                        e = rest
                    elif self.stack:
                        frame = self.stack.pop()
                        self.record("var", e)
                        self.regs[frame.var] = v
                        self.spine = frame.spine
                        e = frame.cont
                    else:
                        self.record("var", e)
                        return Final(v)

                case LetVar(x, y, body):
                    v = self.lookup(y)
                    x, body = self.bind(x, body)
                    self.record("let", LetVar(x, y, body))
                    self.regs[x] = v
                    e = body

                case LetInt(x, n, body):
                    x, body = self.bind(x, body)
                    self.record("let-int", LetInt(x, n, body))
                    self.regs[x] = n
                    e = body

                case LetMkref(x, y, body):
                    v = self.lookup(y)
                    x, body = self.bind(x, body)
                    self.record("mkref", LetMkref(x, y, body))
                    self.regs[x] = self.alloc(v)
                    e = body

                case LetDeref(x, y, body):
                    a = self.lookup_addr(y)
                    if a not in self.heap:
                        raise _StuckError(f"dangling reference {a}")
                    x, body = self.bind(x, body)
                    self.record("deref", LetDeref(x, y, body))
                    self.regs[x] = self.heap[a]
                    e = body

                case LetCall(x, fn, label, args, body):
                    e = self.step_call(e, x, fn, label, args, body)

                case IfZero(c, then, els):
                    v = self.lookup_int(c)
                    if v == 0:
                        self.record("if-true", e)
                        e = then
                    else:
                        self.record("if-false", e)
                        e = els

                case Assign(x, y, body):
                    a = self.lookup_addr(x)
                    if a not in self.heap:
                        raise _StuckError(f"dangling reference {a}")
                    v = self.lookup(y)
                    self.record("assign", e)
                    self.heap[a] = v
                    e = body

                case Alias(x, y, body):
                    ax = self.lookup_addr(x)
                    ay = self.lookup_addr(y)
                    if ax == ay:
                        self.record("alias", e)
                        e = body
                    else:
                        self.record("alias-fail", e)
                        return AliasFailure(x, y, deref=False)

                case AliasDeref(x, y, body):
                    ax = self.lookup_addr(x)
                    ay = self.lookup_addr(y)
                    if ay not in self.heap:
                        raise _StuckError(f"dangling reference {ay}")
                    inner = self.heap[ay]
                    if not isinstance(inner, Addr):
                        raise _StuckError(
                            f"*{y} holds {inner}, not a reference"
                        )
                    if ax == inner:
                        self.record("alias-deref", e)
                        e = body
                    else:
                        self.record("alias-deref-fail", e)
                        return AliasFailure(x, y, deref=True)

                case Assert(f, body):
                    if eval_formula(f, self.regs):
                        self.record("assert", e)
                        e = body
                    else:
                        self.record("assert-fail", e)
                        return AssertFailure(f, self.formula_bindings(f))

                case _:
                    raise _StuckError(f"no rule for {e!r}")

    def step_call(self, e: Expr, x: str, fn: str, label: int,
                  args: tuple[str, ...], body: Expr) -> Expr:
        values = [self.lookup(a) for a in args]
        if fn in PRIMITIVES:
            prim = PRIMITIVES[fn]
            for a, v in zip(args, values):
                if not isinstance(v, int):
                    raise _StuckError(
                        f"{a!r} holds a reference, not an integer"
                    )
            x, body = self.bind(x, body)
            self.record("prim", LetCall(x, fn, label, args, body))
            self.regs[x] = prim.run(values, self.env)
            return body

        try:
            fd = self.program.fun(fn)
        except KeyError:
            raise _StuckError(f"unknown function {fn!r}") from None
        if len(fd.params) != len(args):
            raise _StuckError(
                f"{fn} expects {len(fd.params)} arguments, got {len(args)}"
            )
        x, cont = self.bind(x, body)
        self.record("call", LetCall(x, fn, label, args, cont))
        callee = fd.body
        for param, v in zip(fd.params, values):
            if param in self.regs:
                new = self.fresh.fresh(param)
                callee = rename(callee, param, new)
                param = new
            self.regs[param] = v
        self.stack.append(_Frame(x, label, cont, self.spine))
        self.spine = []
        return callee

    def formula_bindings(self, f: Formula) -> tuple[tuple[str, int], ...]:
        from .syntax import formula_vars

        items = []
        for x in sorted(formula_vars(f)):
            v = self.regs.get(x)
            if isinstance(v, int):
                items.append((x, v))
        return tuple(items)


def run(program: Program, *, seed: int = 0, fuel: int = 1_000_000,
        trace: bool = False, nondet_lo: int = -128,
        nondet_hi: int = 127) -> RunResult:
    """Runs a checked core program to an outcome.

    Nondeterministic reads draw from `random.Random(seed)` over the closed
    interval [nondet_lo, nondet_hi], so runs are reproducible per seed.
    """
    env = RuntimeEnv(random.Random(seed), nondet_lo, nondet_hi)
    machine = _Machine(program, env, fuel, trace)
    try:
        outcome = machine.run(program.body)
    except _StuckError as ex:
        outcome = Stuck(ex.reason)
    return RunResult(outcome, machine.steps, machine.trace)
