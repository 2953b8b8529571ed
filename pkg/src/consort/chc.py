"""Constrained Horn clause generation over the refinement templates.

With ownership solved, the remaining question is purely about integer
contents: does every assertion follow from how values flow through the
program? Each in-scope variable at each program point has one unknown leaf
predicate (see templates.py) relating its integer leaf value, the call
context, and the other in-scope integers. This module turns the program into
Horn clauses over those predicates:

- every control step emits, per variable live at the target point, a clause
  flowing the variable's knowledge across the step (with the path condition
  for conditionals and the defining term for fresh bindings); each clause
  body carries only the atoms that pin its own head — a variable's joint
  relation with the other in-scope integers rides along in its own
  predicate's argument frame, and the frames meet at goal clauses;
- calls shift the context (the call-site label is prepended, the oldest
  entry falls off) and route knowledge through the callee's entry and exit
  predicates, substituting parameter names by caller arguments;
- an alias annotation merges the two sides' knowledge: both post-predicates
  receive the conjunction of both pre-predicates over a shared value;
- each assertion becomes a goal clause: the environment plus the negated
  formula must be unsatisfiable;
- wherever a reference's innermost layer has zero solved ownership, its leaf
  predicate is forced to accept every value. These clauses justify framing:
  writes require exclusive ownership, so any knowledge held by a possibly
  mutably-aliased reference has been flattened before the mutation happens.

A CHC solver then searches for predicate interpretations making every
clause valid: success verifies the program, and a refutation means some
assertion cannot be discharged at this precision.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .primitives import PRIMITIVES
from .syntax import (
    Alias, AliasDeref, Assert, Assign, Expr, FAnd, FCmp, FFalse, FNot, FOr,
    Formula, FTrue, IfZero, LetCall, LetDeref, LetInt, LetMkref, LetVar,
    Seq, TAdd, Term, TInt, TMul, TNu, TProd, TSub, TVar, Var, pp_redex,
)
from .templates import RET, Point, Templates, fun_entry, fun_exit

ZERO = Fraction(0)

_LITERAL = re.compile(r"^-?[0-9]+$")


# ---------------------------------------------------------------------------
# SMT rendering of formula syntax.


def term_smt(t: Term, nu: str | None = None) -> str:
    """Renders a term; `nu` names the value variable, if one is allowed."""
    match t:
        case TVar(name):
            return name
        case TInt(v):
            return str(v) if v >= 0 else f"(- {-v})"
        case TNu():
            if nu is None:
                raise ValueError("value variable not allowed here")
            return nu
        case TAdd(l, r):
            return f"(+ {term_smt(l, nu)} {term_smt(r, nu)})"
        case TSub(l, r):
            return f"(- {term_smt(l, nu)} {term_smt(r, nu)})"
        case TMul(k, inner):
            factor = str(k) if k >= 0 else f"(- {-k})"
            return f"(* {factor} {term_smt(inner, nu)})"
        case TProd(l, r):
            return f"(* {term_smt(l, nu)} {term_smt(r, nu)})"
    raise TypeError(f"not a term: {t!r}")


def formula_smt(f: Formula, nu: str | None = None) -> str:
    match f:
        case FTrue():
            return "true"
        case FFalse():
            return "false"
        case FCmp(op, l, r):
            ls, rs = term_smt(l, nu), term_smt(r, nu)
            if op == "!=":
                return f"(not (= {ls} {rs}))"
            return f"({op} {ls} {rs})"
        case FAnd(l, r):
            return f"(and {formula_smt(l, nu)} {formula_smt(r, nu)})"
        case FOr(l, r):
            return f"(or {formula_smt(l, nu)} {formula_smt(r, nu)})"
        case FNot(g):
            return f"(not {formula_smt(g, nu)})"
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Clauses.


@dataclass(frozen=True, slots=True)
class Atom:
    """An applied predicate; arguments are variable names or int literals."""

    pred: str
    args: tuple[str, ...]

    def to_smt(self) -> str:
        return f"({self.pred} {' '.join(self.args)})"

    def describe(self) -> str:
        return f"{self.pred}({', '.join(self.args)})"


@dataclass(frozen=True, slots=True)
class Clause:
    """body atoms /\\ body terms => head (None means false: a goal)."""

    head: Atom | None
    body_atoms: tuple[Atom, ...]
    body_terms: tuple[str, ...]
    vars: tuple[str, ...]
    why: str

    def to_smt(self) -> str:
        parts = [a.to_smt() for a in self.body_atoms] + list(self.body_terms)
        if not parts:
            body = "true"
        elif len(parts) == 1:
            body = parts[0]
        else:
            body = f"(and {' '.join(parts)})"
        head = self.head.to_smt() if self.head is not None else "false"
        inner = head if body == "true" else f"(=> {body} {head})"
        if not self.vars:
            return f"(assert {inner})"
        binders = " ".join(f"({v} Int)" for v in self.vars)
        return f"(assert (forall ({binders}) {inner}))"

    def describe(self) -> str:
        parts = [a.describe() for a in self.body_atoms]
        parts += list(self.body_terms)
        body = " /\\ ".join(parts) if parts else "true"
        head = self.head.describe() if self.head is not None else "false"
        return f"{body}  =>  {head}"


# Straight-line code gives almost every predicate exactly one defining
# clause, and z3's Horn preprocessing inlines such predicates eagerly —
# multiplying clause bodies along the whole chain, with exponential memory
# use. Solving works fine with that inlining turned off.
_SPACER_OPTIONS = (
    "(set-option :fp.xform.inline_eager false)",
    "(set-option :fp.xform.inline_linear false)",
)


@dataclass(slots=True)
class CHCSystem:
    """All clauses for one program under one ownership solution."""

    templates: Templates
    clauses: list[Clause] = field(default_factory=list)

    def predicates(self) -> list[tuple[str, int]]:
        return self.templates.predicates()

    def smt_script(self, solver: str = "spacer") -> str:
        # Options must precede set-logic: declaring the logic configures
        # the solving engine, and later engine options are ignored.
        lines = list(_SPACER_OPTIONS) if solver == "spacer" else []
        lines.append("(set-logic HORN)")
        for name, arity in self.predicates():
            sorts = " ".join(["Int"] * arity)
            lines.append(f"(declare-fun {name} ({sorts}) Bool)")
        for c in self.clauses:
            lines.append(c.to_smt())
        lines.append("(check-sat)")
        return "\n".join(lines) + "\n"

    def dump(self) -> str:
        lines = [f"{len(self.clauses)} clauses over "
                 f"{len(self.predicates())} predicates"]
        for c in self.clauses:
            lines.append(f"[{c.why}]")
            lines.append(f"  {c.describe()}")
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Generation.

# A fresh binding: (variable, its leaf value term, supporting atoms). A
# term-valued binding (empty atoms) substitutes into every head; an
# atom-backed value is mentioned only by clauses carrying those atoms.
_NewBinding = tuple[str, str, list[Atom]]


class _Gen:
    def __init__(self, t: Templates, own: Mapping[str, Fraction]) -> None:
        self.t = t
        self.own = own
        self.k = t.context_depth
        self.ctx = tuple(f"ctx!{i + 1}" for i in range(self.k))
        self.clauses: list[Clause] = []
        self._seq_target: list[Point] = []
        self._nu = 0

    def nu(self) -> str:
        self._nu += 1
        return f"nu!{self._nu}"

    # -- clause assembly ---------------------------------------------------------

    def emit(self, body_atoms: list[Atom], body_terms: list[str],
             head: Atom | None, why: str, also: tuple[str, ...] = ()) -> None:
        names: set[str] = set(also)
        atoms = list(body_atoms) + ([head] if head is not None else [])
        for a in atoms:
            names.update(arg for arg in a.args
                         if not _LITERAL.match(arg)
                         and not arg.startswith("("))
        self.clauses.append(Clause(
            head=head,
            body_atoms=tuple(body_atoms),
            body_terms=tuple(body_terms),
            vars=tuple(sorted(names)),
            why=why,
        ))

    def leaf(self, x: str, p: Point, value: str) -> Atom:
        """x's leaf predicate at p applied to a value and p's context."""
        return Atom(self.t.pred_name(x, p),
                    (value, *self.ctx, *self.t.fv_of(x, p)))

    def env(self, p: Point) -> list[Atom]:
        """Everything known about the integers in scope at p."""
        return [self.leaf(z, p, z) for z in self.t.int_scope(p)]

    def flow(self, p: Point, q: Point, why: str, *,
             terms: list[str] | None = None,
             new: _NewBinding | None = None,
             overrides: dict[str, tuple[str, list[Atom]]] | None = None,
             ) -> None:
        """One clause per variable live at q, carrying knowledge from p.

        Each clause body holds only the atoms that pin its own head:
        the variable's own leaf at p, a new binding's defining atoms, or
        an override's atoms. Heads for persisting variables share their
        frame slot names with the body atom, so the joint relation with
        the other in-scope integers transports without conjoining the
        whole environment — keeping derivations chain-shaped, which Horn
        solvers handle far better than wide diamond fan-ins.

        `terms` are path conditions shared by every clause. `new`
        describes a variable bound by this step: a term-valued binding
        substitutes for the variable in every head, an atom-backed one
        only where its defining atoms are present (elsewhere the slot
        stays universally quantified). `overrides` replaces the default
        same-leaf flow for specific variables (alias merges, assignment,
        call returns, read exactness).
        """
        t = self.t
        new_var, new_val, new_atoms = new if new else (None, "", [])
        int_binding = new_var is not None and t.depth_of(new_var, q) == 0
        shared_theta: dict[str, str] = {}
        if int_binding and not new_atoms:
            shared_theta[new_var] = new_val
        base_terms = list(terms or [])
        for x in t.scopes[q]:
            theta = shared_theta
            if x == new_var:
                val, atoms = new_val, list(new_atoms)
            elif overrides and x in overrides:
                o_val, o_atoms = overrides[x]
                val, atoms = o_val, list(o_atoms) + list(new_atoms)
                if int_binding:
                    theta = {new_var: new_val}
            elif t.depth_of(x, q) == 0:
                val, atoms = x, [self.leaf(x, p, x)]
            else:
                v = self.nu()
                val, atoms = v, [self.leaf(x, p, v)]
            fv = tuple(theta.get(w, w) for w in t.fv_of(x, q))
            head = Atom(t.pred_name(x, q), (val, *self.ctx, *fv))
            self.emit(atoms, base_terms, head, f"{x}: {why}")

    # -- program walk ------------------------------------------------------------

    def program(self) -> CHCSystem:
        t = self.t
        for f in t.program.funs:
            self.flow(fun_entry(f.name), t.at(f.body),
                      f"entry of {f.name}")
            self.expr(f.body, f.name)
        self.expr(t.program.body, None)
        self.forcing()
        return CHCSystem(t, self.clauses)

    def forcing(self) -> None:
        """Flattens knowledge under any possibly-mutably-aliased reference.

        A reference layer with zero solved ownership may have a mutable
        alias elsewhere, so nothing stable is known about what sits below
        it: the leaf predicate must accept every value. Zero ownership
        propagates inward in the ownership system, so checking the
        innermost layer covers intermediate layers too.
        """
        t = self.t
        for p in t.points:
            for z in t.scopes[p]:
                d = t.depth_of(z, p)
                if d == 0:
                    continue
                if self.own.get(t.own_name(z, d - 1, p), ZERO) != 0:
                    continue
                fresh = tuple(self.nu() for _ in t.fv_of(z, p))
                head = Atom(t.pred_name(z, p), (self.nu(), *self.ctx, *fresh))
                self.emit([], [], head,
                          f"{z} unowned at point {p}: leaf is unconstrained")

    def expr(self, e: Expr, fn: str | None) -> None:
        t = self.t
        p = t.at(e)
        why = f"{pp_redex(e)} at point {p}"
        match e:
            case Var(x):
                self.tail(e, x, fn)
            case LetVar(y, x, body):
                q = t.at(body)
                if t.depth_of(x, p) == 0:
                    new = (y, x, [])
                else:
                    v = self.nu()
                    new = (y, v, [self.leaf(x, p, v)])
                self.flow(p, q, why, new=new)
                self.expr(body, fn)
            case LetInt(y, n, body):
                q = t.at(body)
                value = str(n) if n >= 0 else f"(- {-n})"
                self.flow(p, q, why, new=(y, value, []))
                self.expr(body, fn)
            case LetMkref(y, x, body):
                q = t.at(body)
                if t.depth_of(x, p) == 0:
                    new = (y, x, [])
                else:
                    v = self.nu()
                    new = (y, v, [self.leaf(x, p, v)])
                self.flow(p, q, why, new=new)
                self.expr(body, fn)
            case LetDeref(y, x, body):
                q = t.at(body)
                v = self.nu()
                # One shared value: y is bound to it, and x's own leaf is
                # pinned to it too, so "content of x = y" survives the read
                # (the head's value slot and y's argument slot coincide).
                self.flow(p, q, why, new=(y, v, [self.leaf(x, p, v)]),
                          overrides={x: (v, [])})
                self.expr(body, fn)
            case LetCall(_, callee, _, _, body):
                if callee in PRIMITIVES:
                    self.prim_call(e, fn)
                else:
                    self.user_call(e, fn)
                self.expr(body, fn)
            case IfZero(c, then, els):
                self.flow(p, t.at(then), f"{why} (then)",
                          terms=[f"(= {c} 0)"])
                self.flow(p, t.at(els), f"{why} (else)",
                          terms=[f"(not (= {c} 0))"])
                self.expr(then, fn)
                self.expr(els, fn)
            case Assign(x, z, body):
                q = t.at(body)
                if t.depth_of(x, p) == 1:
                    overrides = {x: (z, [])}
                else:
                    v = self.nu()
                    overrides = {x: (v, [self.leaf(z, p, v)])}
                self.flow(p, q, why, overrides=overrides)
                self.expr(body, fn)
            case Alias(x, y, body):
                q = t.at(body)
                v = self.nu()
                both = [self.leaf(x, p, v), self.leaf(y, p, v)]
                self.flow(p, q, why,
                          overrides={x: (v, both), y: (v, both)})
                self.expr(body, fn)
            case AliasDeref(x, y, body):
                q = t.at(body)
                v = self.nu()
                both = [self.leaf(x, p, v), self.leaf(y, p, v)]
                self.flow(p, q, why,
                          overrides={x: (v, both), y: (v, both)})
                self.expr(body, fn)
            case Assert(phi, body):
                goal = f"(not {formula_smt(phi)})"
                self.emit(self.env(p), [goal], None, f"goal: {why}")
                # Execution only continues past a passed assertion, so the
                # formula strengthens everything downstream.
                self.flow(p, t.at(body), why, terms=[formula_smt(phi)])
                self.expr(body, fn)
            case Seq(first, rest):
                self.flow(p, t.at(first), why)
                self._seq_target.append(t.at(rest))
                try:
                    self.expr(first, fn)
                finally:
                    self._seq_target.pop()
                self.expr(rest, fn)
            case _:
                raise TypeError(f"not an expression: {e!r}")

    # -- calls -------------------------------------------------------------------

    def callee_ctx(self, label: int) -> tuple[str, ...]:
        """The callee's context: the call site pushed, oldest entry lost."""
        if self.k == 0:
            return ()
        return (str(label), *self.ctx[:self.k - 1])

    def prim_call(self, e: LetCall, fn: str | None) -> None:
        t = self.t
        p, q = t.at(e), t.at(e.body)
        why = f"{pp_redex(e)} at point {p}"
        prim = PRIMITIVES[e.fn]
        v = self.nu()
        formula = prim.refinement([TVar(a) for a in e.args])
        terms = [] if isinstance(formula, FTrue) \
            else [formula_smt(formula, v)]
        self.flow(p, q, why, terms=terms, new=(e.var, v, []))

    def user_call(self, e: LetCall, fn: str | None) -> None:
        t = self.t
        p, q = t.at(e), t.at(e.body)
        why = f"{pp_redex(e)} at point {p}"
        fb, fe = fun_entry(e.fn), fun_exit(e.fn)
        params = t.program.fun(e.fn).params
        cctx = self.callee_ctx(e.label)
        sigma = dict(zip(params, e.args))

        # Knowledge flows into the callee's entry predicates, with parameter
        # names standing for the caller's arguments. The caller's whole
        # integer environment is conjoined: the callee's frame keeps only
        # the arguments, so facts that live jointly across the caller's
        # frame must be closed off before the other variables vanish.
        env = self.env(p)
        for pi, xi in zip(params, e.args):
            fv = tuple(sigma.get(w, w) for w in t.fv_of(pi, fb))
            if t.depth_of(pi, fb) == 0:
                self.emit(env, [], Atom(t.pred_name(pi, fb),
                                        (xi, *cctx, *fv)),
                          f"{pi} := {xi}: {why}")
            else:
                v = self.nu()
                self.emit(env + [self.leaf(xi, p, v)], [],
                          Atom(t.pred_name(pi, fb), (v, *cctx, *fv)),
                          f"{pi} := {xi}: {why}")

        # After the call, the bound result carries the callee's return
        # knowledge and every reference argument carries its parameter's
        # exit knowledge (the callee may have written through it).
        vr = self.nu()
        sigma_out = dict(sigma)
        if t.depth_of(RET, fe) == 0:
            sigma_out[RET] = vr
        ret_fv = tuple(sigma_out.get(w, w) for w in t.fv_of(RET, fe))
        ret_atom = Atom(t.pred_name(RET, fe), (vr, *cctx, *ret_fv))
        overrides: dict[str, tuple[str, list[Atom]]] = {}
        for pi, xi in zip(params, e.args):
            if t.depth_of(xi, q) == 0:
                continue
            v = self.nu()
            fv = tuple(sigma_out.get(w, w) for w in t.fv_of(pi, fe))
            overrides[xi] = (v, [Atom(t.pred_name(pi, fe),
                                      (v, *cctx, *fv))])
        self.flow(p, q, why, new=(e.var, vr, [ret_atom]),
                  overrides=overrides)

    # -- result positions --------------------------------------------------------

    def tail(self, e: Expr, x: str, fn: str | None) -> None:
        t = self.t
        p = t.at(e)
        if self._seq_target:
            q = self._seq_target[-1]
            self.flow(p, q, f"{x} discarded before point {q}")
            return
        if fn is None:
            return  # end of the program
        fe = fun_exit(fn)
        params = t.program.fun(fn).params
        why = f"return of {x} from {fn}"
        theta = {RET: x} if t.depth_of(RET, fe) == 0 else {}
        # The exit frame keeps only the parameters and the result, so the
        # whole local environment is conjoined before the rest of the frame
        # is dropped (mirrors the closure done at call entries).
        env = self.env(p)

        def exit_head(z: str, value: str) -> Atom:
            fv = tuple(theta.get(w, w) for w in t.fv_of(z, fe))
            return Atom(t.pred_name(z, fe), (value, *self.ctx, *fv))

        for pi in params:
            if t.depth_of(pi, p) == 0:
                self.emit(env, [], exit_head(pi, pi), f"{pi}: {why}")
            else:
                v = self.nu()
                self.emit(env + [self.leaf(pi, p, v)], [],
                          exit_head(pi, v), f"{pi}: {why}")
        if t.depth_of(RET, fe) == 0:
            self.emit(env, [], exit_head(RET, x), f"result: {why}")
        else:
            v = self.nu()
            self.emit(env + [self.leaf(x, p, v)], [],
                      exit_head(RET, v), f"result: {why}")


def generate(t: Templates, own: Mapping[str, Fraction]) -> CHCSystem:
    """Builds the Horn clause system for a templated program under a
    solved ownership assignment."""
    return _Gen(t, own).program()
