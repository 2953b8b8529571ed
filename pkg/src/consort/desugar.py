"""Lowering from surface trees to core syntax, plus program checking.

Desugaring introduces fresh let-bindings for nested operands, literals in
operand positions, derefs and calls inside asserted formulas, and repeated
call-argument variables. Trailing statements receive the dummy continuation
`let d = 0 in d`. Calls without an explicit label get fresh positive labels
in traversal order.
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from . import parser as sp
from .primitives import PRIMITIVES
from .syntax import (
    Alias, AliasDeref, Assert, Assign, Expr, FAnd, FCmp, FFalse, FNot, FOr,
    Formula, FTrue, FunDef, IfZero, LetCall, LetDeref, LetInt, LetMkref,
    LetVar, Program, Seq, TAdd, TInt, TMul, TProd, TSub, Term, TVar, Var,
    all_names, binders, formula_mentions_nu, formula_vars, free_vars, labels,
    program_exprs, rename, subexprs, substitute_labels, substitute_names,
)


class WellFormednessError(Exception):
    pass


_STEM = re.compile(r"^([^$]*)")


class FreshNames:
    """Generates `<stem>$<counter>` names disjoint from every used name."""

    def __init__(self, used: set[str] | frozenset[str] = frozenset()) -> None:
        self._used = set(used)
        self._counter = 1
        self.allocated: list[str] = []

    def fresh(self, base: str) -> str:
        stem = _STEM.match(base).group(1) or "t"
        while True:
            candidate = f"{stem}${self._counter}"
            self._counter += 1
            if candidate not in self._used:
                self._used.add(candidate)
                self.allocated.append(candidate)
                return candidate

    def note(self, name: str) -> None:
        self._used.add(name)


def _surface_names(p: sp.SurfaceProgram) -> set[str]:
    names: set[str] = set()

    def walk(e: sp.SurfaceExpr) -> None:
        match e:
            case sp.SVar(n):
                names.add(n)
            case sp.SInt(_) | sp.SBool(_) | sp.SNondet():
                pass
            case sp.SDeref(a) | sp.SMkref(a) | sp.SUnop(_, a):
                walk(a)
            case sp.SCall(_, _, args):
                for a in args:
                    walk(a)
            case sp.SBinop(_, l, r):
                walk(l)
                walk(r)
            case sp.SLet(v, rhs, body):
                names.add(v)
                walk(rhs)
                walk(body)
            case sp.SIf(c, t, e2):
                walk(c)
                walk(t)
                walk(e2)
            case sp.SAssign(t, v, body):
                names.add(t)
                walk(v)
                if body is not None:
                    walk(body)
            case sp.SAlias(l, _, r, body):
                names.update((l, r))
                if body is not None:
                    walk(body)
            case sp.SAssert(c, body):
                walk(c)
                if body is not None:
                    walk(body)
            case sp.SSeq(first, rest):
                walk(first)
                walk(rest)

    for f in p.funs:
        names.update(f.params)
        walk(f.body)
    walk(p.body)
    return names


class _Desugarer:
    def __init__(self, program: sp.SurfaceProgram) -> None:
        self.fresh = FreshNames(_surface_names(program))
        explicit = self._explicit_labels(program)
        self.next_label = max(explicit, default=0) + 1
        self.explicit_labels = explicit
        self.fresh_labels: set[int] = set()

    @staticmethod
    def _explicit_labels(p: sp.SurfaceProgram) -> set[int]:
        found: set[int] = set()

        def walk(e: sp.SurfaceExpr) -> None:
            match e:
                case sp.SCall(_, label, args):
                    if label is not None:
                        found.add(label)
                    for a in args:
                        walk(a)
                case sp.SDeref(a) | sp.SMkref(a) | sp.SUnop(_, a):
                    walk(a)
                case sp.SBinop(_, l, r):
                    walk(l)
                    walk(r)
                case sp.SLet(_, rhs, body):
                    walk(rhs)
                    walk(body)
                case sp.SIf(c, t, e2):
                    walk(c)
                    walk(t)
                    walk(e2)
                case sp.SAssign(_, v, body):
                    walk(v)
                    if body is not None:
                        walk(body)
                case sp.SAlias(_, _, _, body):
                    if body is not None:
                        walk(body)
                case sp.SAssert(c, body):
                    walk(c)
                    if body is not None:
                        walk(body)
                case sp.SSeq(first, rest):
                    walk(first)
                    walk(rest)
                case _:
                    pass

        for f in p.funs:
            walk(f.body)
        walk(p.body)
        return found

    def label_for(self, explicit: int | None) -> int:
        if explicit is not None:
            return explicit
        lab = self.next_label
        self.next_label += 1
        self.fresh_labels.add(lab)
        return lab

    # -- expressions ----------------------------------------------------------

    def expr(self, e: sp.SurfaceExpr) -> Expr:
        match e:
            case sp.SLet(var, rhs, body):
                return self.let_bind(var, rhs, self.expr(body))
            case sp.SIf(cond, then, els):
                wrap, cv = self.to_var(cond)
                return wrap(IfZero(cv, self.expr(then), self.expr(els)))
            case sp.SAssign(target, value, body):
                wrap, sv = self.to_var(value)
                return wrap(Assign(target, sv, self.opt_expr(body)))
            case sp.SAlias(left, deref, right, body):
                cls = AliasDeref if deref else Alias
                return cls(left, right, self.opt_expr(body))
            case sp.SAssert(cond, body):
                wrap, formula = self.formula(cond)
                return wrap(Assert(formula, self.opt_expr(body)))
            case sp.SSeq(first, rest):
                return self.statement(first, self.expr(rest))
            case _:
                # Operand expression in value (tail) position.
                wrap, v = self.to_var(e)
                return wrap(Var(v))

    def opt_expr(self, e: sp.SurfaceExpr | None) -> Expr:
        if e is None:
            return self.dummy()
        return self.expr(e)

    def dummy(self) -> Expr:
        d = self.fresh.fresh("d")
        return LetInt(d, 0, Var(d))

    def statement(self, first: sp.SurfaceExpr, rest: Expr) -> Expr:
        """Desugar `first; rest` with first's result discarded."""
        match first:
            case sp.SVar(x):
                return Seq(Var(x), rest)
            case sp.SLet(_, _, _) | sp.SIf(_, _, _) | sp.SAssign(_, _, _) \
                    | sp.SAlias(_, _, _, _) | sp.SAssert(_, _) | sp.SSeq(_, _):
                return Seq(self.expr(first), rest)
            case _:
                # Operand statement: keep its bindings, drop the result.
                wrap, _ = self.to_var(first)
                return wrap(rest)

    # -- operand lowering ------------------------------------------------------

    def let_bind(self, var: str, rhs: sp.SurfaceExpr, body: Expr) -> Expr:
        """let var = rhs in body, flattening nested operands in rhs."""
        match rhs:
            case sp.SInt(n):
                return LetInt(var, n, body)
            case sp.SVar(y):
                return LetVar(var, y, body)
            case sp.SMkref(arg):
                wrap, v = self.to_var(arg)
                return wrap(LetMkref(var, v, body))
            case sp.SDeref(arg):
                wrap, v = self.to_var(arg)
                return wrap(LetDeref(var, v, body))
            case sp.SNondet():
                return LetCall(var, "nondet", self.label_for(None), (), body)
            case sp.SCall(fn, label, args):
                wraps = []
                names: list[str] = []
                for a in args:
                    w, v = self.to_var(a)
                    wraps.append(w)
                    names.append(v)
                # Core call arguments must be pairwise distinct variables;
                # repeated variables get fresh let-copies.
                seen: set[str] = set()
                copy_wraps = []
                for i, v in enumerate(names):
                    if v in seen:
                        cp = self.fresh.fresh(v)
                        copy_wraps.append(
                            lambda b, cp=cp, v=v: LetVar(cp, v, b)
                        )
                        names[i] = cp
                    seen.add(names[i])
                call = LetCall(var, fn, self.label_for(label), tuple(names), body)
                for w in reversed(copy_wraps):
                    call = w(call)
                for w in reversed(wraps):
                    call = w(call)
                return call
            case sp.SBinop(op, left, right):
                if op not in PRIMITIVES:
                    raise WellFormednessError(f"unknown operator {op!r}")
                lw, lv = self.to_var(left)
                rw, rv = self.to_var(right)
                names = [lv, rv]
                if lv == rv:
                    cp = self.fresh.fresh(rv)
                    names[1] = cp
                    inner = LetCall(var, op, self.label_for(None),
                                    tuple(names), body)
                    inner = LetVar(cp, rv, inner)
                else:
                    inner = LetCall(var, op, self.label_for(None),
                                    tuple(names), body)
                return lw(rw(inner))
            case sp.SUnop("-", arg):
                zero = self.fresh.fresh("t")
                wrap, v = self.to_var(arg)
                return wrap(LetInt(
                    zero, 0,
                    LetCall(var, "-", self.label_for(None), (zero, v), body),
                ))
            case sp.SUnop("!", arg):
                wrap, v = self.to_var(arg)
                return wrap(LetCall(var, "!", self.label_for(None), (v,), body))
            case sp.SBool(_):
                raise WellFormednessError(
                    "boolean literals are only allowed inside assert formulas"
                )
            case _:
                raise WellFormednessError(
                    "only operand expressions may appear on a let right-hand side"
                )

    def to_var(self, e: sp.SurfaceExpr):
        """Returns (wrapper, name): wrapper binds e to name around an expr."""
        if isinstance(e, sp.SVar):
            return (lambda body: body), e.name
        t = self.fresh.fresh("t")
        return (lambda body: self.let_bind(t, e, body)), t

    # -- formulas --------------------------------------------------------------

    def formula(self, e: sp.SurfaceExpr):
        """Returns (wrapper, Formula); wrapper binds extracted subterms."""
        match e:
            case sp.SBool(b):
                return (lambda body: body), (FTrue() if b else FFalse())
            case sp.SBinop(op, l, r) if op in ("=", "!=", "<", "<=", ">", ">="):
                lw, lt = self.term(l)
                rw, rt = self.term(r)
                return (lambda body: lw(rw(body))), FCmp(op, lt, rt)
            case sp.SBinop("&&", l, r):
                lw, lf = self.formula(l)
                rw, rf = self.formula(r)
                return (lambda body: lw(rw(body))), FAnd(lf, rf)
            case sp.SBinop("||", l, r):
                lw, lf = self.formula(l)
                rw, rf = self.formula(r)
                return (lambda body: lw(rw(body))), FOr(lf, rf)
            case sp.SUnop("!", arg):
                w, f = self.formula(arg)
                return w, FNot(f)
            case _:
                raise WellFormednessError(
                    "assert expects a boolean formula (comparison or &&/||/!)"
                )

    def term(self, e: sp.SurfaceExpr):
        """Returns (wrapper, Term) for a linear integer term."""
        match e:
            case sp.SInt(n):
                return (lambda body: body), TInt(n)
            case sp.SVar(x):
                return (lambda body: body), TVar(x)
            case sp.SBinop("+", l, r):
                lw, lt = self.term(l)
                rw, rt = self.term(r)
                return (lambda body: lw(rw(body))), TAdd(lt, rt)
            case sp.SBinop("-", l, r):
                lw, lt = self.term(l)
                rw, rt = self.term(r)
                return (lambda body: lw(rw(body))), TSub(lt, rt)
            case sp.SBinop("*", l, r):
                lw, lt = self.term(l)
                rw, rt = self.term(r)
                if isinstance(lt, TInt):
                    return (lambda body: lw(rw(body))), TMul(lt.value, rt)
                if isinstance(rt, TInt):
                    return (lambda body: lw(rw(body))), TMul(rt.value, lt)
                raise WellFormednessError(
                    "nonlinear multiplication in formula: one factor must be "
                    "an integer literal"
                )
            case sp.SUnop("-", arg):
                w, t = self.term(arg)
                return w, TSub(TInt(0), t)
            case sp.SDeref(_) | sp.SCall(_, _, _) | sp.SNondet():
                wrap, v = self.to_var(e)
                return wrap, TVar(v)
            case _:
                raise WellFormednessError(
                    "expected an integer term inside assert formula"
                )


def desugar(program: sp.SurfaceProgram) -> Program:
    """Lowers a surface program to core syntax."""
    d = _Desugarer(program)
    funs = tuple(
        FunDef(f.name, f.params, d.expr(f.body)) for f in program.funs
    )
    body = d.expr(program.body)
    return _canonicalize(Program(funs, body), d)


def _node_names(e: Expr) -> list[str]:
    """Identifiers mentioned directly by this node, in printed order."""
    match e:
        case Var(x):
            return [x]
        case LetVar(v, rhs, _) | LetMkref(v, rhs, _) | LetDeref(v, rhs, _):
            return [v, rhs]
        case LetInt(v, _, _):
            return [v]
        case LetCall(v, _, _, args, _):
            return [v, *args]
        case IfZero(c, _, _):
            return [c]
        case Assign(t, s, _):
            return [t, s]
        case Alias(l, r, _) | AliasDeref(l, r, _):
            return [l, r]
        case Assert(f, _):
            return _formula_names(f)
        case Seq(_, _):
            return []
    raise TypeError(f"not an expression: {e!r}")


def _term_names(t: Term) -> list[str]:
    match t:
        case TVar(x):
            return [x]
        case TInt(_):
            return []
        case TAdd(l, r) | TSub(l, r) | TProd(l, r):
            return _term_names(l) + _term_names(r)
        case TMul(_, inner):
            return _term_names(inner)
    raise TypeError(f"not a term: {t!r}")


def _formula_names(f: Formula) -> list[str]:
    match f:
        case FTrue() | FFalse():
            return []
        case FCmp(_, l, r):
            return _term_names(l) + _term_names(r)
        case FAnd(l, r) | FOr(l, r):
            return _formula_names(l) + _formula_names(r)
        case FNot(g):
            return _formula_names(g)
    raise TypeError(f"not a formula: {f!r}")


def _canonicalize(p: Program, d: _Desugarer) -> Program:
    """Renumbers desugar-introduced names and labels into reading order.

    Lowering builds terms inside-out, so raw counters come out in an
    arbitrary-looking order. This pass reassigns the names and labels the
    lowering itself introduced (never user-written ones) sequentially by
    first occurrence, making output stable and pleasant to read. A program
    that is already in lowered form passes through unchanged.
    """
    allocated = set(d.fresh.allocated)
    fresh_labels = d.fresh_labels
    if not allocated and not fresh_labels:
        return p

    name_order: list[str] = []
    seen_names: set[str] = set()
    label_order: list[int] = []
    seen_labels: set[int] = set()
    for e in program_exprs(p):
        for name in _node_names(e):
            if name in allocated and name not in seen_names:
                seen_names.add(name)
                name_order.append(name)
        if (
            isinstance(e, LetCall)
            and e.label in fresh_labels
            and e.label not in seen_labels
        ):
            seen_labels.add(e.label)
            label_order.append(e.label)

    regen = FreshNames(all_names(p) - allocated)
    name_map = {old: regen.fresh(old) for old in name_order}
    label_base = min(fresh_labels, default=1)
    label_map = {old: label_base + i for i, old in enumerate(label_order)}

    def fix(e: Expr) -> Expr:
        return substitute_labels(substitute_names(e, name_map), label_map)

    funs = tuple(FunDef(f.name, f.params, fix(f.body)) for f in p.funs)
    return Program(funs, fix(p.body))


def parse_and_desugar(src: str) -> Program:
    return check_program(desugar(sp.parse(src)))


# ---------------------------------------------------------------------------
# Program checking.


def check_program(p: Program) -> Program:
    """Validates a core program, restoring binder uniqueness if needed.

    Duplicate binders are alpha-renamed; structural problems (unknown
    callees, arity mismatches, repeated call arguments, free variables,
    duplicate or non-positive labels) raise WellFormednessError.
    """
    p = _unique_binders(p)

    fun_names = [f.name for f in p.funs]
    if len(set(fun_names)) != len(fun_names):
        dup = sorted({n for n in fun_names if fun_names.count(n) > 1})
        raise WellFormednessError(f"duplicate function definitions: {dup}")
    for f in p.funs:
        if f.name in PRIMITIVES:
            raise WellFormednessError(
                f"function {f.name!r} shadows a primitive"
            )

    arities = {f.name: len(f.params) for f in p.funs}

    seen_labels: set[int] = set()

    def check_expr(e: Expr, scope: frozenset[str], where: str) -> None:
        fv = free_vars(e)
        if not fv <= scope:
            missing = sorted(fv - scope)
            raise WellFormednessError(f"unbound variables in {where}: {missing}")
        for sub in subexprs(e):
            if isinstance(sub, LetCall):
                if sub.label <= 0:
                    raise WellFormednessError(
                        f"call label {sub.label} in {where} is not positive"
                    )
                if sub.label in seen_labels:
                    raise WellFormednessError(
                        f"duplicate call label {sub.label} in {where}"
                    )
                seen_labels.add(sub.label)
                if sub.fn in arities:
                    want = arities[sub.fn]
                elif sub.fn in PRIMITIVES:
                    want = PRIMITIVES[sub.fn].arity
                else:
                    raise WellFormednessError(
                        f"call to unknown function {sub.fn!r} in {where}"
                    )
                if len(sub.args) != want:
                    raise WellFormednessError(
                        f"call to {sub.fn!r} in {where} passes "
                        f"{len(sub.args)} arguments, expected {want}"
                    )
                if len(set(sub.args)) != len(sub.args):
                    raise WellFormednessError(
                        f"call to {sub.fn!r} in {where} repeats an argument "
                        "variable; call arguments must be distinct"
                    )
            elif isinstance(sub, Assert):
                if formula_mentions_nu(sub.formula):
                    raise WellFormednessError(
                        f"assert formula in {where} mentions the reserved "
                        "value variable"
                    )

    for f in p.funs:
        if len(set(f.params)) != len(f.params):
            raise WellFormednessError(
                f"function {f.name!r} repeats a parameter name"
            )
        check_expr(f.body, frozenset(f.params), f"function {f.name!r}")
    check_expr(p.body, frozenset(), "the program body")
    return p


def _unique_binders(p: Program) -> Program:
    fresh = FreshNames(all_names(p))
    seen: set[str] = set()
    for f in p.funs:
        seen.update(f.params)

    def uniq(e: Expr) -> Expr:
        if isinstance(e, (LetVar, LetInt, LetMkref, LetDeref, LetCall)):
            e = _with_body(e, uniq(e.body))
            if e.var in seen:
                e = _rename_binder(e, fresh.fresh(e.var))
            else:
                seen.add(e.var)
            return e
        match e:
            case IfZero(c, then, els):
                return IfZero(c, uniq(then), uniq(els))
            case Assign(t, s, body):
                return Assign(t, s, uniq(body))
            case Alias(l, r, body):
                return Alias(l, r, uniq(body))
            case AliasDeref(l, r, body):
                return AliasDeref(l, r, uniq(body))
            case Assert(f, body):
                return Assert(f, uniq(body))
            case Seq(first, rest):
                return Seq(uniq(first), uniq(rest))
            case _:
                return e

    funs = tuple(FunDef(f.name, f.params, uniq(f.body)) for f in p.funs)
    return Program(funs, uniq(p.body))


def _with_body(e: Expr, body: Expr) -> Expr:
    match e:
        case LetVar(v, rhs, _):
            return LetVar(v, rhs, body)
        case LetInt(v, n, _):
            return LetInt(v, n, body)
        case LetMkref(v, rhs, _):
            return LetMkref(v, rhs, body)
        case LetDeref(v, rhs, _):
            return LetDeref(v, rhs, body)
        case LetCall(v, fn, label, args, _):
            return LetCall(v, fn, label, args, body)
    raise TypeError(f"not a let form: {e!r}")


def _rename_binder(e: Expr, new: str) -> Expr:
    body = rename(e.body, e.var, new)
    match e:
        case LetVar(_, rhs, _):
            return LetVar(new, rhs, body)
        case LetInt(_, n, _):
            return LetInt(new, n, body)
        case LetMkref(_, rhs, _):
            return LetMkref(new, rhs, body)
        case LetDeref(_, rhs, _):
            return LetDeref(new, rhs, body)
        case LetCall(_, fn, label, args, _):
            return LetCall(new, fn, label, args, body)
    raise TypeError(f"not a let form: {e!r}")
