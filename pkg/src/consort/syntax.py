"""Core abstract syntax for the reference language.

The core language is let-normal: every intermediate value is named, call
arguments are variables, and every statement form carries its continuation.
Surface programs (see parser.py) are lowered into this shape by desugar.py.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Union

# ---------------------------------------------------------------------------
# Formula terms: linear integer expressions over program variables, integer
# literals, and the distinguished value variable (nu) that refers to the value
# being refined / asserted about.


@dataclass(frozen=True, slots=True)
class TVar:
    name: str


@dataclass(frozen=True, slots=True)
class TInt:
    value: int


@dataclass(frozen=True, slots=True)
class TNu:
    pass


@dataclass(frozen=True, slots=True)
class TAdd:
    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class TSub:
    left: Term
    right: Term


@dataclass(frozen=True, slots=True)
class TMul:
    """Multiplication by an integer constant; keeps terms linear."""

    factor: int
    term: Term


@dataclass(frozen=True, slots=True)
class TProd:
    """Unrestricted product. Never produced by parsing or desugaring user
    formulas (those stay linear); only the `*` primitive's result refinement
    uses it."""

    left: Term
    right: Term


Term = Union[TVar, TInt, TNu, TAdd, TSub, TMul, TProd]

NU = TNu()

# ---------------------------------------------------------------------------
# Formulas: boolean combinations of linear comparisons.

CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True, slots=True)
class FTrue:
    pass


@dataclass(frozen=True, slots=True)
class FFalse:
    pass


@dataclass(frozen=True, slots=True)
class FCmp:
    op: str
    left: Term
    right: Term

    def __post_init__(self) -> None:
        if self.op not in CMP_OPS:
            raise ValueError(f"unknown comparison operator {self.op!r}")


@dataclass(frozen=True, slots=True)
class FAnd:
    left: Formula
    right: Formula


@dataclass(frozen=True, slots=True)
class FOr:
    left: Formula
    right: Formula


@dataclass(frozen=True, slots=True)
class FNot:
    arg: Formula


Formula = Union[FTrue, FFalse, FCmp, FAnd, FOr, FNot]

TRUE = FTrue()
FALSE = FFalse()


def fand(*fs: Formula) -> Formula:
    """Conjunction that drops trivial operands."""
    acc: Formula | None = None
    for f in fs:
        if isinstance(f, FTrue):
            continue
        acc = f if acc is None else FAnd(acc, f)
    return acc if acc is not None else TRUE


def fimp(lhs: Formula, rhs: Formula) -> Formula:
    return FOr(FNot(lhs), rhs)


def term_vars(t: Term) -> frozenset[str]:
    match t:
        case TVar(name):
            return frozenset((name,))
        case TInt(_) | TNu():
            return frozenset()
        case TAdd(l, r) | TSub(l, r):
            return term_vars(l) | term_vars(r)
        case TMul(_, inner):
            return term_vars(inner)
        case TProd(l, r):
            return term_vars(l) | term_vars(r)
    raise TypeError(f"not a term: {t!r}")


def formula_vars(f: Formula) -> frozenset[str]:
    match f:
        case FTrue() | FFalse():
            return frozenset()
        case FCmp(_, l, r):
            return term_vars(l) | term_vars(r)
        case FAnd(l, r) | FOr(l, r):
            return formula_vars(l) | formula_vars(r)
        case FNot(g):
            return formula_vars(g)
    raise TypeError(f"not a formula: {f!r}")


def formula_mentions_nu(f: Formula) -> bool:
    match f:
        case FTrue() | FFalse():
            return False
        case FCmp(_, l, r):
            return _term_mentions_nu(l) or _term_mentions_nu(r)
        case FAnd(l, r) | FOr(l, r):
            return formula_mentions_nu(l) or formula_mentions_nu(r)
        case FNot(g):
            return formula_mentions_nu(g)
    raise TypeError(f"not a formula: {f!r}")


def _term_mentions_nu(t: Term) -> bool:
    match t:
        case TNu():
            return True
        case TVar(_) | TInt(_):
            return False
        case TAdd(l, r) | TSub(l, r):
            return _term_mentions_nu(l) or _term_mentions_nu(r)
        case TMul(_, inner):
            return _term_mentions_nu(inner)
        case TProd(l, r):
            return _term_mentions_nu(l) or _term_mentions_nu(r)
    raise TypeError(f"not a term: {t!r}")


def rename_term(t: Term, old: str, new: Term) -> Term:
    """Substitute a term for a variable inside a term."""
    match t:
        case TVar(name):
            return new if name == old else t
        case TInt(_) | TNu():
            return t
        case TAdd(l, r):
            return TAdd(rename_term(l, old, new), rename_term(r, old, new))
        case TSub(l, r):
            return TSub(rename_term(l, old, new), rename_term(r, old, new))
        case TMul(k, inner):
            return TMul(k, rename_term(inner, old, new))
        case TProd(l, r):
            return TProd(rename_term(l, old, new), rename_term(r, old, new))
    raise TypeError(f"not a term: {t!r}")


def rename_formula(f: Formula, old: str, new: Term) -> Formula:
    match f:
        case FTrue() | FFalse():
            return f
        case FCmp(op, l, r):
            return FCmp(op, rename_term(l, old, new), rename_term(r, old, new))
        case FAnd(l, r):
            return FAnd(rename_formula(l, old, new), rename_formula(r, old, new))
        case FOr(l, r):
            return FOr(rename_formula(l, old, new), rename_formula(r, old, new))
        case FNot(g):
            return FNot(rename_formula(g, old, new))
    raise TypeError(f"not a formula: {f!r}")


# ---------------------------------------------------------------------------
# Core expressions.


@dataclass(frozen=True, slots=True)
class Var:
    name: str


@dataclass(frozen=True, slots=True)
class LetVar:
    var: str
    rhs: str
    body: Expr


@dataclass(frozen=True, slots=True)
class LetInt:
    var: str
    value: int
    body: Expr


@dataclass(frozen=True, slots=True)
class LetMkref:
    var: str
    rhs: str
    body: Expr


@dataclass(frozen=True, slots=True)
class LetDeref:
    var: str
    rhs: str
    body: Expr


@dataclass(frozen=True, slots=True)
class LetCall:
    var: str
    fn: str
    label: int
    args: tuple[str, ...]
    body: Expr


@dataclass(frozen=True, slots=True)
class IfZero:
    cond: str
    then: Expr
    els: Expr


@dataclass(frozen=True, slots=True)
class Assign:
    """`target := source; body` (source is a variable)."""

    target: str
    source: str
    body: Expr


@dataclass(frozen=True, slots=True)
class Alias:
    """`alias(left = right); body`."""

    left: str
    right: str
    body: Expr


@dataclass(frozen=True, slots=True)
class AliasDeref:
    """`alias(left = *right); body`."""

    left: str
    right: str
    body: Expr


@dataclass(frozen=True, slots=True)
class Assert:
    formula: Formula
    body: Expr


@dataclass(frozen=True, slots=True)
class Seq:
    first: Expr
    rest: Expr


Expr = Union[
    Var,
    LetVar,
    LetInt,
    LetMkref,
    LetDeref,
    LetCall,
    IfZero,
    Assign,
    Alias,
    AliasDeref,
    Assert,
    Seq,
]

LET_FORMS = (LetVar, LetInt, LetMkref, LetDeref, LetCall)


@dataclass(frozen=True, slots=True)
class FunDef:
    name: str
    params: tuple[str, ...]
    body: Expr


@dataclass(frozen=True, slots=True)
class Program:
    funs: tuple[FunDef, ...]
    body: Expr

    def fun(self, name: str) -> FunDef:
        for f in self.funs:
            if f.name == name:
                return f
        raise KeyError(name)


# ---------------------------------------------------------------------------
# Traversals.


def subexprs(e: Expr) -> Iterator[Expr]:
    """Yields e and every expression nested inside it, preorder."""
    yield e
    match e:
        case Var(_):
            pass
        case LetVar(_, _, body) | LetInt(_, _, body) | LetMkref(_, _, body) \
                | LetDeref(_, _, body) | Assign(_, _, body) | Alias(_, _, body) \
                | AliasDeref(_, _, body) | Assert(_, body):
            yield from subexprs(body)
        case LetCall(_, _, _, _, body):
            yield from subexprs(body)
        case IfZero(_, then, els):
            yield from subexprs(then)
            yield from subexprs(els)
        case Seq(first, rest):
            yield from subexprs(first)
            yield from subexprs(rest)


def program_exprs(p: Program) -> Iterator[Expr]:
    for f in p.funs:
        yield from subexprs(f.body)
    yield from subexprs(p.body)


def binders(e: Expr) -> Iterator[str]:
    for sub in subexprs(e):
        if isinstance(sub, LET_FORMS):
            yield sub.var


def labels(e: Expr) -> Iterator[int]:
    for sub in subexprs(e):
        if isinstance(sub, LetCall):
            yield sub.label


def free_vars(e: Expr) -> frozenset[str]:
    match e:
        case Var(x):
            return frozenset((x,))
        case LetVar(v, rhs, body) | LetMkref(v, rhs, body) | LetDeref(v, rhs, body):
            return frozenset((rhs,)) | (free_vars(body) - {v})
        case LetInt(v, _, body):
            return free_vars(body) - {v}
        case LetCall(v, _, _, args, body):
            return frozenset(args) | (free_vars(body) - {v})
        case IfZero(c, then, els):
            return frozenset((c,)) | free_vars(then) | free_vars(els)
        case Assign(t, s, body):
            return frozenset((t, s)) | free_vars(body)
        case Alias(l, r, body) | AliasDeref(l, r, body):
            return frozenset((l, r)) | free_vars(body)
        case Assert(f, body):
            return formula_vars(f) | free_vars(body)
        case Seq(first, rest):
            return free_vars(first) | free_vars(rest)
    raise TypeError(f"not an expression: {e!r}")


def all_names(p: Program) -> frozenset[str]:
    """Every identifier appearing anywhere: binders, params, free uses."""
    names: set[str] = set()
    for f in p.funs:
        names.update(f.params)
        names.update(_expr_names(f.body))
    names.update(_expr_names(p.body))
    return frozenset(names)


def _expr_names(e: Expr) -> set[str]:
    names: set[str] = set()
    for sub in subexprs(e):
        match sub:
            case Var(x):
                names.add(x)
            case LetVar(v, rhs, _) | LetMkref(v, rhs, _) | LetDeref(v, rhs, _):
                names.add(v)
                names.add(rhs)
            case LetInt(v, _, _):
                names.add(v)
            case LetCall(v, _, _, args, _):
                names.add(v)
                names.update(args)
            case IfZero(c, _, _):
                names.add(c)
            case Assign(t, s, _):
                names.update((t, s))
            case Alias(l, r, _) | AliasDeref(l, r, _):
                names.update((l, r))
            case Assert(f, _):
                names.update(formula_vars(f))
    return names


def count_alias_annotations(p: Program) -> int:
    return sum(
        1 for e in program_exprs(p) if isinstance(e, (Alias, AliasDeref))
    )


# ---------------------------------------------------------------------------
# Variable renaming (capture avoiding).


def _occurs(e: Expr, x: str) -> bool:
    return x in free_vars(e)


def rename(e: Expr, old: str, new: str) -> Expr:
    """Renames free occurrences of `old` to `new` in e.

    Binding occurrences shadow: renaming stops below a binder for `old`.
    Raises ValueError if `new` would be captured by an inner binder.
    """
    if old == new:
        return e

    def sub(name: str) -> str:
        return new if name == old else name

    match e:
        case Var(x):
            return Var(sub(x))
        case LetVar(v, rhs, body):
            return LetVar(v, sub(rhs), _rename_under(body, v, old, new))
        case LetInt(v, n, body):
            return LetInt(v, n, _rename_under(body, v, old, new))
        case LetMkref(v, rhs, body):
            return LetMkref(v, sub(rhs), _rename_under(body, v, old, new))
        case LetDeref(v, rhs, body):
            return LetDeref(v, sub(rhs), _rename_under(body, v, old, new))
        case LetCall(v, fn, label, args, body):
            return LetCall(
                v, fn, label, tuple(sub(a) for a in args),
                _rename_under(body, v, old, new),
            )
        case IfZero(c, then, els):
            return IfZero(sub(c), rename(then, old, new), rename(els, old, new))
        case Assign(t, s, body):
            return Assign(sub(t), sub(s), rename(body, old, new))
        case Alias(l, r, body):
            return Alias(sub(l), sub(r), rename(body, old, new))
        case AliasDeref(l, r, body):
            return AliasDeref(sub(l), sub(r), rename(body, old, new))
        case Assert(f, body):
            return Assert(rename_formula(f, old, TVar(new)), rename(body, old, new))
        case Seq(first, rest):
            return Seq(rename(first, old, new), rename(rest, old, new))
    raise TypeError(f"not an expression: {e!r}")


def _rename_under(body: Expr, binder: str, old: str, new: str) -> Expr:
    if binder == old:
        return body  # shadowed: free occurrences below refer to the binder
    if binder == new and _occurs(body, old):
        raise ValueError(
            f"renaming {old!r} to {new!r} would be captured by binder {new!r}"
        )
    return rename(body, old, new)


# ---------------------------------------------------------------------------
# Bulk simultaneous substitution. Unlike `rename`, these replace every
# occurrence (binding and use alike) in one pass. They are only safe when the
# mapping is injective and no target collides with a name left unmapped, as is
# the case for globally unique machine-generated names.


def substitute_names(e: Expr, mapping: dict[str, str]) -> Expr:
    def sub(name: str) -> str:
        return mapping.get(name, name)

    match e:
        case Var(x):
            return Var(sub(x))
        case LetVar(v, rhs, body):
            return LetVar(sub(v), sub(rhs), substitute_names(body, mapping))
        case LetInt(v, n, body):
            return LetInt(sub(v), n, substitute_names(body, mapping))
        case LetMkref(v, rhs, body):
            return LetMkref(sub(v), sub(rhs), substitute_names(body, mapping))
        case LetDeref(v, rhs, body):
            return LetDeref(sub(v), sub(rhs), substitute_names(body, mapping))
        case LetCall(v, fn, label, args, body):
            return LetCall(
                sub(v), fn, label, tuple(sub(a) for a in args),
                substitute_names(body, mapping),
            )
        case IfZero(c, then, els):
            return IfZero(
                sub(c),
                substitute_names(then, mapping),
                substitute_names(els, mapping),
            )
        case Assign(t, s, body):
            return Assign(sub(t), sub(s), substitute_names(body, mapping))
        case Alias(l, r, body):
            return Alias(sub(l), sub(r), substitute_names(body, mapping))
        case AliasDeref(l, r, body):
            return AliasDeref(sub(l), sub(r), substitute_names(body, mapping))
        case Assert(f, body):
            return Assert(
                substitute_formula_names(f, mapping),
                substitute_names(body, mapping),
            )
        case Seq(first, rest):
            return Seq(
                substitute_names(first, mapping),
                substitute_names(rest, mapping),
            )
    raise TypeError(f"not an expression: {e!r}")


def substitute_term_names(t: Term, mapping: dict[str, str]) -> Term:
    match t:
        case TVar(name):
            return TVar(mapping.get(name, name))
        case TInt(_) | TNu():
            return t
        case TAdd(l, r):
            return TAdd(
                substitute_term_names(l, mapping),
                substitute_term_names(r, mapping),
            )
        case TSub(l, r):
            return TSub(
                substitute_term_names(l, mapping),
                substitute_term_names(r, mapping),
            )
        case TMul(k, inner):
            return TMul(k, substitute_term_names(inner, mapping))
        case TProd(l, r):
            return TProd(
                substitute_term_names(l, mapping),
                substitute_term_names(r, mapping),
            )
    raise TypeError(f"not a term: {t!r}")


def substitute_formula_names(f: Formula, mapping: dict[str, str]) -> Formula:
    match f:
        case FTrue() | FFalse():
            return f
        case FCmp(op, l, r):
            return FCmp(
                op,
                substitute_term_names(l, mapping),
                substitute_term_names(r, mapping),
            )
        case FAnd(l, r):
            return FAnd(
                substitute_formula_names(l, mapping),
                substitute_formula_names(r, mapping),
            )
        case FOr(l, r):
            return FOr(
                substitute_formula_names(l, mapping),
                substitute_formula_names(r, mapping),
            )
        case FNot(g):
            return FNot(substitute_formula_names(g, mapping))
    raise TypeError(f"not a formula: {f!r}")


def substitute_labels(e: Expr, mapping: dict[int, int]) -> Expr:
    match e:
        case LetCall(v, fn, label, args, body):
            return LetCall(
                v, fn, mapping.get(label, label), args,
                substitute_labels(body, mapping),
            )
        case Var(_):
            return e
        case LetVar(v, rhs, body):
            return LetVar(v, rhs, substitute_labels(body, mapping))
        case LetInt(v, n, body):
            return LetInt(v, n, substitute_labels(body, mapping))
        case LetMkref(v, rhs, body):
            return LetMkref(v, rhs, substitute_labels(body, mapping))
        case LetDeref(v, rhs, body):
            return LetDeref(v, rhs, substitute_labels(body, mapping))
        case IfZero(c, then, els):
            return IfZero(
                c, substitute_labels(then, mapping),
                substitute_labels(els, mapping),
            )
        case Assign(t, s, body):
            return Assign(t, s, substitute_labels(body, mapping))
        case Alias(l, r, body):
            return Alias(l, r, substitute_labels(body, mapping))
        case AliasDeref(l, r, body):
            return AliasDeref(l, r, substitute_labels(body, mapping))
        case Assert(f, body):
            return Assert(f, substitute_labels(body, mapping))
        case Seq(first, rest):
            return Seq(
                substitute_labels(first, mapping),
                substitute_labels(rest, mapping),
            )
    raise TypeError(f"not an expression: {e!r}")


# ---------------------------------------------------------------------------
# Pretty-printing. The output re-parses to the same core program (labels are
# printed explicitly) and is used by --trace and the dump commands.


def pp_term(t: Term) -> str:
    match t:
        case TVar(name):
            return name
        case TInt(v):
            return str(v)
        case TNu():
            return "nu"
        case TAdd(l, r):
            return f"{pp_term(l)} + {_pp_term_tight(r)}"
        case TSub(l, r):
            return f"{pp_term(l)} - {_pp_term_tight(r)}"
        case TMul(k, inner):
            return f"{k} * {_pp_term_tight(inner)}"
        case TProd(l, r):
            return f"{_pp_term_tight(l)} * {_pp_term_tight(r)}"
    raise TypeError(f"not a term: {t!r}")


def _pp_term_tight(t: Term) -> str:
    if isinstance(t, (TAdd, TSub)):
        return f"({pp_term(t)})"
    return pp_term(t)


def pp_formula(f: Formula) -> str:
    match f:
        case FTrue():
            return "true"
        case FFalse():
            return "false"
        case FCmp(op, l, r):
            return f"{pp_term(l)} {op} {pp_term(r)}"
        case FAnd(l, r):
            return f"{_pp_formula_tight(l)} && {_pp_formula_tight(r)}"
        case FOr(l, r):
            return f"{_pp_formula_tight(l)} || {_pp_formula_tight(r)}"
        case FNot(g):
            return f"!{_pp_formula_tight(g)}"
    raise TypeError(f"not a formula: {f!r}")


def _pp_formula_tight(f: Formula) -> str:
    if isinstance(f, (FTrue, FFalse, FCmp)):
        if isinstance(f, FCmp):
            return f"({pp_formula(f)})"
        return pp_formula(f)
    return f"({pp_formula(f)})"


def pp_expr(e: Expr, indent: int = 0) -> str:
    pad = "  " * indent
    match e:
        case Var(x):
            return f"{pad}{x}"
        case LetVar(v, rhs, body):
            return f"{pad}let {v} = {rhs} in\n{pp_expr(body, indent)}"
        case LetInt(v, n, body):
            return f"{pad}let {v} = {n} in\n{pp_expr(body, indent)}"
        case LetMkref(v, rhs, body):
            return f"{pad}let {v} = mkref {rhs} in\n{pp_expr(body, indent)}"
        case LetDeref(v, rhs, body):
            return f"{pad}let {v} = *{rhs} in\n{pp_expr(body, indent)}"
        case LetCall(v, fn, label, args, body):
            call = f"{fn}^{label}({', '.join(args)})"
            return f"{pad}let {v} = {call} in\n{pp_expr(body, indent)}"
        case IfZero(c, then, els):
            return (
                f"{pad}ifz {c} then {{\n{pp_expr(then, indent + 1)}\n{pad}}} else {{\n"
                f"{pp_expr(els, indent + 1)}\n{pad}}}"
            )
        case Assign(t, s, body):
            return f"{pad}{t} := {s};\n{pp_expr(body, indent)}"
        case Alias(l, r, body):
            return f"{pad}alias({l} = {r});\n{pp_expr(body, indent)}"
        case AliasDeref(l, r, body):
            return f"{pad}alias({l} = *{r});\n{pp_expr(body, indent)}"
        case Assert(f, body):
            return f"{pad}assert({pp_formula(f)});\n{pp_expr(body, indent)}"
        case Seq(first, rest):
            if isinstance(first, Var):
                return f"{pad}{first.name};\n{pp_expr(rest, indent)}"
            return (
                f"{pad}{{\n{pp_expr(first, indent + 1)}\n{pad}}};\n"
                f"{pp_expr(rest, indent)}"
            )
    raise TypeError(f"not an expression: {e!r}")


def pp_redex(e: Expr) -> str:
    """One-line rendering of an expression's head form, continuation elided."""
    match e:
        case Var(x):
            return x
        case LetVar(v, rhs, _):
            return f"let {v} = {rhs} in ..."
        case LetInt(v, n, _):
            return f"let {v} = {n} in ..."
        case LetMkref(v, rhs, _):
            return f"let {v} = mkref {rhs} in ..."
        case LetDeref(v, rhs, _):
            return f"let {v} = *{rhs} in ..."
        case LetCall(v, fn, label, args, _):
            return f"let {v} = {fn}^{label}({', '.join(args)}) in ..."
        case IfZero(c, _, _):
            return f"ifz {c} then ... else ..."
        case Assign(t, s, _):
            return f"{t} := {s}; ..."
        case Alias(l, r, _):
            return f"alias({l} = {r}); ..."
        case AliasDeref(l, r, _):
            return f"alias({l} = *{r}); ..."
        case Assert(f, _):
            return f"assert({pp_formula(f)}); ..."
        case Seq(first, _):
            return f"{pp_redex(first)}; ..."
    raise TypeError(f"not an expression: {e!r}")


def pp_program(p: Program) -> str:
    parts = []
    for f in p.funs:
        parts.append(f"{f.name}({', '.join(f.params)}) {{\n{pp_expr(f.body, 1)}\n}}")
    parts.append(pp_expr(p.body))
    return "\n".join(parts) + "\n"
