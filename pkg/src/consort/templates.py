"""Program points, scopes, and inference templates.

Every expression node of a checked program gets a numbered program point, in
reading order (function bodies first, in declaration order, then the program
body). Each function additionally gets a synthetic entry point (parameters
only, before its body) and exit point (parameters plus the `$ret`
pseudo-variable holding the result).

At each point, every in-scope variable is described by a template shaped
like its simple type:

- a variable of type `ref^d int` carries one ownership variable per
  reference layer (`own!x!m!point`, layer 0 outermost) and one integer
  refinement predicate at the leaf (`inv!x!d!point`);
- an integer variable carries just the leaf predicate `inv!x!0!point`.

A leaf predicate for `x` abstracts a relation over the leaf value, the call
context (`k` call-site labels, most recent first), and the other in-scope
integer variables in ascending name order. Program identifiers cannot
contain `!`, so the generated symbols never collide with program names.

Templates are keyed by node identity: they describe one specific Program
object, and every later stage must walk that same object.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .simple_types import RefType, SimpleType, TypeInfo, depth
from .syntax import (
    Alias, AliasDeref, Assert, Assign, Expr, IfZero, LetCall, LetDeref,
    LetInt, LetMkref, LetVar, Program, Seq, Var, pp_redex,
)

RET = "$ret"

Point = str


def fun_entry(fn: str) -> Point:
    return f"fb!{fn}"


def fun_exit(fn: str) -> Point:
    return f"fe!{fn}"


@dataclass(slots=True)
class Templates:
    """Point assignment and per-point variable layout for one program."""

    program: Program
    types: TypeInfo
    context_depth: int
    points: list[Point] = field(default_factory=list)
    scopes: dict[Point, tuple[str, ...]] = field(default_factory=dict)
    fun_of: dict[Point, str | None] = field(default_factory=dict)
    node_at: dict[Point, Expr | None] = field(default_factory=dict)
    _point_of: dict[int, Point] = field(default_factory=dict)

    # -- point lookups ---------------------------------------------------------

    def at(self, node: Expr) -> Point:
        try:
            return self._point_of[id(node)]
        except KeyError:
            raise KeyError(
                "expression is not part of the templated program "
                f"(templates are per-object): {pp_redex(node)}"
            ) from None

    # -- per-variable layout -----------------------------------------------------

    def type_of(self, x: str, point: Point) -> SimpleType:
        if x == RET:
            fn = self.fun_of[point]
            assert fn is not None, "program body has no $ret"
            return self.types.fun_results[fn]
        return self.types.of(x)

    def depth_of(self, x: str, point: Point) -> int:
        return depth(self.type_of(x, point))

    def int_scope(self, point: Point) -> tuple[str, ...]:
        """In-scope integer-valued variables at point, ascending by name."""
        return tuple(sorted(
            x for x in self.scopes[point]
            if not isinstance(self.type_of(x, point), RefType)
        ))

    def fv_of(self, x: str, point: Point) -> tuple[str, ...]:
        """Predicate context for x at point: in-scope integers besides x."""
        return tuple(n for n in self.int_scope(point) if n != x)

    def pred_name(self, x: str, point: Point) -> str:
        d = self.depth_of(x, point)
        return f"inv!{x}!{d}!{point}"

    def pred_arity(self, x: str, point: Point) -> int:
        return 1 + self.context_depth + len(self.fv_of(x, point))

    def own_name(self, x: str, layer: int, point: Point) -> str:
        return f"own!{x}!{layer}!{point}"

    def own_layers(self, x: str, point: Point) -> range:
        return range(self.depth_of(x, point))

    # -- enumeration -------------------------------------------------------------

    def predicates(self) -> list[tuple[str, int]]:
        """All (predicate symbol, arity) pairs, in point order."""
        out = []
        for p in self.points:
            for x in self.scopes[p]:
                out.append((self.pred_name(x, p), self.pred_arity(x, p)))
        return out

    def ownership_vars(self) -> list[str]:
        """All ownership variable symbols, in point order."""
        out = []
        for p in self.points:
            for x in self.scopes[p]:
                for m in self.own_layers(x, p):
                    out.append(self.own_name(x, m, p))
        return out


def build_templates(program: Program, types: TypeInfo,
                    context_depth: int) -> Templates:
    """Assigns points and scopes for a checked, typed program."""
    t = Templates(program, types, context_depth)
    counter = 0

    def add_point(point: Point, fn: str | None, node: Expr | None,
                  scope: tuple[str, ...]) -> None:
        t.points.append(point)
        t.fun_of[point] = fn
        t.node_at[point] = node
        t.scopes[point] = scope

    def walk(e: Expr, fn: str | None, scope: tuple[str, ...]) -> None:
        nonlocal counter
        counter += 1
        point = str(counter)
        t._point_of[id(e)] = point
        add_point(point, fn, e, scope)
        match e:
            case Var(_):
                pass
            case LetVar(v, _, body) | LetInt(v, _, body) \
                    | LetMkref(v, _, body) | LetDeref(v, _, body) \
                    | LetCall(v, _, _, _, body):
                walk(body, fn, scope + (v,))
            case IfZero(_, then, els):
                walk(then, fn, scope)
                walk(els, fn, scope)
            case Assign(_, _, body) | Alias(_, _, body) \
                    | AliasDeref(_, _, body) | Assert(_, body):
                walk(body, fn, scope)
            case Seq(first, rest):
                walk(first, fn, scope)
                walk(rest, fn, scope)
            case _:
                raise TypeError(f"not an expression: {e!r}")

    for f in program.funs:
        add_point(fun_entry(f.name), f.name, None, tuple(f.params))
        walk(f.body, f.name, tuple(f.params))
        add_point(fun_exit(f.name), f.name, None, tuple(f.params) + (RET,))
    walk(program.body, None, ())
    return t


def dump_templates(t: Templates) -> str:
    """Renders points, scopes, and templates as stable readable text."""
    lines = []
    lines.append(f"context depth {t.context_depth}")
    for p in t.points:
        node = t.node_at[p]
        if node is None:
            fn = t.fun_of[p]
            kind = "entry of" if p == fun_entry(fn or "") else "exit of"
            lines.append(f"point {p}: {kind} {fn}")
        else:
            where = t.fun_of[p] or "main"
            lines.append(f"point {p} ({where}): {pp_redex(node)}")
        for x in t.scopes[p]:
            ty = t.type_of(x, p)
            parts = [f"  {x} : {ty}"]
            owns = [t.own_name(x, m, p) for m in t.own_layers(x, p)]
            if owns:
                parts.append(f"own [{', '.join(owns)}]")
            fv = t.fv_of(x, p)
            args = ["value"]
            args += [f"ctx{i + 1}" for i in range(t.context_depth)]
            args += list(fv)
            parts.append(f"pred {t.pred_name(x, p)}({', '.join(args)})")
            lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
