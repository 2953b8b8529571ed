"""Simple (unrefined) type inference for core programs.

Every variable is an integer or a (possibly nested) reference. Binder names
are globally unique after checking, so inference assigns one type per name
and one signature per function, by unification. Leaves that end up
unconstrained default to integers. Cyclic (infinite) reference types and
integer/reference clashes are rejected.

The resolved depths drive template construction downstream: a variable of
type `ref^d int` carries `d` ownership slots and one integer refinement at
the innermost position.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Union

from .primitives import PRIMITIVES
from .syntax import (
    Alias, AliasDeref, Assert, Assign, Expr, FunDef, IfZero, LetCall,
    LetDeref, LetInt, LetMkref, LetVar, Program, Seq, Var, formula_vars,
)


class SimpleTypeError(Exception):
    pass


@dataclass(frozen=True, slots=True)
class IntType:
    def __str__(self) -> str:
        return "int"


@dataclass(frozen=True, slots=True)
class RefType:
    inner: SimpleType

    def __str__(self) -> str:
        return f"ref {self.inner}"


SimpleType = Union[IntType, RefType]

INT = IntType()


def depth(t: SimpleType) -> int:
    """Number of reference layers around the integer leaf."""
    d = 0
    while isinstance(t, RefType):
        d += 1
        t = t.inner
    return d


@dataclass(frozen=True, slots=True)
class TypeInfo:
    """Resolved types for every variable and function of a program."""

    var_types: dict[str, SimpleType]
    fun_params: dict[str, tuple[SimpleType, ...]]
    fun_results: dict[str, SimpleType]
    main_result: SimpleType

    def of(self, name: str) -> SimpleType:
        return self.var_types[name]

    def sig(self, fn: str) -> tuple[tuple[SimpleType, ...], SimpleType]:
        return self.fun_params[fn], self.fun_results[fn]


class _Node:
    """A unification variable with union-find structure sharing."""

    __slots__ = ("parent", "kind", "inner", "hint")

    def __init__(self, hint: str) -> None:
        self.parent: _Node | None = None
        self.kind: str | None = None  # None (unknown) | "int" | "ref"
        self.inner: _Node | None = None
        self.hint = hint

    def find(self) -> _Node:
        node = self
        while node.parent is not None:
            node = node.parent
        # Path compression.
        walk = self
        while walk.parent is not None:
            walk.parent, walk = node, walk.parent
        return node


class _Inference:
    def __init__(self, program: Program) -> None:
        self.program = program
        self.vars: dict[str, _Node] = {}
        self.results: dict[str, _Node] = {}

    def var(self, name: str) -> _Node:
        if name not in self.vars:
            self.vars[name] = _Node(name)
        return self.vars[name]

    def fresh(self, hint: str) -> _Node:
        return _Node(hint)

    # -- unification ---------------------------------------------------------

    def unify(self, a: _Node, b: _Node, why: str) -> None:
        a, b = a.find(), b.find()
        if a is b:
            return
        if a.kind is None:
            a.parent = b
            return
        if b.kind is None:
            b.parent = a
            return
        if a.kind != b.kind:
            ta = "an integer" if a.kind == "int" else "a reference"
            tb = "an integer" if b.kind == "int" else "a reference"
            raise SimpleTypeError(
                f"type mismatch at {why}: {a.hint} is {ta} "
                f"but {b.hint} is {tb}"
            )
        inner_a, inner_b = a.inner, b.inner
        b.parent = a
        if a.kind == "ref":
            assert inner_a is not None and inner_b is not None
            self.unify(inner_a, inner_b, why)

    def make_int(self, node: _Node, why: str) -> None:
        node = node.find()
        if node.kind is None:
            node.kind = "int"
            return
        if node.kind != "int":
            raise SimpleTypeError(
                f"type mismatch at {why}: {node.hint} is a reference "
                "but is used as an integer"
            )

    def make_ref(self, node: _Node, why: str) -> _Node:
        """Forces node to be a reference, returning its content node."""
        node = node.find()
        if node.kind is None:
            node.kind = "ref"
            node.inner = self.fresh(f"*{node.hint}")
            return node.inner
        if node.kind != "ref":
            raise SimpleTypeError(
                f"type mismatch at {why}: {node.hint} is an integer "
                "but is used as a reference"
            )
        assert node.inner is not None
        return node.inner

    # -- constraint walk -------------------------------------------------------

    def check_expr(self, e: Expr) -> _Node:
        """Generates constraints for e; returns the node for its result."""
        match e:
            case Var(x):
                return self.var(x)
            case LetVar(v, rhs, body):
                self.unify(self.var(v), self.var(rhs), f"let {v} = {rhs}")
                return self.check_expr(body)
            case LetInt(v, _, body):
                self.make_int(self.var(v), f"let {v}")
                return self.check_expr(body)
            case LetMkref(v, rhs, body):
                content = self.make_ref(self.var(v), f"let {v} = mkref {rhs}")
                self.unify(content, self.var(rhs), f"let {v} = mkref {rhs}")
                return self.check_expr(body)
            case LetDeref(v, rhs, body):
                content = self.make_ref(self.var(rhs), f"let {v} = *{rhs}")
                self.unify(self.var(v), content, f"let {v} = *{rhs}")
                return self.check_expr(body)
            case LetCall(v, fn, _, args, body):
                self.check_call(v, fn, args)
                return self.check_expr(body)
            case IfZero(c, then, els):
                self.make_int(self.var(c), f"ifz {c}")
                rt = self.check_expr(then)
                re_ = self.check_expr(els)
                self.unify(rt, re_, f"branches of ifz {c}")
                return rt
            case Assign(target, source, body):
                content = self.make_ref(self.var(target),
                                        f"{target} := {source}")
                self.unify(content, self.var(source), f"{target} := {source}")
                return self.check_expr(body)
            case Alias(left, right, body):
                why = f"alias({left} = {right})"
                self.make_ref(self.var(left), why)
                self.unify(self.var(left), self.var(right), why)
                return self.check_expr(body)
            case AliasDeref(left, right, body):
                why = f"alias({left} = *{right})"
                self.make_ref(self.var(left), why)
                content = self.make_ref(self.var(right), why)
                self.unify(self.var(left), content, why)
                return self.check_expr(body)
            case Assert(f, body):
                for x in sorted(formula_vars(f)):
                    self.make_int(self.var(x), "assert formula")
                return self.check_expr(body)
            case Seq(first, rest):
                self.check_expr(first)
                return self.check_expr(rest)
        raise TypeError(f"not an expression: {e!r}")

    def check_call(self, v: str, fn: str, args: tuple[str, ...]) -> None:
        where = f"call to {fn}"
        if fn in PRIMITIVES:
            for a in args:
                self.make_int(self.var(a), where)
            self.make_int(self.var(v), where)
            return
        fd = self.program.fun(fn)
        for param, arg in zip(fd.params, args):
            self.unify(self.var(param), self.var(arg), where)
        self.unify(self.var(v), self.results[fn], where)

    # -- resolution -------------------------------------------------------------

    def resolve(self, node: _Node, where: str) -> SimpleType:
        node = node.find()
        seen: set[int] = set()
        return self._resolve(node, seen, where)

    def _resolve(self, node: _Node, seen: set[int], where: str) -> SimpleType:
        node = node.find()
        if node.kind is None or node.kind == "int":
            return INT
        if id(node) in seen:
            raise SimpleTypeError(
                f"cyclic reference type for {where}: a reference cannot "
                "contain itself"
            )
        seen.add(id(node))
        assert node.inner is not None
        inner = self._resolve(node.inner, seen, where)
        seen.discard(id(node))
        return RefType(inner)


def infer_types(program: Program) -> TypeInfo:
    """Infers a simple type for every variable and function signature.

    Expects a checked program: closed, globally unique binders, known
    callees, correct arities.
    """
    inf = _Inference(program)
    for f in program.funs:
        inf.results[f.name] = inf.fresh(f"result of {f.name}")
        for p in f.params:
            inf.var(p)
    for f in program.funs:
        body_result = inf.check_expr(f.body)
        inf.unify(body_result, inf.results[f.name], f"result of {f.name}")
    main_result = inf.check_expr(program.body)

    var_types = {
        name: inf.resolve(node, name) for name, node in inf.vars.items()
    }
    fun_params = {
        f.name: tuple(inf.resolve(inf.var(p), p) for p in f.params)
        for f in program.funs
    }
    fun_results = {
        f.name: inf.resolve(inf.results[f.name], f"result of {f.name}")
        for f in program.funs
    }
    return TypeInfo(
        var_types=var_types,
        fun_params=fun_params,
        fun_results=fun_results,
        main_result=inf.resolve(main_result, "program result"),
    )
