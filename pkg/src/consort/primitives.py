"""Built-in integer primitives shared by the interpreter and the verifier.

Every primitive takes integers and returns an integer. Comparisons and the
boolean connectives return 0 for true and 1 for false, matching the
zero-tested conditional: `ifz (x = y) then A else B` runs A when x equals y.

Each entry carries the runtime evaluator and the logical refinement of the
result value (a formula over the value variable and the argument terms) used
when generating clauses.
"""
from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Sequence

from .syntax import (
    NU, FAnd, FCmp, FNot, FOr, Formula, FTrue, TAdd, TInt, TProd, TSub, Term,
)


@dataclass(frozen=True)
class RuntimeEnv:
    rng: random.Random
    nondet_lo: int = -128
    nondet_hi: int = 127


@dataclass(frozen=True)
class Primitive:
    name: str
    arity: int
    run: Callable[[Sequence[int], RuntimeEnv], int]
    refinement: Callable[[Sequence[Term]], Formula]


_ZERO = TInt(0)
_ONE = TInt(1)


def _bool(value: bool) -> int:
    return 0 if value else 1


def _iff(a: Formula, b: Formula) -> Formula:
    return FAnd(FOr(FNot(a), b), FOr(FNot(b), a))


def _zero_one() -> Formula:
    return FOr(FCmp("=", NU, _ZERO), FCmp("=", NU, _ONE))


def _cmp_refinement(op: str) -> Callable[[Sequence[Term]], Formula]:
    def build(args: Sequence[Term]) -> Formula:
        return FAnd(_iff(FCmp("=", NU, _ZERO), FCmp(op, args[0], args[1])),
                    _zero_one())

    return build


def _nondet_run(args: Sequence[int], env: RuntimeEnv) -> int:
    return env.rng.randint(env.nondet_lo, env.nondet_hi)


PRIMITIVES: dict[str, Primitive] = {
    "+": Primitive(
        "+", 2,
        lambda a, env: a[0] + a[1],
        lambda t: FCmp("=", NU, TAdd(t[0], t[1])),
    ),
    "-": Primitive(
        "-", 2,
        lambda a, env: a[0] - a[1],
        lambda t: FCmp("=", NU, TSub(t[0], t[1])),
    ),
    "*": Primitive(
        "*", 2,
        lambda a, env: a[0] * a[1],
        lambda t: FCmp("=", NU, TProd(t[0], t[1])),
    ),
    "=": Primitive("=", 2, lambda a, env: _bool(a[0] == a[1]),
                   _cmp_refinement("=")),
    "!=": Primitive("!=", 2, lambda a, env: _bool(a[0] != a[1]),
                    _cmp_refinement("!=")),
    "<": Primitive("<", 2, lambda a, env: _bool(a[0] < a[1]),
                   _cmp_refinement("<")),
    "<=": Primitive("<=", 2, lambda a, env: _bool(a[0] <= a[1]),
                    _cmp_refinement("<=")),
    ">": Primitive(">", 2, lambda a, env: _bool(a[0] > a[1]),
                   _cmp_refinement(">")),
    ">=": Primitive(">=", 2, lambda a, env: _bool(a[0] >= a[1]),
                    _cmp_refinement(">=")),
    "&&": Primitive(
        "&&", 2,
        lambda a, env: _bool(a[0] == 0 and a[1] == 0),
        lambda t: FAnd(
            _iff(FCmp("=", NU, _ZERO),
                 FAnd(FCmp("=", t[0], _ZERO), FCmp("=", t[1], _ZERO))),
            _zero_one(),
        ),
    ),
    "||": Primitive(
        "||", 2,
        lambda a, env: _bool(a[0] == 0 or a[1] == 0),
        lambda t: FAnd(
            _iff(FCmp("=", NU, _ZERO),
                 FOr(FCmp("=", t[0], _ZERO), FCmp("=", t[1], _ZERO))),
            _zero_one(),
        ),
    ),
    "!": Primitive(
        "!", 1,
        lambda a, env: _bool(a[0] != 0),
        lambda t: FAnd(
            _iff(FCmp("=", NU, _ZERO), FNot(FCmp("=", t[0], _ZERO))),
            _zero_one(),
        ),
    ),
    "nondet": Primitive(
        "nondet", 0,
        _nondet_run,
        lambda t: FTrue(),
    ),
}
