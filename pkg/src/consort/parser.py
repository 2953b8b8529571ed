"""Lexer and parser for surface programs (.imp files).

The surface language is freer than the core syntax: operator expressions may
nest, call arguments and asserted formulas may contain arbitrary operands,
conditionals test arbitrary expressions, and trailing statements may omit
their continuation. desugar.py lowers surface trees into core syntax.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

KEYWORDS = {
    "let", "in", "mkref", "ifz", "if", "then", "else", "alias", "assert",
    "true", "false",
}

BINOPS = {"+", "-", "*", "=", "!=", "<", "<=", ">", ">=", "&&", "||"}

# Operator-named primitives that may appear as labeled callees (`+^2(a, b)`),
# the form the pretty-printer uses for lowered primitive applications.
_OPERATOR_CALLEES = BINOPS | {"!"}

# Binding powers; operands bind tighter with larger numbers.
BP_MKREF = 1
BP_OR = 2
BP_AND = 3
BP_NOT = 4
BP_CMP = 5
BP_ADD = 6
BP_MUL = 7
BP_NEG = 8
BP_DEREF = 9

INFIX_BP = {
    "||": BP_OR,
    "&&": BP_AND,
    "=": BP_CMP,
    "!=": BP_CMP,
    "<": BP_CMP,
    "<=": BP_CMP,
    ">": BP_CMP,
    ">=": BP_CMP,
    "+": BP_ADD,
    "-": BP_ADD,
    "*": BP_MUL,
}


class ParseError(Exception):
    def __init__(self, message: str, line: int, col: int) -> None:
        super().__init__(f"{line}:{col}: {message}")
        self.message = message
        self.line = line
        self.col = col


# ---------------------------------------------------------------------------
# Surface AST.


@dataclass(frozen=True)
class SInt:
    value: int


@dataclass(frozen=True)
class SVar:
    name: str


@dataclass(frozen=True)
class SBool:
    value: bool


@dataclass(frozen=True)
class SNondet:
    pass


@dataclass(frozen=True)
class SDeref:
    arg: SurfaceExpr


@dataclass(frozen=True)
class SMkref:
    arg: SurfaceExpr


@dataclass(frozen=True)
class SCall:
    fn: str
    label: Optional[int]
    args: tuple[SurfaceExpr, ...]


@dataclass(frozen=True)
class SBinop:
    op: str
    left: SurfaceExpr
    right: SurfaceExpr


@dataclass(frozen=True)
class SUnop:
    op: str
    arg: SurfaceExpr


@dataclass(frozen=True)
class SLet:
    var: str
    rhs: SurfaceExpr
    body: SurfaceExpr


@dataclass(frozen=True)
class SIf:
    cond: SurfaceExpr
    then: SurfaceExpr
    els: SurfaceExpr


@dataclass(frozen=True)
class SAssign:
    target: str
    value: SurfaceExpr
    body: Optional[SurfaceExpr]


@dataclass(frozen=True)
class SAlias:
    left: str
    deref: bool
    right: str
    body: Optional[SurfaceExpr]


@dataclass(frozen=True)
class SAssert:
    cond: SurfaceExpr
    body: Optional[SurfaceExpr]


@dataclass(frozen=True)
class SSeq:
    first: SurfaceExpr
    rest: SurfaceExpr


SurfaceExpr = Union[
    SInt, SVar, SBool, SNondet, SDeref, SMkref, SCall, SBinop, SUnop,
    SLet, SIf, SAssign, SAlias, SAssert, SSeq,
]


@dataclass(frozen=True)
class SFunDef:
    name: str
    params: tuple[str, ...]
    body: SurfaceExpr


@dataclass(frozen=True)
class SurfaceProgram:
    funs: tuple[SFunDef, ...]
    body: SurfaceExpr


# ---------------------------------------------------------------------------
# Lexer.


@dataclass(frozen=True)
class Token:
    kind: str  # "int" | "ident" | "kw" | "op" | "nondet" | "eof"
    text: str
    line: int
    col: int


_TWO_CHAR_OPS = (":=", "!=", "<=", ">=", "&&", "||")
_ONE_CHAR_OPS = "=<>+-*!(){};,^"


def tokenize(src: str) -> list[Token]:
    toks: list[Token] = []
    i = 0
    line = 1
    col = 1
    n = len(src)

    def push(kind: str, text: str) -> None:
        toks.append(Token(kind, text, line, col))

    while i < n:
        c = src[i]
        if c == "\n":
            i += 1
            line += 1
            col = 1
            continue
        if c in " \t\r":
            i += 1
            col += 1
            continue
        if src.startswith("//", i):
            while i < n and src[i] != "\n":
                i += 1
            continue
        if c == "⋆":  # the nondet star
            push("nondet", c)
            i += 1
            col += 1
            continue
        if c.isdigit():
            j = i
            while j < n and src[j].isdigit():
                j += 1
            push("int", src[i:j])
            col += j - i
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (src[j].isalnum() or src[j] in "_$"):
                j += 1
            text = src[i:j]
            if text == "_":
                push("nondet", text)
            elif text in KEYWORDS:
                push("kw", text)
            else:
                push("ident", text)
            col += j - i
            i = j
            continue
        two = src[i:i + 2]
        if two in _TWO_CHAR_OPS:
            push("op", two)
            i += 2
            col += 2
            continue
        if c in _ONE_CHAR_OPS:
            push("op", c)
            i += 1
            col += 1
            continue
        raise ParseError(f"unexpected character {c!r}", line, col)
    toks.append(Token("eof", "", line, col))
    return toks


# ---------------------------------------------------------------------------
# Parser.


@dataclass
class _Parser:
    toks: list[Token]
    pos: int = 0

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.peek()
        self.pos += 1
        return t

    def at_op(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "op" and t.text == text

    def at_kw(self, text: str) -> bool:
        t = self.peek()
        return t.kind == "kw" and t.text == text

    def expect_op(self, text: str) -> Token:
        if not self.at_op(text):
            t = self.peek()
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        return self.next()

    def expect_kw(self, text: str) -> Token:
        if not self.at_kw(text):
            t = self.peek()
            raise ParseError(f"expected {text!r}, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        return self.next()

    def expect_ident(self) -> str:
        t = self.peek()
        if t.kind != "ident":
            raise ParseError(f"expected identifier, found {t.text or 'end of input'!r}",
                             t.line, t.col)
        self.next()
        return t.text

    # -- operands (value/formula expressions) -------------------------------

    def parse_operand(self, min_bp: int = 0) -> SurfaceExpr:
        lhs = self._parse_prefix()
        while True:
            t = self.peek()
            if t.kind != "op" or t.text not in INFIX_BP:
                break
            bp = INFIX_BP[t.text]
            if bp <= min_bp:
                break
            self.next()
            rhs = self.parse_operand(bp)
            lhs = SBinop(t.text, lhs, rhs)
        return lhs

    def _parse_prefix(self) -> SurfaceExpr:
        t = self.peek()
        if t.kind == "int":
            self.next()
            return SInt(int(t.text))
        if t.kind == "nondet":
            self.next()
            return SNondet()
        if t.kind == "kw" and t.text in ("true", "false"):
            self.next()
            return SBool(t.text == "true")
        if t.kind == "kw" and t.text == "mkref":
            self.next()
            return SMkref(self.parse_operand(BP_MKREF))
        if t.kind == "ident":
            self.next()
            label: Optional[int] = None
            if self.at_op("^"):
                self.next()
                label = self._parse_label()
            if self.at_op("(") or label is not None:
                return SCall(t.text, label, self._parse_call_args())
            return SVar(t.text)
        if t.kind == "op":
            if t.text in _OPERATOR_CALLEES and self.peek(1).kind == "op" \
                    and self.peek(1).text == "^":
                # A labeled call whose callee is a primitive operator, as
                # printed for lowered programs: `+^2(a, b)`.
                self.next()
                self.next()
                label = self._parse_label()
                return SCall(t.text, label, self._parse_call_args())
            if t.text == "(":
                self.next()
                inner = self.parse_operand(0)
                self.expect_op(")")
                return inner
            if t.text == "*":
                self.next()
                return SDeref(self.parse_operand(BP_DEREF))
            if t.text == "-":
                self.next()
                arg = self.parse_operand(BP_NEG)
                if isinstance(arg, SInt):
                    return SInt(-arg.value)
                return SUnop("-", arg)
            if t.text == "!":
                self.next()
                return SUnop("!", self.parse_operand(BP_NOT))
        raise ParseError(
            f"expected an expression, found {t.text or 'end of input'!r}",
            t.line, t.col,
        )

    def _parse_label(self) -> int:
        lab = self.peek()
        if lab.kind != "int":
            raise ParseError("expected integer label after '^'",
                             lab.line, lab.col)
        self.next()
        return int(lab.text)

    def _parse_call_args(self) -> tuple[SurfaceExpr, ...]:
        self.expect_op("(")
        args: list[SurfaceExpr] = []
        if not self.at_op(")"):
            args.append(self.parse_operand(0))
            while self.at_op(","):
                self.next()
                args.append(self.parse_operand(0))
        self.expect_op(")")
        return tuple(args)

    # -- statements/expressions ---------------------------------------------

    def _opt_continuation(self) -> Optional[SurfaceExpr]:
        if self.at_op(";"):
            self.next()
            return self.parse_expr()
        return None

    def parse_expr(self) -> SurfaceExpr:
        if self.at_kw("let"):
            self.next()
            var = self.expect_ident()
            self.expect_op("=")
            rhs = self.parse_operand(0)
            self.expect_kw("in")
            body = self.parse_expr()
            return SLet(var, rhs, body)
        if self.at_kw("ifz") or self.at_kw("if"):
            self.next()
            cond = self.parse_operand(0)
            self.expect_kw("then")
            then = self._parse_branch()
            self.expect_kw("else")
            els = self._parse_branch()
            ife = SIf(cond, then, els)
            rest = self._opt_continuation()
            return SSeq(ife, rest) if rest is not None else ife
        if self.at_kw("alias"):
            self.next()
            self.expect_op("(")
            left = self.expect_ident()
            self.expect_op("=")
            deref = False
            if self.at_op("*"):
                self.next()
                deref = True
            right = self.expect_ident()
            self.expect_op(")")
            return SAlias(left, deref, right, self._opt_continuation())
        if self.at_kw("assert"):
            self.next()
            self.expect_op("(")
            cond = self.parse_operand(0)
            self.expect_op(")")
            return SAssert(cond, self._opt_continuation())
        if self.at_op("{"):
            self.next()
            inner = self.parse_expr()
            self.expect_op("}")
            rest = self._opt_continuation()
            return SSeq(inner, rest) if rest is not None else inner
        if self.peek().kind == "ident" and self.peek(1).kind == "op" \
                and self.peek(1).text == ":=":
            target = self.expect_ident()
            self.expect_op(":=")
            value = self.parse_operand(0)
            return SAssign(target, value, self._opt_continuation())
        e = self.parse_operand(0)
        rest = self._opt_continuation()
        return SSeq(e, rest) if rest is not None else e

    def _parse_branch(self) -> SurfaceExpr:
        if self.at_op("{"):
            self.next()
            inner = self.parse_expr()
            self.expect_op("}")
            return inner
        return self.parse_expr()

    # -- programs ------------------------------------------------------------

    def _try_fundef(self) -> Optional[SFunDef]:
        start = self.pos
        if self.peek().kind != "ident":
            return None
        name = self.peek().text
        if not (self.peek(1).kind == "op" and self.peek(1).text == "("):
            return None
        self.pos += 2
        params: list[str] = []
        ok = True
        if self.peek().kind == "ident":
            params.append(self.next().text)
            while self.at_op(","):
                self.next()
                if self.peek().kind != "ident":
                    ok = False
                    break
                params.append(self.next().text)
        if ok and self.at_op(")") and self.peek(1).kind == "op" \
                and self.peek(1).text == "{":
            self.next()  # )
            self.next()  # {
            body = self.parse_expr()
            self.expect_op("}")
            return SFunDef(name, tuple(params), body)
        self.pos = start
        return None

    def parse_program(self) -> SurfaceProgram:
        funs: list[SFunDef] = []
        while True:
            f = self._try_fundef()
            if f is None:
                break
            funs.append(f)
        body = self.parse_expr()
        t = self.peek()
        if t.kind != "eof":
            raise ParseError(f"unexpected trailing input {t.text!r}", t.line, t.col)
        return SurfaceProgram(tuple(funs), body)


def parse(src: str) -> SurfaceProgram:
    """Parses surface text into a surface tree. Raises ParseError."""
    return _Parser(tokenize(src)).parse_program()
