"""Lexer, parser, and typed AST for the analyzed C subset.

The subset covers what the rest of the pipeline needs to see: integer
declarations and assignments over ``+ - * /``, comparisons and boolean
connectives, ``if``/``else``, ``while`` and ``for``, function definitions and
calls, struct definitions with nested member access, integer and string
literals, and the five limits macros (lexed as dedicated tokens).  Pointers are
parsed; dereferences are modeled downstream as fresh symbolic integers, and
writes through pointers update no named variable.  Preprocessor lines are
skipped with a note-level diagnostic.

Every expression node is annotated with exactly one integer kind.  Arithmetic
itself is modeled downstream over unbounded integers, so kinds matter for two
things only: the value range of fresh symbolic inputs and the width/signedness
bookkeeping of declarations.  String literals annotate as pointer-width
``int64`` and never enter constraints.

Uninitialized locals read as 0 in both the symbolic and the concrete
semantics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, fields
from typing import Iterator, Optional, Union


# ---------------------------------------------------------------------------
# Integer kinds


@dataclass(frozen=True)
class IntKind:
    """Width and signedness of one integer type in the subset."""

    name: str
    width: int
    signed: bool

    @property
    def min_value(self) -> int:
        return -(1 << (self.width - 1)) if self.signed else 0

    @property
    def max_value(self) -> int:
        return (1 << (self.width - 1)) - 1 if self.signed else (1 << self.width) - 1


KINDS: dict[str, IntKind] = {
    "char": IntKind("char", 8, True),
    "short": IntKind("short", 16, True),
    "int": IntKind("int", 32, True),
    "unsigned int": IntKind("unsigned int", 32, False),
    "int64": IntKind("int64", 64, True),
}

# Limits macros are lexed as dedicated tokens; values may be overridden by a
# limits file at analysis time, these are the compiler defaults.
DEFAULT_MACRO_VALUES: dict[str, int] = {
    "CHAR_MAX": 127,
    "SHRT_MAX": 32767,
    "INT_MAX": 2147483647,
    "UINT_MAX": 4294967295,
    "LLONG_MAX": 9223372036854775807,
}

MACRO_KINDS: dict[str, str] = {
    "CHAR_MAX": "char",
    "SHRT_MAX": "short",
    "INT_MAX": "int",
    "UINT_MAX": "unsigned int",
    "LLONG_MAX": "int64",
}

# Return kinds assumed for calls with no definition in the file.  Anything not
# listed falls back to int.
EXTERNAL_RETURN_KINDS: dict[str, str] = {
    "RAND32": "int",
    "RAND64": "int64",
    "rand": "int",
    "fscanf": "int",
    "memcpy": "int64",
    "deepNestedStructVar": "unsigned int",
}


# ---------------------------------------------------------------------------
# Spans and diagnostics


@dataclass(frozen=True)
class Span:
    file: str
    start_line: int
    start_col: int
    end_line: int
    end_col: int

    def contains(self, other: "Span") -> bool:
        if (other.start_line, other.start_col) < (self.start_line, self.start_col):
            return False
        return (other.end_line, other.end_col) <= (self.end_line, self.end_col)


@dataclass(frozen=True)
class Diagnostic:
    message: str
    line: int
    col: int
    severity: str = "error"  # "error" or "note"

    def __str__(self) -> str:
        return f"{self.line}:{self.col}: {self.severity}: {self.message}"


class ParseFailure(Exception):
    """Raised by parse_ok when a program has error diagnostics."""

    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics[:5]))


# ---------------------------------------------------------------------------
# Tokens


KEYWORDS = {
    "if", "else", "while", "for", "return", "struct", "void", "const",
    "char", "short", "int", "unsigned", "int64_t", "long", "signed",
}

TWO_CHAR_OPS = {"<=", ">=", "==", "!=", "&&", "||"}
ONE_CHAR_OPS = set("+-*/<>=!(){};,.&")


@dataclass(frozen=True)
class Token:
    kind: str  # ident, int, string, macro, keyword, op, eof
    text: str
    line: int
    col: int


def tokenize(text: str, file: str = "<input>") -> tuple[list[Token], list[Diagnostic]]:
    toks: list[Token] = []
    diags: list[Diagnostic] = []
    i, line, col = 0, 1, 1
    n = len(text)

    def advance(k: int) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if i < n and text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        c = text[i]
        if c in " \t\r\n":
            advance(1)
            continue
        if c == "/" and text[i : i + 2] == "//":
            while i < n and text[i] != "\n":
                advance(1)
            continue
        if c == "/" and text[i : i + 2] == "/*":
            advance(2)
            while i < n and text[i : i + 2] != "*/":
                advance(1)
            advance(2)
            continue
        if c == "#":
            # Preprocessor directives are outside the subset; skip the line.
            diags.append(Diagnostic("preprocessor directive ignored", line, col, "note"))
            while i < n and text[i] != "\n":
                advance(1)
            continue
        if c == '"':
            l0, c0 = line, col
            advance(1)
            buf = []
            while i < n and text[i] != '"':
                if text[i] == "\\" and i + 1 < n:
                    buf.append(text[i : i + 2])
                    advance(2)
                else:
                    buf.append(text[i])
                    advance(1)
            if i >= n:
                diags.append(Diagnostic("unterminated string literal", l0, c0))
            advance(1)
            toks.append(Token("string", "".join(buf), l0, c0))
            continue
        if c.isdigit():
            l0, c0 = line, col
            j = i
            while j < n and text[j].isdigit():
                j += 1
            lit = text[i:j]
            advance(j - i)
            # Swallow standard integer suffixes.
            while i < n and text[i] in "uUlL":
                advance(1)
            toks.append(Token("int", lit, l0, c0))
            continue
        if c.isalpha() or c == "_":
            l0, c0 = line, col
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            word = text[i:j]
            advance(j - i)
            if word in DEFAULT_MACRO_VALUES:
                toks.append(Token("macro", word, l0, c0))
            elif word in KEYWORDS:
                toks.append(Token("keyword", word, l0, c0))
            else:
                toks.append(Token("ident", word, l0, c0))
            continue
        two = text[i : i + 2]
        if two in TWO_CHAR_OPS:
            toks.append(Token("op", two, line, col))
            advance(2)
            continue
        if c in ONE_CHAR_OPS:
            toks.append(Token("op", c, line, col))
            advance(1)
            continue
        diags.append(Diagnostic(f"unexpected character {c!r}", line, col))
        advance(1)
    toks.append(Token("eof", "", line, col))
    return toks, diags


# ---------------------------------------------------------------------------
# AST


@dataclass(frozen=True)
class TypeRef:
    """Resolved declaration type: an integer kind, void, or a struct."""

    base: str  # one of KINDS, "void", or a struct name
    is_struct: bool = False
    stars: int = 0
    const: bool = False

    @property
    def kind(self) -> Optional[IntKind]:
        return KINDS.get(self.base)


@dataclass
class Expr:
    span: Span
    kind: Optional[IntKind] = field(default=None, compare=False)


@dataclass
class IntLit(Expr):
    value: int = 0


@dataclass
class StrLit(Expr):
    text: str = ""


@dataclass
class MacroRef(Expr):
    macro: str = ""


@dataclass
class Name(Expr):
    ident: str = ""


@dataclass
class Member(Expr):
    base: str = ""
    path: tuple[str, ...] = ()

    @property
    def flat_name(self) -> str:
        return ".".join((self.base,) + self.path)


@dataclass
class Deref(Expr):
    ident: str = ""


@dataclass
class Unary(Expr):
    op: str = "-"  # "-" or "!"
    operand: Expr = None  # type: ignore[assignment]


@dataclass
class Binary(Expr):
    op: str = "+"
    lhs: Expr = None  # type: ignore[assignment]
    rhs: Expr = None  # type: ignore[assignment]


@dataclass
class Call(Expr):
    callee: str = ""
    args: tuple[Expr, ...] = ()


LValue = Union[Name, Member, Deref]


@dataclass
class Stmt:
    span: Span


@dataclass
class DeclStmt(Stmt):
    type_ref: TypeRef = TypeRef("int")
    name: str = ""
    init: Optional[Expr] = None


@dataclass
class AssignStmt(Stmt):
    target: Expr = None  # type: ignore[assignment]
    value: Expr = None  # type: ignore[assignment]


@dataclass
class ExprStmt(Stmt):
    expr: Expr = None  # type: ignore[assignment]


@dataclass
class Block(Stmt):
    stmts: tuple[Stmt, ...] = ()


@dataclass
class IfStmt(Stmt):
    cond: Expr = None  # type: ignore[assignment]
    then: Block = None  # type: ignore[assignment]
    els: Optional[Block] = None


@dataclass
class WhileStmt(Stmt):
    cond: Expr = None  # type: ignore[assignment]
    body: Block = None  # type: ignore[assignment]


@dataclass
class ForStmt(Stmt):
    init: Optional[Stmt] = None  # DeclStmt or AssignStmt
    cond: Optional[Expr] = None
    step: Optional[AssignStmt] = None
    body: Block = None  # type: ignore[assignment]


@dataclass
class ReturnStmt(Stmt):
    value: Optional[Expr] = None


@dataclass(frozen=True)
class FieldDef:
    type_ref: TypeRef
    name: str


@dataclass
class StructDef:
    name: str
    fields: tuple[FieldDef, ...]
    span: Span


@dataclass
class Param:
    type_ref: TypeRef
    name: str
    span: Span


@dataclass
class FuncDef:
    ret: TypeRef
    name: str
    params: tuple[Param, ...]
    body: Block
    span: Span


@dataclass
class Program:
    file: str
    structs: tuple[StructDef, ...]
    globals: tuple[DeclStmt, ...]
    funcs: tuple[FuncDef, ...]

    def struct(self, name: str) -> Optional[StructDef]:
        for s in self.structs:
            if s.name == name:
                return s
        return None

    def func(self, name: str) -> Optional[FuncDef]:
        for f in self.funcs:
            if f.name == name:
                return f
        return None


class UnknownField(Exception):
    pass


def resolve_field_type(program: Program, struct_name: str, path: tuple[str, ...]) -> IntKind:
    """Kind of the scalar reached by following ``path`` through nested structs."""
    if not path:
        raise UnknownField(f"empty field path into struct {struct_name}")
    current = struct_name
    for i, part in enumerate(path):
        sd = program.struct(current)
        if sd is None:
            raise UnknownField(f"unknown struct {current}")
        fd = next((f for f in sd.fields if f.name == part), None)
        if fd is None:
            raise UnknownField(f"struct {current} has no field {part}")
        if fd.type_ref.is_struct:
            current = fd.type_ref.base
            if i == len(path) - 1:
                raise UnknownField(f"field path ends at struct {current}, not a scalar")
        else:
            if i != len(path) - 1:
                raise UnknownField(f"field {part} of {current} is scalar, cannot descend")
            k = fd.type_ref.kind
            if k is None:
                raise UnknownField(f"field {part} of {current} has no integer kind")
            return k
    raise UnknownField(f"field path {'.'.join(path)} did not reach a scalar")


# ---------------------------------------------------------------------------
# Parser


class _Parser:
    def __init__(self, toks: list[Token], file: str):
        self.toks = toks
        self.pos = 0
        self.file = file
        self.diags: list[Diagnostic] = []

    # -- token helpers

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def at(self, kind: str, text: Optional[str] = None) -> bool:
        t = self.peek()
        return t.kind == kind and (text is None or t.text == text)

    def take(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def expect(self, kind: str, text: Optional[str] = None) -> Token:
        if self.at(kind, text):
            return self.take()
        t = self.peek()
        want = text or kind
        self.error(f"expected {want!r}, found {t.text!r}", t)
        raise _Recover()

    def error(self, msg: str, tok: Optional[Token] = None) -> None:
        t = tok or self.peek()
        self.diags.append(Diagnostic(msg, t.line, t.col))

    def span_from(self, start: Token, end: Optional[Token] = None) -> Span:
        last = end or self.toks[max(self.pos - 1, 0)]
        end_col = last.col + max(len(last.text), 1)
        return Span(self.file, start.line, start.col, last.line, end_col)

    # -- recovery

    def sync_stmt(self) -> None:
        depth = 0
        while not self.at("eof"):
            t = self.peek()
            if t.kind == "op" and t.text == "{":
                depth += 1
            elif t.kind == "op" and t.text == "}":
                if depth == 0:
                    return
                depth -= 1
            elif t.kind == "op" and t.text == ";" and depth == 0:
                self.take()
                return
            self.take()

    # -- types

    def at_type(self) -> bool:
        t = self.peek()
        if t.kind != "keyword":
            return False
        return t.text in {"const", "struct", "void", "char", "short", "int",
                          "unsigned", "int64_t", "long", "signed"}

    def parse_type(self) -> TypeRef:
        const = False
        if self.at("keyword", "const"):
            self.take()
            const = True
        t = self.peek()
        base = ""
        is_struct = False
        if self.at("keyword", "struct"):
            self.take()
            base = self.expect("ident").text
            is_struct = True
        elif self.at("keyword", "void"):
            self.take()
            base = "void"
        elif self.at("keyword", "unsigned"):
            self.take()
            if self.at("keyword", "int"):
                self.take()
            base = "unsigned int"
        elif self.at("keyword", "signed"):
            self.take()
            if self.at("keyword", "int"):
                self.take()
            base = "int"
        elif self.at("keyword", "char"):
            self.take()
            base = "char"
        elif self.at("keyword", "short"):
            self.take()
            base = "short"
        elif self.at("keyword", "int"):
            self.take()
            base = "int"
        elif self.at("keyword", "int64_t"):
            self.take()
            base = "int64"
        elif self.at("keyword", "long"):
            self.take()
            if self.at("keyword", "long"):
                self.take()
            if self.at("keyword", "int"):
                self.take()
            base = "int64"
        else:
            self.error(f"expected type name, found {t.text!r}", t)
            raise _Recover()
        stars = 0
        while self.at("op", "*"):
            self.take()
            stars += 1
        return TypeRef(base, is_struct, stars, const)

    # -- top level

    def parse_program(self) -> Program:
        structs: list[StructDef] = []
        globals_: list[DeclStmt] = []
        funcs: list[FuncDef] = []
        while not self.at("eof"):
            try:
                if self.at("keyword", "struct") and self.peek(2).text == "{":
                    structs.append(self.parse_struct())
                elif self.at_type():
                    start = self.pos
                    tr = self.parse_type()
                    name = self.expect("ident").text
                    if self.at("op", "("):
                        funcs.append(self.parse_func_rest(tr, name, self.toks[start]))
                    else:
                        self.pos = start
                        globals_.append(self.parse_decl())
                else:
                    self.error(f"expected declaration, found {self.peek().text!r}")
                    raise _Recover()
            except _Recover:
                self.sync_stmt()
                if self.at("op", "}"):
                    self.take()
        return Program(self.file, tuple(structs), tuple(globals_), tuple(funcs))

    def parse_struct(self) -> StructDef:
        start = self.expect("keyword", "struct")
        name = self.expect("ident").text
        self.expect("op", "{")
        flds: list[FieldDef] = []
        while not self.at("op", "}") and not self.at("eof"):
            tr = self.parse_type()
            fname = self.expect("ident").text
            self.expect("op", ";")
            flds.append(FieldDef(tr, fname))
        self.expect("op", "}")
        self.expect("op", ";")
        return StructDef(name, tuple(flds), self.span_from(start))

    def parse_func_rest(self, ret: TypeRef, name: str, start: Token) -> FuncDef:
        self.expect("op", "(")
        params: list[Param] = []
        if self.at("keyword", "void") and self.peek(1).text == ")":
            self.take()
        elif not self.at("op", ")"):
            while True:
                pt = self.peek()
                tr = self.parse_type()
                pname = self.expect("ident").text
                params.append(Param(tr, pname, self.span_from(pt)))
                if self.at("op", ","):
                    self.take()
                    continue
                break
        self.expect("op", ")")
        body = self.parse_block()
        return FuncDef(ret, name, tuple(params), body, self.span_from(start))

    # -- statements

    def parse_block(self) -> Block:
        start = self.expect("op", "{")
        stmts: list[Stmt] = []
        while not self.at("op", "}") and not self.at("eof"):
            try:
                stmts.append(self.parse_stmt())
            except _Recover:
                self.sync_stmt()
        self.expect("op", "}")
        return Block(self.span_from(start), tuple(stmts))

    def parse_stmt(self) -> Stmt:
        t = self.peek()
        if self.at("op", "{"):
            return self.parse_block()
        if self.at("op", ";"):
            self.take()
            return Block(self.span_from(t), ())
        if self.at("keyword", "if"):
            return self.parse_if()
        if self.at("keyword", "while"):
            return self.parse_while()
        if self.at("keyword", "for"):
            return self.parse_for()
        if self.at("keyword", "return"):
            self.take()
            val = None
            if not self.at("op", ";"):
                val = self.parse_expr()
            self.expect("op", ";")
            return ReturnStmt(self.span_from(t), val)
        if self.at_type():
            return self.parse_decl()
        return self.parse_assign_or_expr()

    def parse_decl(self) -> DeclStmt:
        start = self.peek()
        tr = self.parse_type()
        name = self.expect("ident").text
        init = None
        if self.at("op", "="):
            self.take()
            init = self.parse_expr()
        self.expect("op", ";")
        return DeclStmt(self.span_from(start), tr, name, init)

    def parse_assign_or_expr(self, need_semi: bool = True) -> Stmt:
        start = self.peek()
        lhs = self.parse_expr()
        if self.at("op", "="):
            if not isinstance(lhs, (Name, Member, Deref)):
                self.error("left side of assignment is not assignable", start)
            self.take()
            rhs = self.parse_expr()
            if need_semi:
                self.expect("op", ";")
            return AssignStmt(self.span_from(start), lhs, rhs)
        if need_semi:
            self.expect("op", ";")
        if not isinstance(lhs, Call):
            self.error("expression statement has no effect", start)
        return ExprStmt(self.span_from(start), lhs)

    def parse_if(self) -> IfStmt:
        start = self.expect("keyword", "if")
        self.expect("op", "(")
        cond = self.parse_expr()
        self.expect("op", ")")
        then = self.as_block(self.parse_stmt())
        els = None
        if self.at("keyword", "else"):
            self.take()
            els = self.as_block(self.parse_stmt())
        return IfStmt(self.span_from(start), cond, then, els)

    def parse_while(self) -> WhileStmt:
        start = self.expect("keyword", "while")
        self.expect("op", "(")
        cond = self.parse_expr()
        self.expect("op", ")")
        body = self.as_block(self.parse_stmt())
        return WhileStmt(self.span_from(start), cond, body)

    def parse_for(self) -> ForStmt:
        start = self.expect("keyword", "for")
        self.expect("op", "(")
        init: Optional[Stmt] = None
        if self.at("op", ";"):
            self.take()
        elif self.at_type():
            init = self.parse_decl()
        else:
            init = self.parse_assign_or_expr()
            if not isinstance(init, AssignStmt):
                self.error("for initializer must be a declaration or assignment", start)
        cond: Optional[Expr] = None
        if not self.at("op", ";"):
            cond = self.parse_expr()
        self.expect("op", ";")
        step: Optional[AssignStmt] = None
        if not self.at("op", ")"):
            s = self.parse_assign_or_expr(need_semi=False)
            if isinstance(s, AssignStmt):
                step = s
            else:
                self.error("for step must be an assignment", start)
        self.expect("op", ")")
        body = self.as_block(self.parse_stmt())
        return ForStmt(self.span_from(start), init, cond, step, body)

    def as_block(self, s: Stmt) -> Block:
        if isinstance(s, Block):
            return s
        return Block(s.span, (s,))

    # -- expressions, precedence climbing

    def parse_expr(self) -> Expr:
        return self.parse_or()

    def parse_or(self) -> Expr:
        lhs = self.parse_and()
        while self.at("op", "||"):
            t = self.take()
            rhs = self.parse_and()
            lhs = Binary(self._merge(lhs.span, rhs.span), None, "||", lhs, rhs)
        return lhs

    def parse_and(self) -> Expr:
        lhs = self.parse_eq()
        while self.at("op", "&&"):
            self.take()
            rhs = self.parse_eq()
            lhs = Binary(self._merge(lhs.span, rhs.span), None, "&&", lhs, rhs)
        return lhs

    def parse_eq(self) -> Expr:
        lhs = self.parse_rel()
        while self.at("op", "==") or self.at("op", "!="):
            op = self.take().text
            rhs = self.parse_rel()
            lhs = Binary(self._merge(lhs.span, rhs.span), None, op, lhs, rhs)
        return lhs

    def parse_rel(self) -> Expr:
        lhs = self.parse_add()
        while self.peek().kind == "op" and self.peek().text in {"<", "<=", ">", ">="}:
            op = self.take().text
            rhs = self.parse_add()
            lhs = Binary(self._merge(lhs.span, rhs.span), None, op, lhs, rhs)
        return lhs

    def parse_add(self) -> Expr:
        lhs = self.parse_mul()
        while self.peek().kind == "op" and self.peek().text in {"+", "-"}:
            op = self.take().text
            rhs = self.parse_mul()
            lhs = Binary(self._merge(lhs.span, rhs.span), None, op, lhs, rhs)
        return lhs

    def parse_mul(self) -> Expr:
        lhs = self.parse_unary()
        while self.peek().kind == "op" and self.peek().text in {"*", "/"}:
            op = self.take().text
            rhs = self.parse_unary()
            lhs = Binary(self._merge(lhs.span, rhs.span), None, op, lhs, rhs)
        return lhs

    def parse_unary(self) -> Expr:
        t = self.peek()
        if self.at("op", "-"):
            self.take()
            inner = self.parse_unary()
            return Unary(self._merge(self.span_from(t), inner.span), None, "-", inner)
        if self.at("op", "!"):
            self.take()
            inner = self.parse_unary()
            return Unary(self._merge(self.span_from(t), inner.span), None, "!", inner)
        if self.at("op", "*"):
            self.take()
            name = self.expect("ident")
            return Deref(self.span_from(t), None, name.text)
        return self.parse_primary()

    def parse_primary(self) -> Expr:
        t = self.peek()
        if t.kind == "int":
            self.take()
            return IntLit(self.span_from(t), None, int(t.text))
        if t.kind == "string":
            self.take()
            return StrLit(self.span_from(t), None, t.text)
        if t.kind == "macro":
            self.take()
            return MacroRef(self.span_from(t), None, t.text)
        if self.at("op", "("):
            self.take()
            inner = self.parse_expr()
            self.expect("op", ")")
            return inner
        if t.kind == "ident":
            self.take()
            if self.at("op", "("):
                self.take()
                args: list[Expr] = []
                if not self.at("op", ")"):
                    while True:
                        args.append(self.parse_expr())
                        if self.at("op", ","):
                            self.take()
                            continue
                        break
                self.expect("op", ")")
                return Call(self.span_from(t), None, t.text, tuple(args))
            if self.at("op", "."):
                path: list[str] = []
                while self.at("op", "."):
                    self.take()
                    path.append(self.expect("ident").text)
                return Member(self.span_from(t), None, t.text, tuple(path))
            return Name(self.span_from(t), None, t.text)
        self.error(f"expected expression, found {t.text!r}", t)
        raise _Recover()

    def _merge(self, a: Span, b: Span) -> Span:
        return Span(a.file, a.start_line, a.start_col, b.end_line, b.end_col)


class _Recover(Exception):
    pass


# ---------------------------------------------------------------------------
# Kind annotation


def _wider(a: IntKind, b: IntKind) -> IntKind:
    if a.width != b.width:
        return a if a.width > b.width else b
    if a.signed == b.signed:
        return a
    # Same width, mixed signedness: unsigned wins, as in C conversions.
    return a if not a.signed else b


@dataclass
class _VarInfo:
    type_ref: TypeRef


class _Annotator:
    def __init__(self, program: Program, diags: list[Diagnostic]):
        self.program = program
        self.diags = diags
        self.globals: dict[str, _VarInfo] = {}
        self.locals: dict[str, _VarInfo] = {}

    def run(self) -> None:
        for g in self.program.globals:
            self.globals[g.name] = _VarInfo(g.type_ref)
            if g.init is not None:
                self.locals = {}
                self.expr(g.init)
        for fn in self.program.funcs:
            self.locals = {p.name: _VarInfo(p.type_ref) for p in fn.params}
            self.block(fn.body)

    def note(self, msg: str, span: Span) -> None:
        self.diags.append(Diagnostic(msg, span.start_line, span.start_col))

    def lookup(self, name: str) -> Optional[_VarInfo]:
        return self.locals.get(name) or self.globals.get(name)

    def block(self, b: Block) -> None:
        for s in b.stmts:
            self.stmt(s)

    def stmt(self, s: Stmt) -> None:
        if isinstance(s, DeclStmt):
            if s.name in self.locals:
                self.note(f"redeclaration of {s.name}", s.span)
            self.locals[s.name] = _VarInfo(s.type_ref)
            if s.init is not None:
                self.expr(s.init)
        elif isinstance(s, AssignStmt):
            self.expr(s.target)
            self.expr(s.value)
        elif isinstance(s, ExprStmt):
            self.expr(s.expr)
        elif isinstance(s, Block):
            self.block(s)
        elif isinstance(s, IfStmt):
            self.expr(s.cond)
            self.block(s.then)
            if s.els is not None:
                self.block(s.els)
        elif isinstance(s, WhileStmt):
            self.expr(s.cond)
            self.block(s.body)
        elif isinstance(s, ForStmt):
            if s.init is not None:
                self.stmt(s.init)
            if s.cond is not None:
                self.expr(s.cond)
            if s.step is not None:
                self.stmt(s.step)
            self.block(s.body)
        elif isinstance(s, ReturnStmt):
            if s.value is not None:
                self.expr(s.value)

    def expr(self, e: Expr) -> IntKind:
        k = self._expr(e)
        e.kind = k
        return k

    def _expr(self, e: Expr) -> IntKind:
        if isinstance(e, IntLit):
            return KINDS["int"] if e.value <= KINDS["int"].max_value else KINDS["int64"]
        if isinstance(e, StrLit):
            return KINDS["int64"]  # pointer width, never enters constraints
        if isinstance(e, MacroRef):
            return KINDS[MACRO_KINDS[e.macro]]
        if isinstance(e, Name):
            info = self.lookup(e.ident)
            if info is None:
                self.note(f"use of undeclared variable {e.ident}", e.span)
                return KINDS["int"]
            if info.type_ref.stars > 0:
                return KINDS["int64"]  # pointer value, width of a pointer
            k = info.type_ref.kind
            if k is None:
                self.note(f"{e.ident} is not an integer variable", e.span)
                return KINDS["int"]
            return k
        if isinstance(e, Member):
            info = self.lookup(e.base)
            if info is None or not info.type_ref.is_struct:
                self.note(f"{e.base} is not a struct variable", e.span)
                return KINDS["int"]
            try:
                return resolve_field_type(self.program, info.type_ref.base, e.path)
            except UnknownField as exc:
                self.note(str(exc), e.span)
                return KINDS["int"]
        if isinstance(e, Deref):
            info = self.lookup(e.ident)
            if info is None or info.type_ref.stars == 0:
                self.note(f"{e.ident} is not a pointer", e.span)
                return KINDS["int"]
            k = info.type_ref.kind
            return k if k is not None else KINDS["int"]
        if isinstance(e, Unary):
            k = self.expr(e.operand)
            return KINDS["int"] if e.op == "!" else k
        if isinstance(e, Binary):
            lk = self.expr(e.lhs)
            rk = self.expr(e.rhs)
            if e.op in {"+", "-", "*", "/"}:
                return _wider(lk, rk)
            return KINDS["int"]  # comparisons and boolean connectives
        if isinstance(e, Call):
            for a in e.args:
                self.expr(a)
            fn = self.program.func(e.callee)
            if fn is not None:
                k = fn.ret.kind
                return k if k is not None else KINDS["int"]
            ext = EXTERNAL_RETURN_KINDS.get(e.callee, "int")
            return KINDS[ext]
        raise TypeError(f"unknown expression node {type(e).__name__}")


# ---------------------------------------------------------------------------
# Entry points


def parse(text: str, file: str = "<input>") -> tuple[Program, list[Diagnostic]]:
    """Parse and kind-annotate a program, collecting diagnostics."""
    toks, diags = tokenize(text, file)
    p = _Parser(toks, file)
    p.diags.extend(diags)
    program = p.parse_program()
    _Annotator(program, p.diags).run()
    return program, p.diags


def parse_ok(text: str, file: str = "<input>") -> Program:
    """Parse, raising ParseFailure if any error-severity diagnostic occurs."""
    program, diags = parse(text, file)
    errors = [d for d in diags if d.severity == "error"]
    if errors:
        raise ParseFailure(errors)
    return program


# ---------------------------------------------------------------------------
# Pretty printer


_PREC = {
    "||": 1, "&&": 2, "==": 3, "!=": 3,
    "<": 4, "<=": 4, ">": 4, ">=": 4,
    "+": 5, "-": 5, "*": 6, "/": 6,
}


def _type_text(tr: TypeRef) -> str:
    base = f"struct {tr.base}" if tr.is_struct else {"int64": "int64_t"}.get(tr.base, tr.base)
    out = ("const " if tr.const else "") + base
    if tr.stars:
        out += " " + "*" * tr.stars
    return out


def expr_text(e: Expr) -> str:
    return _expr_text(e, 0)


def _expr_text(e: Expr, parent_prec: int) -> str:
    if isinstance(e, IntLit):
        return str(e.value)
    if isinstance(e, StrLit):
        return f'"{e.text}"'
    if isinstance(e, MacroRef):
        return e.macro
    if isinstance(e, Name):
        return e.ident
    if isinstance(e, Member):
        return e.flat_name
    if isinstance(e, Deref):
        return f"*{e.ident}"
    if isinstance(e, Unary):
        inner = _expr_text(e.operand, 7)
        text = f"{e.op}{inner}"
        return f"({text})" if parent_prec > 6 else text
    if isinstance(e, Call):
        return f"{e.callee}({', '.join(_expr_text(a, 0) for a in e.args)})"
    if isinstance(e, Binary):
        prec = _PREC[e.op]
        left = _expr_text(e.lhs, prec)
        # Right operand needs parens at equal precedence for - and /.
        right = _expr_text(e.rhs, prec + (1 if e.op in {"-", "/", "==", "!=", "<", "<=", ">", ">="} else 0))
        text = f"{left} {e.op} {right}"
        return f"({text})" if prec < parent_prec else text
    raise TypeError(f"unknown expression node {type(e).__name__}")


def _stmt_lines(s: Stmt, indent: int) -> list[str]:
    pad = "    " * indent
    if isinstance(s, DeclStmt):
        init = f" = {expr_text(s.init)}" if s.init is not None else ""
        return [f"{pad}{_type_text(s.type_ref)} {s.name}{init};"]
    if isinstance(s, AssignStmt):
        return [f"{pad}{expr_text(s.target)} = {expr_text(s.value)};"]
    if isinstance(s, ExprStmt):
        return [f"{pad}{expr_text(s.expr)};"]
    if isinstance(s, ReturnStmt):
        return [f"{pad}return {expr_text(s.value)};" if s.value is not None else f"{pad}return;"]
    if isinstance(s, Block):
        lines = [f"{pad}{{"]
        for inner in s.stmts:
            lines.extend(_stmt_lines(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    if isinstance(s, IfStmt):
        lines = [f"{pad}if ({expr_text(s.cond)}) {{"]
        for inner in s.then.stmts:
            lines.extend(_stmt_lines(inner, indent + 1))
        if s.els is not None:
            lines.append(f"{pad}}} else {{")
            for inner in s.els.stmts:
                lines.extend(_stmt_lines(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    if isinstance(s, WhileStmt):
        lines = [f"{pad}while ({expr_text(s.cond)}) {{"]
        for inner in s.body.stmts:
            lines.extend(_stmt_lines(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    if isinstance(s, ForStmt):
        if s.init is None:
            init = ""
        else:
            init = _stmt_lines(s.init, 0)[0].rstrip(";")
        cond = expr_text(s.cond) if s.cond is not None else ""
        step = ""
        if s.step is not None:
            step = f"{expr_text(s.step.target)} = {expr_text(s.step.value)}"
        lines = [f"{pad}for ({init}; {cond}; {step}) {{"]
        for inner in s.body.stmts:
            lines.extend(_stmt_lines(inner, indent + 1))
        lines.append(f"{pad}}}")
        return lines
    raise TypeError(f"unknown statement node {type(s).__name__}")


def stmt_text(s: Stmt) -> str:
    """One-line canonical text of a statement (bodies elided to their header)."""
    lines = _stmt_lines(s, 0)
    return lines[0] if len(lines) == 1 else lines[0].rstrip("{").rstrip() + " ..."


def pretty(program: Program) -> str:
    """Canonical text for a program; reparsing yields a structurally equal AST."""
    lines: list[str] = []
    for sd in program.structs:
        lines.append(f"struct {sd.name} {{")
        for fd in sd.fields:
            lines.append(f"    {_type_text(fd.type_ref)} {fd.name};")
        lines.append("};")
        lines.append("")
    for g in program.globals:
        lines.extend(_stmt_lines(g, 0))
    if program.globals:
        lines.append("")
    for fn in program.funcs:
        params = ", ".join(f"{_type_text(p.type_ref)} {p.name}" for p in fn.params)
        lines.append(f"{_type_text(fn.ret)} {fn.name}({params}) {{")
        for s in fn.body.stmts:
            lines.extend(_stmt_lines(s, 1))
        lines.append("}")
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


# ---------------------------------------------------------------------------
# Canonical serialization and structural equality


def ast_to_dict(node, include_spans: bool = True):
    """Plain-data form of any AST node, stable field order, for hashing and tests."""
    if isinstance(node, (int, str, bool)) or node is None:
        return node
    if isinstance(node, IntKind):
        return node.name
    if isinstance(node, Span):
        return [node.start_line, node.start_col, node.end_line, node.end_col]
    if isinstance(node, TypeRef):
        return {"base": node.base, "struct": node.is_struct, "stars": node.stars, "const": node.const}
    if isinstance(node, (tuple, list)):
        return [ast_to_dict(x, include_spans) for x in node]
    out = {"node": type(node).__name__}
    for f in fields(node):
        if f.name == "span" and not include_spans:
            continue
        if f.name == "file":
            continue
        out[f.name] = ast_to_dict(getattr(node, f.name), include_spans)
    return out


def canonical_json(node, include_spans: bool = True) -> str:
    return json.dumps(ast_to_dict(node, include_spans), separators=(",", ":"))


def ast_equal(a, b, ignore_spans: bool = True) -> bool:
    return canonical_json(a, not ignore_spans) == canonical_json(b, not ignore_spans)


def _walk_exprs(node) -> Iterator[Expr]:
    if isinstance(node, Expr):
        yield node
    if isinstance(node, (Program, StructDef, FuncDef, Param)) or isinstance(node, (Stmt, Expr)):
        for f in fields(node):
            v = getattr(node, f.name)
            if isinstance(v, (Expr, Stmt)):
                yield from _walk_exprs(v)
            elif isinstance(v, tuple):
                for x in v:
                    if isinstance(x, (Expr, Stmt, FuncDef, StructDef)):
                        yield from _walk_exprs(x)


def all_exprs(program: Program) -> Iterator[Expr]:
    """Every expression node in the program, in syntactic order."""
    for g in program.globals:
        yield from _walk_exprs(g)
    for fn in program.funcs:
        yield from _walk_exprs(fn.body)


def all_spans(program: Program) -> Iterator[tuple[Span, Span]]:
    """(parent, child) span pairs for containment checks."""

    def rec(node):
        parent = getattr(node, "span", None)
        for f in fields(node):
            v = getattr(node, f.name)
            kids = v if isinstance(v, tuple) else [v]
            for x in kids:
                if isinstance(x, (Expr, Stmt)):
                    child = getattr(x, "span", None)
                    if parent is not None and child is not None:
                        yield (parent, child)
                    yield from rec(x)

    for fn in program.funcs:
        yield from rec(fn.body)
