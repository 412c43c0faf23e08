"""The toy loop language: affine assignments, nondeterministic choice, counted loops.

    program   := decl* init? stmt*
    decl      := "var" IDENT ("," IDENT)* ";"
    init      := "init" (point | box+) ";"
    stmt      := assign | choose | loop
    assign    := IDENT ":=" affexpr ";" | "(" IDENT, ... ")" ":=" "(" affexpr, ... ")" ";"
    choose    := "choose" "{" stmt* ("|" stmt*)* "}"
    loop      := "loop" IDENT ("to" NUM)? "{" stmt* "}"

Numbers are decimal or hexadecimal float literals. ``#`` starts a comment.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field

import numpy as np


class ParseError(ValueError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"{line}:{col}: {msg}")
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


_TOKEN_RE = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<num>0[xX](?:[0-9a-fA-F]+\.?[0-9a-fA-F]*|\.[0-9a-fA-F]+)(?:[pP][+-]?[0-9]+)?
          |(?:[0-9]+\.?[0-9]*|\.[0-9]+)(?:[eE][+-]?[0-9]+)?)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>:=|[;,()\[\]{}|+\-*])
""", re.VERBOSE)

KEYWORDS = {"var", "init", "choose", "loop", "to"}


def tokenize(text: str) -> list[Token]:
    out = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind == "ident" and m.group() in KEYWORDS:
            out.append(Token(m.group(), m.group(), line, col))
        elif kind in ("num", "ident", "op"):
            out.append(Token(kind if kind != "op" else m.group(), m.group(), line, col))
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


def parse_number(text: str) -> float:
    if text[:2].lower() == "0x":
        if "p" not in text.lower():
            text += "p0"
        return float.fromhex(text)
    return float(text)


@dataclass(frozen=True, eq=False)
class Assign:
    """``x <- A x + b`` over all program variables."""

    A: np.ndarray
    b: np.ndarray
    line: int = 0


@dataclass(frozen=True, eq=False)
class Choose:
    branches: tuple
    line: int = 0


@dataclass(frozen=True, eq=False)
class Loop:
    counter: str
    bound: int | None
    body: tuple
    line: int = 0


@dataclass(frozen=True)
class Nop:
    line: int = 0


@dataclass(frozen=True, eq=False)
class Init:
    kind: str           # "point" or "box"
    lo: np.ndarray
    hi: np.ndarray


@dataclass(frozen=True, eq=False)
class Program:
    variables: tuple
    init: Init
    body: tuple
    source: str = ""

    @property
    def n(self) -> int:
        return len(self.variables)

    def loops(self):
        """All loops, outermost first."""
        out = []

        def walk(stmts):
            for s in stmts:
                if isinstance(s, Loop):
                    out.append(s)
                    walk(s.body)
                elif isinstance(s, Choose):
                    for br in s.branches:
                        walk(br)
        walk(self.body)
        return out


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0
        self.vars: list[str] = []
        self.counters: list[str] = []
        self.used: set[str] = set()

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def fail(self, msg: str, tok: Token | None = None):
        tok = tok or self.tok
        raise ParseError(msg, tok.line, tok.col)

    def eat(self, kind: str) -> Token:
        t = self.tok
        if t.kind != kind:
            self.fail(f"expected {kind!r}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def accept(self, kind: str) -> Token | None:
        if self.tok.kind == kind:
            return self.eat(kind)
        return None

    def number(self) -> float:
        sign = -1.0 if self.accept("-") else 1.0
        t = self.eat("num")
        return sign * parse_number(t.text)

    def program(self) -> Program:
        while self.tok.kind == "var":
            self.decl()
        n = len(self.vars)
        if self.tok.kind == "init":
            init = self.init()
        else:
            init = Init("point", np.zeros(n), np.zeros(n))
        body = self.stmts(("eof",))
        self.eat("eof")
        return Program(tuple(self.vars), init, body)

    def decl(self):
        self.eat("var")
        while True:
            t = self.eat("ident")
            if t.text in self.vars:
                self.fail(f"variable {t.text!r} declared twice", t)
            self.vars.append(t.text)
            if not self.accept(","):
                break
        self.eat(";")

    def init(self) -> Init:
        start = self.eat("init")
        n = len(self.vars)
        if self.tok.kind == "(":
            self.eat("(")
            vals = [self.number()]
            while self.accept(","):
                vals.append(self.number())
            self.eat(")")
            self.eat(";")
            if len(vals) != n:
                self.fail(f"init point has {len(vals)} coordinates for {n} variables", start)
            p = np.array(vals)
            return Init("point", p, p.copy())
        lo, hi = [], []
        while self.tok.kind == "[":
            t = self.eat("[")
            a = self.number()
            self.eat(",")
            b = self.number()
            self.eat("]")
            if b < a:
                self.fail("empty interval", t)
            lo.append(a)
            hi.append(b)
        self.eat(";")
        if len(lo) != n:
            self.fail(f"init box has {len(lo)} intervals for {n} variables", start)
        return Init("box", np.array(lo), np.array(hi))

    def stmts(self, stop) -> tuple:
        out = []
        while self.tok.kind not in stop:
            out.append(self.stmt())
        return tuple(out)

    def stmt(self):
        t = self.tok
        if t.kind == "choose":
            return self.choose()
        if t.kind == "loop":
            return self.loop()
        if t.kind == "(":
            return self.parallel_assign()
        if t.kind == "ident":
            return self.assign()
        self.fail(f"expected a statement, found {t.text or 'end of input'!r}")

    def choose(self) -> Choose:
        t = self.eat("choose")
        self.eat("{")
        branches = [self.block(("|", "}"))]
        while self.accept("|"):
            branches.append(self.block(("|", "}")))
        self.eat("}")
        return Choose(tuple(branches), t.line)

    def block(self, stop) -> tuple:
        tok = self.tok
        body = self.stmts(stop)
        return body if body else (Nop(tok.line),)

    def loop(self) -> Loop:
        t = self.eat("loop")
        name = self.eat("ident")
        if name.text in self.vars:
            self.fail(f"loop counter {name.text!r} clashes with a variable", name)
        if name.text in self.used:
            self.fail(f"duplicate loop counter {name.text!r}", name)
        self.used.add(name.text)
        bound = None
        if self.accept("to"):
            bt = self.tok
            b = self.number()
            if b < 0 or b != int(b):
                self.fail("loop bound must be a non-negative integer", bt)
            bound = int(b)
        self.eat("{")
        self.counters.append(name.text)
        body = self.block(("}",))
        self.counters.pop()
        self.eat("}")
        return Loop(name.text, bound, body, t.line)

    def target(self) -> int:
        t = self.eat("ident")
        if t.text not in self.vars:
            self.fail(f"undeclared variable {t.text!r}", t)
        return self.vars.index(t.text)

    def assign(self) -> Assign:
        line = self.tok.line
        j = self.target()
        self.eat(":=")
        row, const = self.affexpr()
        self.eat(";")
        n = len(self.vars)
        A = np.eye(n)
        b = np.zeros(n)
        A[j] = row
        b[j] = const
        return Assign(A, b, line)

    def parallel_assign(self) -> Assign:
        line = self.eat("(").line
        targets = [self.target()]
        while self.accept(","):
            targets.append(self.target())
        self.eat(")")
        if len(set(targets)) != len(targets):
            self.fail("variable assigned twice in one parallel assignment")
        self.eat(":=")
        lp = self.eat("(")
        exprs = [self.affexpr()]
        while self.accept(","):
            exprs.append(self.affexpr())
        self.eat(")")
        self.eat(";")
        if len(exprs) != len(targets):
            self.fail(f"{len(targets)} targets but {len(exprs)} expressions", lp)
        n = len(self.vars)
        A = np.eye(n)
        b = np.zeros(n)
        for j, (row, const) in zip(targets, exprs):
            A[j] = row
            b[j] = const
        return Assign(A, b, line)

    def affexpr(self):
        n = len(self.vars)
        row = np.zeros(n)
        const = 0.0
        sign = 1.0
        if self.accept("-"):
            sign = -1.0
        else:
            self.accept("+")
        while True:
            coef, var = self.term()
            if var is None:
                const += sign * coef
            else:
                row[var] += sign * coef
            if self.accept("+"):
                sign = 1.0
            elif self.accept("-"):
                sign = -1.0
            else:
                return row, const

    def term(self):
        """``NUM``, ``IDENT``, ``NUM * IDENT`` or ``IDENT * NUM``."""
        if self.tok.kind == "num":
            c = parse_number(self.eat("num").text)
            if self.accept("*"):
                return c, self.variable()
            return c, None
        if self.tok.kind == "ident":
            v = self.variable()
            if self.accept("*"):
                return parse_number(self.eat("num").text), v
            return 1.0, v
        self.fail(f"expected a number or variable, found {self.tok.text or 'end of input'!r}")

    def variable(self) -> int:
        t = self.eat("ident")
        if t.text not in self.vars:
            if t.text in self.counters:
                self.fail(f"loop counter {t.text!r} cannot appear in expressions", t)
            self.fail(f"undeclared variable {t.text!r}", t)
        return self.vars.index(t.text)


def parse(text: str) -> Program:
    prog = _Parser(text).program()
    return Program(prog.variables, prog.init, prog.body, text)


def flat_paths(stmts, n: int, limit: int):
    """Compose a loop-free block into its affine paths ``[(A, b), ...]``.

    Returns ``None`` when the block contains a loop or has more than
    ``limit`` paths.
    """
    paths = [(np.eye(n), np.zeros(n))]
    for s in stmts:
        if isinstance(s, Nop):
            continue
        if isinstance(s, Assign):
            paths = [(s.A @ A, s.A @ b + s.b) for A, b in paths]
        elif isinstance(s, Choose):
            new = []
            for br in s.branches:
                sub = flat_paths(br, n, limit)
                if sub is None:
                    return None
                new.extend((A2 @ A, A2 @ b + b2) for A, b in paths for A2, b2 in sub)
            paths = new
        else:
            return None
        if len(paths) > limit:
            return None
    return paths
