"""Abstract syntax, parser and printer for the expression language.

Concrete syntax, loosest binding first::

    e ::= a ; e                          sequential composition (right assoc.)
    a ::= xN := a | c                    assignment
    c ::= let xN = e in e | fn xN . e | if e then e else a | while e do a | p
    p ::= p(e) | atom                    application
    atom ::= xN | 3 | 3.5 | (1, 2) | [[1.0]] | true | false | skip | i@m
           | op(e, ..., e) | op[k](...) | sample(e) | sampler(e) | observe(e) | (e)

Variables are slot indices written ``x0``, ``x1``, ... .
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np

KEYWORDS = {"let", "in", "fn", "if", "then", "else", "while", "do", "sample", "sampler",
            "observe", "true", "false", "skip"}


@dataclass(frozen=True)
class SourceSpan:
    start: int
    end: int
    line: int = 1
    col: int = 1

    def __post_init__(self):
        if self.start > self.end:
            raise ValueError("span start after end")


class Diagnostic(Exception):
    def __init__(self, message, span=None, rule=None):
        super().__init__(message)
        self.message = message
        self.span = span
        self.rule = rule

    def __str__(self):
        where = f"{self.span.line}:{self.span.col}: " if self.span else ""
        tag = f"[{self.rule}] " if self.rule else ""
        return f"{where}{tag}{self.message}"


class ParseError(Diagnostic):
    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        first = self.diagnostics[0]
        super().__init__(first.message, first.span, first.rule)


def _span():
    return field(default=None, compare=False, repr=False)


class Term:
    span: Optional[SourceSpan]

    def __str__(self):
        return pretty(self)


@dataclass(frozen=True)
class ConstNat(Term):
    values: tuple
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class ConstReal(Term):
    values: tuple
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class ConstPosDef(Term):
    rows: tuple
    span: Optional[SourceSpan] = _span()

    def __post_init__(self):
        m = np.array(self.rows, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("posdef literal must be a square matrix")
        if not np.allclose(m, m.T):
            raise ValueError("posdef literal must be symmetric")
        if np.linalg.eigvalsh(m).min() < -1e-9:
            raise ValueError("posdef literal must be positive semi-definite")


@dataclass(frozen=True)
class ConstFin(Term):
    value: int
    size: int
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class BuiltinApp(Term):
    op: str
    args: tuple
    param: Optional[int] = None
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Var(Term):
    index: int
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Assign(Term):
    index: int
    expr: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Seq(Term):
    first: Term
    second: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class LetIn(Term):
    index: int
    bound: Term
    body: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Fn(Term):
    index: int
    body: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class App(Term):
    fun: Term
    arg: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class If(Term):
    cond: Term
    then: Term
    orelse: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class While(Term):
    cond: Term
    body: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Sample(Term):
    expr: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Sampler(Term):
    expr: Term
    span: Optional[SourceSpan] = _span()


@dataclass(frozen=True)
class Observe(Term):
    expr: Term
    span: Optional[SourceSpan] = _span()


def children(t):
    return [getattr(t, f.name) for f in fields(t) if isinstance(getattr(t, f.name), Term)] + (
        list(t.args) if isinstance(t, BuiltinApp) else [])


# -- lexer -------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>\s+|\#[^\n]*)
  | (?P<num>\d+\.\d*(?:[eE][-+]?\d+)?|\d+[eE][-+]?\d+|\d+)
  | (?P<var>x\d+\b)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_]*)
  | (?P<op>:=|->|[;().,\[\]=@*^:-])
""", re.VERBOSE)


@dataclass
class Token:
    kind: str
    text: str
    span: SourceSpan


def tokenize(text):
    tokens, pos, line, line_start = [], 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError([Diagnostic(f"unexpected character {text[pos]!r}",
                                         SourceSpan(pos, pos + 1, line, pos - line_start + 1), "lex")])
        kind = m.lastgroup
        span = SourceSpan(pos, m.end(), line, pos - line_start + 1)
        chunk = m.group()
        if kind != "ws":
            if kind == "ident" and chunk in KEYWORDS:
                kind = "kw"
            tokens.append(Token(kind, chunk, span))
        nl = chunk.count("\n")
        if nl:
            line += nl
            line_start = pos + chunk.rfind("\n") + 1
        pos = m.end()
    end = SourceSpan(len(text), len(text), line, len(text) - line_start + 1)
    tokens.append(Token("eof", "", end))
    return tokens


class Parser:
    def __init__(self, text):
        self.tokens = tokenize(text)
        self.i = 0

    @property
    def tok(self):
        return self.tokens[self.i]

    def peek(self, k=1):
        return self.tokens[min(self.i + k, len(self.tokens) - 1)]

    def error(self, msg, tok=None):
        tok = tok or self.tok
        shown = tok.text or "end of input"
        raise ParseError([Diagnostic(f"{msg} (found {shown!r})", tok.span, "syntax")])

    def at(self, text):
        return self.tok.text == text and self.tok.kind in ("op", "kw")

    def expect(self, text):
        if not self.at(text):
            self.error(f"expected {text!r}")
        tok = self.tok
        self.i += 1
        return tok

    def _join(self, start, end_tok=None):
        end = (end_tok or self.tokens[self.i - 1]).span
        return SourceSpan(start.start, end.end, start.line, start.col)

    def parse_program(self):
        t = self.seq()
        if self.tok.kind != "eof":
            self.error("unexpected trailing input")
        return t

    def seq(self):
        start = self.tok.span
        first = self.assign()
        if self.at(";"):
            self.i += 1
            return Seq(first, self.seq(), span=self._join(start))
        return first

    def assign(self):
        if self.tok.kind == "var" and self.peek().text == ":=":
            start = self.tok.span
            idx = int(self.tok.text[1:])
            self.i += 2
            return Assign(idx, self.assign(), span=self._join(start))
        return self.control()

    def var_index(self):
        if self.tok.kind != "var":
            self.error("expected a variable x<N>")
        idx = int(self.tok.text[1:])
        self.i += 1
        return idx

    def control(self):
        start = self.tok.span
        if self.at("let"):
            self.i += 1
            idx = self.var_index()
            self.expect("=")
            bound = self.seq()
            self.expect("in")
            return LetIn(idx, bound, self.seq(), span=self._join(start))
        if self.at("fn"):
            self.i += 1
            idx = self.var_index()
            self.expect(".")
            return Fn(idx, self.seq(), span=self._join(start))
        if self.at("if"):
            self.i += 1
            c = self.seq()
            self.expect("then")
            a = self.seq()
            self.expect("else")
            return If(c, a, self.assign(), span=self._join(start))
        if self.at("while"):
            self.i += 1
            c = self.seq()
            self.expect("do")
            return While(c, self.assign(), span=self._join(start))
        return self.app()

    def app(self):
        start = self.tok.span
        f = self.atom()
        while self.at("("):
            arg = self.paren()
            f = App(f, arg, span=self._join(start))
        return f

    def paren(self):
        """``( e )`` or a numeric tuple ``(a, b, ...)``."""
        start = self.expect("(").span
        if self.tok.kind in ("num",) or (self.at("-") and self.peek().kind == "num"):
            save = self.i
            nums = [self.number()]
            if self.at(","):
                while self.at(","):
                    self.i += 1
                    nums.append(self.number())
                self.expect(")")
                return self._tuple(nums, self._join(start))
            self.i = save
        e = self.seq()
        self.expect(")")
        return e

    def number(self):
        neg = False
        if self.at("-"):
            neg = True
            self.i += 1
        if self.tok.kind != "num":
            self.error("expected a number")
        text = self.tok.text
        self.i += 1
        is_real = any(ch in text for ch in ".eE")
        val = float(text) if is_real else int(text)
        return (-val if neg else val), is_real

    def _tuple(self, nums, span):
        if any(r for _, r in nums) or any(v < 0 for v, _ in nums):
            return ConstReal(tuple(float(v) for v, _ in nums), span=span)
        return ConstNat(tuple(int(v) for v, _ in nums), span=span)

    def atom(self):
        tok = self.tok
        start = tok.span
        if tok.kind == "var":
            self.i += 1
            return Var(int(tok.text[1:]), span=tok.span)
        if tok.kind == "num" or (self.at("-") and self.peek().kind == "num"):
            v, is_real = self.number()
            if self.at("@") and not is_real:
                self.i += 1
                size, size_real = self.number()
                if size_real or not 0 <= v < size:
                    self.error("finite constant i@m needs 0 <= i < m")
                return ConstFin(v, size, span=self._join(start))
            return self._tuple([(v, is_real)], self._join(start))
        if self.at("["):
            return self.posdef()
        if tok.kind == "kw":
            if tok.text in ("true", "false"):
                self.i += 1
                return ConstFin(int(tok.text == "true"), 2, span=tok.span)
            if tok.text == "skip":
                self.i += 1
                return ConstFin(0, 1, span=tok.span)
            if tok.text in ("sample", "sampler", "observe"):
                self.i += 1
                self.expect("(")
                e = self.seq()
                self.expect(")")
                cls = {"sample": Sample, "sampler": Sampler, "observe": Observe}[tok.text]
                return cls(e, span=self._join(start))
            self.error("unexpected keyword")
        if tok.kind == "ident":
            self.i += 1
            param = None
            if self.at("["):
                self.i += 1
                param, r = self.number()
                if r:
                    self.error("static parameter must be an integer")
                self.expect("]")
            self.expect("(")
            args = []
            if not self.at(")"):
                args.append(self.seq())
                while self.at(","):
                    self.i += 1
                    args.append(self.seq())
            self.expect(")")
            return BuiltinApp(tok.text, tuple(args), param, span=self._join(start))
        if self.at("("):
            return self.paren()
        self.error("expected an expression")

    def posdef(self):
        start = self.expect("[").span
        rows = []
        while True:
            self.expect("[")
            row = [float(self.number()[0])]
            while self.at(","):
                self.i += 1
                row.append(float(self.number()[0]))
            self.expect("]")
            rows.append(tuple(row))
            if not self.at(","):
                break
            self.i += 1
        self.expect("]")
        try:
            return ConstPosDef(tuple(rows), span=self._join(start))
        except ValueError as exc:
            raise ParseError([Diagnostic(str(exc), self._join(start), "posdef")]) from None


def parse(text):
    """Parse program text into a :class:`Term`; raises :class:`ParseError`."""
    return Parser(text).parse_program()


# -- printer -----------------------------------------------------------------

SEQ, ASSIGN, CONTROL, APP, ATOM = range(5)


def _num(v):
    if isinstance(v, float):
        r = repr(v)
        return r if any(ch in r for ch in ".eE") or "inf" in r or "nan" in r else r + ".0"
    return str(v)


def _level(t):
    if isinstance(t, Seq):
        return SEQ
    if isinstance(t, Assign):
        return ASSIGN
    if isinstance(t, (LetIn, Fn, If, While)):
        return CONTROL
    if isinstance(t, App):
        return APP
    return ATOM


def _wrap(t, need):
    s = pretty(t)
    return f"({s})" if _level(t) < need else s


def _open_right(t):
    """True when ``t`` ends in a binder body that would swallow a following ``;``."""
    if isinstance(t, (LetIn, Fn)):
        return True
    if isinstance(t, If):
        return _open_right(t.orelse)
    if isinstance(t, While):
        return _open_right(t.body)
    if isinstance(t, Assign):
        return _open_right(t.expr)
    return False


def pretty(t):
    """Render a term in concrete syntax; ``parse(pretty(t)) == t``."""
    if isinstance(t, ConstNat):
        vals = ", ".join(str(v) for v in t.values)
        return vals if len(t.values) == 1 else f"({vals})"
    if isinstance(t, ConstReal):
        vals = ", ".join(_num(float(v)) for v in t.values)
        return vals if len(t.values) == 1 else f"({vals})"
    if isinstance(t, ConstPosDef):
        return "[" + ", ".join("[" + ", ".join(_num(float(v)) for v in r) + "]" for r in t.rows) + "]"
    if isinstance(t, ConstFin):
        if t.size == 2:
            return "true" if t.value else "false"
        if t.size == 1:
            return "skip"
        return f"{t.value}@{t.size}"
    if isinstance(t, BuiltinApp):
        p = "" if t.param is None else f"[{t.param}]"
        return f"{t.op}{p}(" + ", ".join(pretty(a) for a in t.args) + ")"
    if isinstance(t, Var):
        return f"x{t.index}"
    if isinstance(t, Assign):
        return f"x{t.index} := {_wrap(t.expr, ASSIGN)}"
    if isinstance(t, Seq):
        first = f"({pretty(t.first)})" if _open_right(t.first) else _wrap(t.first, ASSIGN)
        return f"{first} ; {pretty(t.second)}"
    if isinstance(t, LetIn):
        return f"let x{t.index} = {pretty(t.bound)} in {pretty(t.body)}"
    if isinstance(t, Fn):
        return f"fn x{t.index} . {pretty(t.body)}"
    if isinstance(t, If):
        return f"if {pretty(t.cond)} then {pretty(t.then)} else {_wrap(t.orelse, ASSIGN)}"
    if isinstance(t, While):
        return f"while {pretty(t.cond)} do {_wrap(t.body, ASSIGN)}"
    if isinstance(t, App):
        f = _wrap(t.fun, APP)
        arg = pretty(t.arg)
        if isinstance(t.arg, (ConstNat, ConstReal)) and len(t.arg.values) > 1:
            return f"{f}{arg}"
        return f"{f}({arg})"
    if isinstance(t, Sample):
        return f"sample({pretty(t.expr)})"
    if isinstance(t, Sampler):
        return f"sampler({pretty(t.expr)})"
    if isinstance(t, Observe):
        return f"observe({pretty(t.expr)})"
    raise TypeError(f"not a term: {t!r}")


def strip_spans(t):
    """Copy of ``t`` with all spans removed (equality already ignores them)."""
    kw = {}
    for f in fields(t):
        v = getattr(t, f.name)
        if isinstance(v, Term):
            kw[f.name] = strip_spans(v)
        elif f.name == "args":
            kw[f.name] = tuple(strip_spans(a) for a in v)
    kw["span"] = None
    return replace(t, **kw)


# -- variables and substitution ---------------------------------------------

def assigned(t):
    """Slots a term overwrites at its top level (not under binders)."""
    if isinstance(t, Assign):
        return {t.index} | assigned(t.expr)
    if isinstance(t, Seq):
        return assigned(t.first) | assigned(t.second)
    if isinstance(t, (If,)):
        return assigned(t.then) | assigned(t.orelse)
    if isinstance(t, While):
        return assigned(t.body)
    return set()


def free_vars(t):
    if isinstance(t, Var):
        return {t.index}
    if isinstance(t, (ConstNat, ConstReal, ConstPosDef, ConstFin)):
        return set()
    if isinstance(t, BuiltinApp):
        return set().union(*[free_vars(a) for a in t.args]) if t.args else set()
    if isinstance(t, Assign):
        return free_vars(t.expr)
    if isinstance(t, Seq):
        return free_vars(t.first) | (free_vars(t.second) - assigned(t.first))
    if isinstance(t, LetIn):
        return free_vars(t.bound) | (free_vars(t.body) - {t.index})
    if isinstance(t, Fn):
        return free_vars(t.body) - {t.index}
    return set().union(*[free_vars(c) for c in children(t)])


def substitute(t, i, s):
    """Replace free occurrences of ``x_i`` in ``t`` by the closed term ``s``."""
    if free_vars(s):
        raise ValueError(f"substituted term must be closed, has free {sorted(free_vars(s))}")
    return _subst(t, i, s)


def _subst(t, i, s):
    if isinstance(t, Var):
        return s if t.index == i else t
    if isinstance(t, (ConstNat, ConstReal, ConstPosDef, ConstFin)):
        return t
    if isinstance(t, BuiltinApp):
        return replace(t, args=tuple(_subst(a, i, s) for a in t.args))
    if isinstance(t, LetIn):
        body = t.body if t.index == i else _subst(t.body, i, s)
        return replace(t, bound=_subst(t.bound, i, s), body=body)
    if isinstance(t, Fn):
        return t if t.index == i else replace(t, body=_subst(t.body, i, s))
    if isinstance(t, Seq):
        second = t.second if i in assigned(t.first) else _subst(t.second, i, s)
        return replace(t, first=_subst(t.first, i, s), second=second)
    kw = {f.name: _subst(getattr(t, f.name), i, s) for f in fields(t)
          if isinstance(getattr(t, f.name), Term)}
    return replace(t, **kw)
