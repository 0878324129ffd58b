"""Types, contexts, subtyping and the typing judgment.

The checker synthesizes, for a term and an environment of declared slot
types, the smallest context the term consumes together with its result (a
type, or a store for memory-manipulating terms). Every step is recorded in a
:class:`Derivation` so that a separate validator can re-check it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from . import syntax as S
from .syntax import Diagnostic, free_vars, substitute


# -- types -------------------------------------------------------------------

class Type:
    def __str__(self):
        return show_type(self)


@dataclass(frozen=True)
class Fin(Type):
    m: int

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("finite types need m >= 1")


@dataclass(frozen=True)
class IntV(Type):
    n: int = 1


@dataclass(frozen=True)
class RealV(Type):
    n: int = 1


@dataclass(frozen=True)
class PosDef(Type):
    n: int = 1


@dataclass(frozen=True)
class Bayes(Type):
    carrier: Type
    prior: S.Term

    def __post_init__(self):
        if free_vars(self.prior):
            raise TypingError(f"prior {S.pretty(self.prior)} has free variables "
                              f"{sorted(free_vars(self.prior))}", rule="bayes-closed")


@dataclass(frozen=True)
class Tensor(Type):
    left: Type
    right: Type


@dataclass(frozen=True)
class Arrow(Type):
    dom: Type
    cod: Type


@dataclass(frozen=True)
class MType(Type):
    inner: Type


UNIT = Fin(1)
BOOL = Fin(2)
GROUND = (Fin, IntV, RealV, PosDef)


def is_ground(t):
    return isinstance(t, GROUND)


def is_measure_type(t):
    """Every constructor except the function type."""
    if is_ground(t):
        return True
    if isinstance(t, Bayes):
        return is_measure_type(t.carrier)
    if isinstance(t, Tensor):
        return is_measure_type(t.left) and is_measure_type(t.right)
    if isinstance(t, MType):
        return is_measure_type(t.inner)
    return False


def _bayes_ground(t):
    return isinstance(t, Bayes) and is_ground(t.carrier)


def _oc_simple(t):
    return (is_ground(t) or _bayes_ground(t)
            or (isinstance(t, Tensor) and _bayes_ground(t.left) and _bayes_ground(t.right)))


def is_order_complete(t):
    if _oc_simple(t):
        return True
    if isinstance(t, Arrow):
        return _oc_simple(t.dom) and _oc_simple(t.cod)
    if isinstance(t, MType):
        return _oc_simple(t.inner)
    return False


def erase(t):
    """Drop every prior, keeping carriers."""
    if isinstance(t, Bayes):
        return erase(t.carrier)
    if isinstance(t, Tensor):
        return Tensor(erase(t.left), erase(t.right))
    if isinstance(t, Arrow):
        return Arrow(erase(t.dom), erase(t.cod))
    if isinstance(t, MType):
        return MType(erase(t.inner))
    return t


def has_m(t):
    if isinstance(t, MType):
        return True
    if isinstance(t, Bayes):
        return has_m(t.carrier)
    if isinstance(t, (Tensor,)):
        return has_m(t.left) or has_m(t.right)
    if isinstance(t, Arrow):
        return has_m(t.dom) or has_m(t.cod)
    return False


def subtype(a, b, axioms=()):
    """Reflexive-transitive closure of the generating subtyping rules plus ``axioms``."""
    if a == b:
        return True
    if isinstance(a, Bayes):
        if subtype(a.carrier, b, axioms):
            return True
        return any(lo == a and hi != a and subtype(hi, b, axioms) for lo, hi in axioms)
    if isinstance(a, Tensor) and isinstance(b, Tensor):
        return subtype(a.left, b.left, axioms) and subtype(a.right, b.right, axioms)
    if isinstance(a, Arrow) and isinstance(b, Arrow):
        return subtype(b.dom, a.dom, axioms) and subtype(a.cod, b.cod, axioms)
    return False


# -- printing and parsing types ---------------------------------------------

def show_type(t, prec=0):
    if isinstance(t, Fin):
        return {1: "unit", 2: "bool"}.get(t.m, f"fin({t.m})")
    if isinstance(t, IntV):
        return "int" if t.n == 1 else f"int^{t.n}"
    if isinstance(t, RealV):
        return "real" if t.n == 1 else f"real^{t.n}"
    if isinstance(t, PosDef):
        return f"posdef({t.n})"
    if isinstance(t, Bayes):
        return f"({show_type(t.carrier)}, {S.pretty(t.prior)})"
    if isinstance(t, MType):
        return f"M {show_type(t.inner, 2)}"
    if isinstance(t, Tensor):
        s = f"{show_type(t.left, 2)} * {show_type(t.right, 1)}"
        return f"({s})" if prec > 1 else s
    if isinstance(t, Arrow):
        s = f"{show_type(t.dom, 1)} -> {show_type(t.cod, 0)}"
        return f"({s})" if prec > 0 else s
    raise TypeError(f"not a type: {t!r}")


class _TypeParser(S.Parser):
    def arrow(self):
        left = self.tensor()
        if self.at("->"):
            self.i += 1
            return Arrow(left, self.arrow())
        return left

    def tensor(self):
        left = self.prefix()
        if self.at("*"):
            self.i += 1
            return Tensor(left, self.tensor())
        return left

    def prefix(self):
        if self.tok.kind == "ident" and self.tok.text == "M":
            self.i += 1
            return MType(self.prefix())
        return self.base()

    def _power(self):
        if self.at("^"):
            self.i += 1
            n, real = self.number()
            if real or n < 1:
                self.error("exponent must be a positive integer")
            return n
        return 1

    def _size_arg(self):
        self.expect("(")
        n, real = self.number()
        self.expect(")")
        if real or n < 1:
            self.error("size must be a positive integer")
        return n

    def base(self):
        tok = self.tok
        if tok.kind == "kw" and tok.text == "skip":
            self.error("expected a type")
        if tok.kind == "ident":
            self.i += 1
            name = tok.text
            if name == "unit":
                return UNIT
            if name == "bool":
                return BOOL
            if name == "int":
                return IntV(self._power())
            if name == "real":
                return RealV(self._power())
            if name == "fin":
                return Fin(self._size_arg())
            if name == "posdef":
                return PosDef(self._size_arg())
            self.i -= 1
            self.error("unknown type name")
        if tok.kind == "num":
            n, real = self.number()
            if real:
                self.error("finite type needs an integer")
            return Fin(n)
        if self.at("("):
            self.i += 1
            inner = self.arrow()
            if self.at(","):
                self.i += 1
                prior = self.seq()
                self.expect(")")
                try:
                    return Bayes(inner, prior)
                except TypingError as exc:
                    raise S.ParseError([Diagnostic(exc.message, tok.span, exc.rule)]) from None
            self.expect(")")
            return inner
        self.error("expected a type")


def parse_type(text):
    p = _TypeParser(text)
    t = p.arrow()
    if p.tok.kind != "eof":
        p.error("unexpected trailing input")
    return t


# -- contexts ----------------------------------------------------------------

class ContextError(ValueError):
    pass


class Context:
    """A map from slot indices to types, unit almost everywhere."""

    __slots__ = ("_map",)

    def __init__(self, mapping=None):
        items = dict(mapping or {})
        for i in items:
            if not isinstance(i, int) or i < 0:
                raise ValueError(f"slot indices are nonnegative integers, got {i!r}")
        self._map = {i: t for i, t in sorted(items.items()) if t != UNIT}

    def __call__(self, i):
        return self._map.get(i, UNIT)

    get = __call__

    @property
    def supp(self):
        return frozenset(self._map)

    def items(self):
        return self._map.items()

    def as_dict(self):
        return dict(self._map)

    def __len__(self):
        return len(self._map)

    def __eq__(self, other):
        return isinstance(other, Context) and self._map == other._map

    def __hash__(self):
        return hash(tuple(self._map.items()))

    def __repr__(self):
        return f"Context({self})"

    def __str__(self):
        return "[" + ", ".join(f"x{i}: {show_type(t)}" for i, t in self._map.items()) + "]"

    def compatible(self, other):
        return all(self(i) == other(i) for i in self.supp & other.supp)

    def union(self, other):
        if not self.compatible(other):
            bad = sorted(i for i in self.supp & other.supp if self(i) != other(i))
            raise ContextError(f"contexts disagree at slots {bad}")
        return Context({**self._map, **other._map})

    def diff(self, other):
        return Context({i: t for i, t in self._map.items() if i not in other.supp})

    def with_slot(self, i, t):
        m = dict(self._map)
        m[i] = t
        return Context(m)

    def without(self, *slots):
        return Context({i: t for i, t in self._map.items() if i not in slots})

    def as_type(self):
        """The tensor of the slot types in index order (unit when empty)."""
        ts = list(self._map.values())
        if not ts:
            return UNIT
        out = ts[-1]
        for t in reversed(ts[:-1]):
            out = Tensor(t, out)
        return out

    def is_order_complete(self):
        ts = list(self._map.values())
        if len(ts) <= 1:
            return not ts or is_order_complete(ts[0])
        return len(ts) == 2 and all(_bayes_ground(t) for t in ts)


EMPTY = Context()


def ctx_compatible(g1, g2):
    return g1.compatible(g2)


def ctx_union(g1, g2):
    return g1.union(g2)


def ctx_diff(g1, g2):
    return g1.diff(g2)


def parse_context(text):
    """``"x0: real, x1: (bool, sample(bernoulli(0.5)))"`` -> Context."""
    out, depth, start = {}, 0, 0
    parts = []
    for k, ch in enumerate(text):
        if ch in "([":
            depth += 1
        elif ch in ")]":
            depth -= 1
        elif ch == "," and depth == 0:
            parts.append(text[start:k])
            start = k + 1
    parts.append(text[start:])
    for part in parts:
        if not part.strip():
            continue
        name, sep, ty = part.partition(":")
        name = name.strip()
        if not sep or not name.startswith("x") or not name[1:].isdigit():
            raise S.ParseError([Diagnostic(f"bad context entry {part.strip()!r}", None, "context")])
        out[int(name[1:])] = parse_type(ty)
    return Context(out)


# -- derivations -------------------------------------------------------------

class TypingError(Diagnostic):
    pass


@dataclass(frozen=True, eq=False)
class Derivation:
    rule: str
    ctx: Context
    term: S.Term
    result: object          # Type, or Context for a store
    premises: tuple = ()
    info: dict = field(default_factory=dict)

    @property
    def is_store(self):
        return isinstance(self.result, Context)

    @property
    def type(self):
        return self.result.as_type() if self.is_store else self.result

    def show_result(self):
        if self.is_store:
            return "store " + str(self.result) if len(self.result) else "unit"
        return show_type(self.result)

    def walk(self):
        yield self
        for p in self.premises:
            yield from p.walk()

    def to_dict(self):
        def enc(v):
            if isinstance(v, Type):
                return show_type(v)
            if isinstance(v, Context):
                return str(v)
            if isinstance(v, S.Term):
                return S.pretty(v)
            if isinstance(v, (list, tuple)):
                return [enc(x) for x in v]
            if isinstance(v, dict):
                return {str(k): enc(x) for k, x in v.items()}
            return v
        return {"rule": self.rule, "ctx": str(self.ctx), "term": S.pretty(self.term),
                "result": self.show_result(), "info": enc(self.info),
                "premises": [p.to_dict() for p in self.premises]}

    def pretty(self, indent=0):
        pad = "  " * indent
        lines = [f"{pad}{self.rule}: {self.ctx} |- {S.pretty(self.term)} : {self.show_result()}"]
        for p in self.premises:
            lines.append(p.pretty(indent + 1))
        return "\n".join(lines)


def _fail(msg, term, rule):
    raise TypingError(msg, term.span if term is not None else None, rule)


NUMERIC_LITERALS = (S.ConstNat, S.ConstReal)


class Checker:
    """Synthesizing typechecker.

    ``builtins`` is a signature table (see :mod:`oppl.builtins`); ``axioms``
    is a list of declared ``(lower, upper)`` subtyping pairs between
    Bayesian types.
    """

    def __init__(self, builtins=None, axioms=()):
        if builtins is None:
            from .builtins import default_table
            builtins = default_table()
        self.builtins = builtins
        self.axioms = tuple(axioms)

    # public entry point
    def check(self, ctx, term):
        """Typecheck ``term`` against the declared context ``ctx``.

        The returned derivation's context lists exactly the slots the term
        consumes; declared slots it does not touch are left out.
        """
        d = self.synth(term, ctx.as_dict())
        mismatched = {}
        for i in d.ctx.supp & ctx.supp:
            if ctx(i) != d.ctx(i):
                if not subtype(ctx(i), d.ctx(i), self.axioms):
                    _fail(f"slot x{i} is declared {show_type(ctx(i))} but used at "
                          f"{show_type(d.ctx(i))}", term, "context-mismatch")
                mismatched[i] = ctx(i)
        if mismatched:
            new_ctx = Context({**d.ctx.as_dict(), **mismatched})
            d = Derivation("subsume", new_ctx, term, d.result, (d,), {"inputs": mismatched})
        return d

    def subtype(self, a, b):
        return subtype(a, b, self.axioms)

    # helpers
    def _coerce(self, d, target):
        if d.result == target:
            return d
        return Derivation("subsume", d.ctx, d.term, target, (d,), {"from": d.result})

    def _expect_type(self, d, what):
        if d.is_store:
            _fail(f"{what} must produce a value, not a store", d.term, "store-value")
        return d.result

    def _literal(self, term, expected):
        """Retype a numeric literal at a real or posdef(1) expectation."""
        if not isinstance(term, NUMERIC_LITERALS) or len(term.values) != 1:
            return None
        v = float(term.values[0])
        if expected == RealV(1):
            return Derivation("const-real", EMPTY, term, RealV(1), (), {"value": (v,), "coerced": True})
        if expected == PosDef(1) and v >= 0:
            return Derivation("const-posdef", EMPTY, term, PosDef(1), (), {"value": ((v,),), "coerced": True})
        return None

    def _arg(self, term, env, expected):
        d = self.synth(term, env)
        if not d.is_store and d.result != expected and not self.subtype(d.result, expected):
            lit = self._literal(term, expected)
            if lit is not None:
                return lit
        return d

    def _store_of(self, d):
        if d.is_store:
            return d.result
        if d.result == UNIT:
            return EMPTY
        return None

    def synth(self, t, env):
        method = getattr(self, "_t_" + type(t).__name__)
        return method(t, env)

    # constants
    def _t_ConstNat(self, t, env):
        return Derivation("const-int", EMPTY, t, IntV(len(t.values)), (), {"value": t.values})

    def _t_ConstReal(self, t, env):
        return Derivation("const-real", EMPTY, t, RealV(len(t.values)), (), {"value": t.values})

    def _t_ConstPosDef(self, t, env):
        return Derivation("const-posdef", EMPTY, t, PosDef(len(t.rows)), (), {"value": t.rows})

    def _t_ConstFin(self, t, env):
        return Derivation("const-fin", EMPTY, t, Fin(t.size), (), {"value": t.value})

    def _t_Var(self, t, env):
        if t.index not in env:
            _fail(f"x{t.index} has no type in scope; declare it in the context", t, "var-untyped")
        ty = env[t.index]
        return Derivation("var", Context({t.index: ty}), t, ty)

    def _t_BuiltinApp(self, t, env):
        sigs = self.builtins.signatures(t.op, t.param)
        if sigs is None:
            _fail(f"unknown built-in {t.op!r}", t, "builtin-unknown")
        errors = []
        for sig in sigs:
            if len(sig.args) != len(t.args):
                errors.append(f"{sig} takes {len(sig.args)} arguments")
                continue
            prem = [self._arg(a, env, want) for a, want in zip(t.args, sig.args)]
            if any(p.is_store for p in prem):
                errors.append("arguments must be values")
                continue
            if all(self.subtype(p.result, want) for p, want in zip(prem, sig.args)):
                break
            got = ", ".join(show_type(p.result) for p in prem)
            errors.append(f"{sig} does not accept ({got})")
        else:
            _fail(f"{t.op}: " + "; ".join(errors), t, "builtin-arg-type")
        for a in range(len(prem)):
            for b in range(a + 1, len(prem)):
                common = prem[a].ctx.supp & prem[b].ctx.supp
                if common:
                    _fail(f"arguments {a + 1} and {b + 1} of {t.op} both consume "
                          f"{', '.join(f'x{i}' for i in sorted(common))}", t, "builtin-disjoint")
        ctx = EMPTY
        for p in prem:
            ctx = ctx.union(p.ctx)
        prem = tuple(self._coerce(p, want) for p, want in zip(prem, sig.args))
        return Derivation("builtin", ctx, t, sig.result, prem, {"op": t.op, "signature": str(sig)})

    def _t_Assign(self, t, env):
        d = self.synth(t.expr, env)
        ty = self._expect_type(d, "the right-hand side of an assignment")
        i = t.index
        if not d.ctx.supp and is_measure_type(ty) and ty != UNIT:
            prior = t.expr
            return Derivation("assign-bayes", Context({i: ty}), t, Context({i: Bayes(ty, prior)}),
                              (d,), {"slot": i})
        if i in d.ctx.supp and d.ctx(i) != ty:
            _fail(f"x{i} is read at {show_type(d.ctx(i))} but assigned {show_type(ty)}",
                  t, "assign-slot-type")
        return Derivation("assign", d.ctx.with_slot(i, ty), t, Context({i: ty}), (d,),
                          {"slot": i, "reads_slot": i in d.ctx.supp})

    def _t_Seq(self, t, env):
        d1 = self.synth(t.first, env)
        delta1 = self._store_of(d1)
        if delta1 is None:
            _fail(f"the left side of ';' has type {show_type(d1.result)}; it must produce "
                  "a store or unit", t.first, "seq-value")
        def attempt(overlay):
            d2 = self.synth(t.second, {**env, **overlay})
            # make the store e1 hands over match what e2 consumes
            coerced = {}
            for i in delta1.supp & d2.ctx.supp:
                if delta1(i) != d2.ctx(i):
                    if not self.subtype(delta1(i), d2.ctx(i)):
                        _fail(f"x{i} is stored as {show_type(delta1(i))} but read as "
                              f"{show_type(d2.ctx(i))}", t, "seq-compat-mid")
                    coerced[i] = d2.ctx(i)
            return d2, coerced

        overlay = delta1.as_dict()
        try:
            d2, coerced = attempt(overlay)
            erased = False
        except TypingError as first_error:
            overlay = {i: erase(ty) for i, ty in delta1.items()}
            try:
                d2, coerced = attempt(overlay)
                erased = True
            except TypingError:
                raise first_error from None
        g1, g2 = d1.ctx, d2.ctx
        if coerced:
            delta1 = Context({**delta1.as_dict(), **coerced})
            d1 = Derivation("subsume", d1.ctx, d1.term, delta1 if d1.is_store else d1.result,
                            (d1,), {"outputs": coerced})
        g2_rest = g2.diff(delta1)
        if not g1.compatible(g2_rest):
            _fail("the two sides of ';' read a slot at different types", t, "seq-compat-in")
        shared = g1.supp & g2_rest.supp
        if shared:
            _fail(f"both sides of ';' consume {', '.join(f'x{i}' for i in sorted(shared))}",
                  t, "seq-linearity")
        passthrough = delta1.diff(g2)
        ctx = g1.union(g2_rest)
        if d2.is_store or d2.result == UNIT:
            delta2 = self._store_of(d2)
            if not delta2.compatible(passthrough):
                _fail("the two sides of ';' store different types in one slot", t, "seq-compat-out")
            overlap = delta2.supp & passthrough.supp
            if overlap:
                _fail(f"both sides of ';' output {', '.join(f'x{i}' for i in sorted(overlap))}",
                      t, "seq-output-overlap")
            result = passthrough.union(delta2)
            if not d2.is_store and not passthrough.supp:
                result = UNIT
        else:
            if passthrough.supp:
                _fail(f"';' would return both a value and the store "
                      f"{passthrough}", t, "seq-mixed-result")
            result = d2.result
        return Derivation("seq", ctx, t, result, (d1, d2),
                          {"erased": erased, "overlay": overlay,
                           "passthrough": sorted(passthrough.supp),
                           "left_store": sorted(delta1.supp)})

    def _t_LetIn(self, t, env):
        i = t.index
        d1 = self.synth(t.bound, env)
        s = self._expect_type(d1, "a let-bound expression")
        if not d1.ctx.supp and is_measure_type(s) and s != UNIT:
            s = Bayes(s, t.bound)
            d1 = Derivation("bayes-intro", EMPTY, t.bound, s, (d1,))
        d2 = self.synth(t.body, {**env, i: s})
        gamma, delta = d1.ctx, d2.ctx.without(i)
        common = gamma.supp & delta.supp
        if common:
            _fail(f"x{', x'.join(map(str, sorted(common)))} consumed by both the bound "
                  "expression and the body", t, "let-disjoint")
        used = d2.ctx(i)
        if used == UNIT and s != UNIT:
            _fail(f"the body never consumes x{i} of type {show_type(s)}", t, "let-unused")
        if used != s and not self.subtype(s, used):
            _fail(f"x{i} is bound to {show_type(s)} but used at {show_type(used)}", t, "let-slot-type")
        return Derivation("let", gamma.union(delta), t, d2.result, (d1, d2), {"slot": i})

    def _t_Fn(self, t, env):
        i = t.index
        d = self.synth(t.body, env)
        ty = self._expect_type(d, "a function body")
        param = d.ctx(i)
        return Derivation("fn", d.ctx.without(i), t, Arrow(param, ty), (d,), {"slot": i})

    def _t_App(self, t, env):
        df = self.synth(t.fun, env)
        ft = self._expect_type(df, "an applied expression")
        while isinstance(ft, Bayes):
            ft = ft.carrier
        if not isinstance(ft, Arrow):
            _fail(f"cannot apply a value of type {show_type(df.result)}", t, "app-not-function")
        df = self._coerce(df, ft)
        da = self._arg(t.arg, env, ft.dom)
        at = self._expect_type(da, "a function argument")
        if not self.subtype(at, ft.dom):
            _fail(f"argument has type {show_type(at)}, expected {show_type(ft.dom)}", t, "app-arg-type")
        common = df.ctx.supp & da.ctx.supp
        if common:
            _fail(f"function and argument both consume x{', x'.join(map(str, sorted(common)))}",
                  t, "app-disjoint")
        da = self._coerce(da, ft.dom)
        return Derivation("app", da.ctx.union(df.ctx), t, ft.cod, (da, df))

    def _join(self, a, b):
        if a == b:
            return a
        if self.subtype(a, b):
            return b
        if self.subtype(b, a):
            return a
        if erase(a) == erase(b):
            return erase(a)
        return None

    def _meet_ctx(self, ctxs, term, rule):
        """Union of premise contexts, keeping the most specific type per slot."""
        out = {}
        for c in ctxs:
            for i, ty in c.items():
                if i not in out or out[i] == ty:
                    out[i] = ty
                elif self.subtype(ty, out[i]):
                    out[i] = ty
                elif not self.subtype(out[i], ty):
                    _fail(f"x{i} is used at {show_type(out[i])} and {show_type(ty)}", term, rule)
        return Context(out)

    def _test(self, t, env, rule):
        dc = self.synth(t, env)
        ct = self._expect_type(dc, "a test")
        if not self.subtype(ct, BOOL):
            _fail(f"test has type {show_type(ct)}, expected bool", t, rule)
        return self._coerce(dc, BOOL)

    def _t_If(self, t, env):
        dc = self._test(t.cond, env, "if-test-bool")
        da, db = self.synth(t.then, env), self.synth(t.orelse, env)
        sa, sb = self._store_of(da), self._store_of(db)
        stores = (da.is_store or db.is_store) and sa is not None and sb is not None
        if not stores and (da.is_store or db.is_store):
            _fail("one branch returns a store and the other a value", t, "if-branch-type")
        gamma = self._meet_ctx([dc.ctx, da.ctx, db.ctx], t, "if-context")
        if stores:
            slots = sorted(sa.supp | sb.supp)
            out = {}
            for i in slots:
                ta = sa(i) if i in sa.supp else gamma(i)
                tb = sb(i) if i in sb.supp else gamma(i)
                j = self._join(ta, tb)
                if j is None:
                    _fail(f"branches store {show_type(ta)} and {show_type(tb)} in x{i}", t,
                          "if-branch-type")
                out[i] = j
            result = Context(out)
            da = self._coerce(da, Context({i: out[i] for i in sa.supp})) if da.is_store else da
            db = self._coerce(db, Context({i: out[i] for i in sb.supp})) if db.is_store else db
        else:
            result = self._join(da.result, db.result)
            if result is None:
                _fail(f"branches have types {show_type(da.result)} and {show_type(db.result)}",
                      t, "if-branch-type")
            da, db = self._coerce(da, result), self._coerce(db, result)
        if not gamma.is_order_complete():
            _fail(f"the context {gamma} of a conditional is not order-complete", t, "if-order-complete")
        return Derivation("if", gamma, t, result, (dc, da, db), {"store": stores})

    def _t_While(self, t, env):
        try:
            return self._while(t, env)
        except TypingError as first:
            erased_env = {i: erase(ty) for i, ty in env.items()}
            if erased_env == env:
                raise
            try:
                return self._while(t, erased_env)
            except TypingError:
                raise first from None

    def _while(self, t, env):
        dc = self._test(t.cond, env, "while-test-bool")
        db = self.synth(t.body, env)
        sb = self._store_of(db)
        if sb is None:
            _fail(f"a loop body must produce a store, not {show_type(db.result)}", t.body, "while-body")
        gamma = self._meet_ctx([dc.ctx, db.ctx], t, "while-context")
        # slots the body writes without reading still belong to the loop state
        extra = {i: erase(ty) for i, ty in sb.items() if i not in gamma.supp}
        if extra:
            gamma = Context({**gamma.as_dict(), **extra})
        out = {}
        for i, ty in sb.items():
            if ty != gamma(i):
                if not self.subtype(ty, gamma(i)):
                    _fail(f"the body stores {show_type(ty)} in x{i}, expected {show_type(gamma(i))}",
                          t, "while-body")
            out[i] = gamma(i)
        if db.is_store:
            db = self._coerce(db, Context(out))
        if not gamma.is_order_complete():
            _fail(f"the context {gamma} of a loop is not order-complete", t, "while-order-complete")
        return Derivation("while", gamma, t, gamma, (dc, db))

    def _t_Sampler(self, t, env):
        d = self.synth(t.expr, env)
        ty = self._expect_type(d, "the argument of sampler")
        if not is_measure_type(ty):
            _fail(f"sampler needs a measure type, got {show_type(ty)}", t, "sampler-measure")
        return Derivation("sampler", d.ctx, t, MType(ty), (d,))

    def _t_Sample(self, t, env):
        d = self.synth(t.expr, env)
        ty = self._expect_type(d, "the argument of sample")
        base = ty
        while isinstance(base, Bayes):
            base = base.carrier
        if not isinstance(base, MType):
            _fail(f"sample needs an M type, got {show_type(ty)}", t, "sample-arg-M")
        if not is_measure_type(base.inner):
            _fail(f"sample needs M of a measure type, got {show_type(ty)}", t, "sample-measure")
        return Derivation("sample", d.ctx, t, base.inner, (self._coerce(d, base),))

    def _t_Observe(self, t, env):
        d = self.synth(t.expr, env)
        ctx = d.ctx
        if len(ctx) != 1 or not isinstance(next(iter(ctx.items()))[1], Bayes):
            _fail(f"observe needs exactly one slot of Bayesian type in its context, got {ctx}",
                  t, "observe-bayes-context")
        (i, bt), = ctx.items()
        ty = self._expect_type(d, "an observed expression")
        if not (is_measure_type(ty) and is_measure_type(bt.carrier)):
            _fail("observe needs measure types on both sides", t, "observe-measure")
        if not is_order_complete(bt.carrier):
            _fail(f"the prior's carrier {show_type(bt.carrier)} is not order-complete",
                  t, "observe-order-complete")
        evidence = Bayes(ty, substitute(t.expr, i, bt.prior))
        return Derivation("observe", ctx, t, Arrow(evidence, bt), (d,), {"slot": i})


def typecheck(ctx, term, builtins=None, axioms=()):
    """Typecheck ``term`` in the declared context; returns a :class:`Derivation`."""
    if isinstance(term, str):
        term = S.parse(term)
    if isinstance(ctx, str):
        ctx = parse_context(ctx)
    return Checker(builtins, axioms).check(ctx or EMPTY, term)


# -- independent re-checking -------------------------------------------------

def validate(d, axioms=()):
    """Re-check the side conditions of every node; returns a list of problems."""
    problems = []

    def bad(node, msg):
        problems.append(f"{node.rule} at {S.pretty(node.term)}: {msg}")

    def store(n):
        if n.is_store:
            return n.result
        return EMPTY if n.result == UNIT else None

    for n in d.walk():
        ps = n.premises
        if n.rule == "var":
            if len(n.ctx) > 1 or n.ctx(n.term.index) != n.result:
                bad(n, "variable context must be the singleton slot")
        elif n.rule.startswith("const-"):
            if n.ctx.supp:
                bad(n, "constants have the empty context")
        elif n.rule == "builtin":
            for a in range(len(ps)):
                for b in range(a + 1, len(ps)):
                    if ps[a].ctx.supp & ps[b].ctx.supp:
                        bad(n, "argument contexts overlap")
        elif n.rule == "bayes-intro":
            if ps[0].ctx.supp or not is_measure_type(ps[0].result):
                bad(n, "Bayesian types need a closed measure-typed premise")
        elif n.rule == "assign-bayes":
            if ps[0].ctx.supp or not is_measure_type(ps[0].result):
                bad(n, "Bayesian assignment needs a closed measure-typed premise")
        elif n.rule == "assign":
            i = n.info["slot"]
            if i in ps[0].ctx.supp and ps[0].ctx(i) != ps[0].result:
                bad(n, "slot read at a different type than assigned")
        elif n.rule == "let":
            i = n.info["slot"]
            if ps[0].ctx.supp & ps[1].ctx.without(i).supp:
                bad(n, "supports of the bound expression and body overlap")
        elif n.rule == "seq":
            d1, d2 = ps
            delta1, g1, g2 = store(d1), d1.ctx, d2.ctx
            if delta1 is None:
                bad(n, "left side is not a store")
                continue
            if not delta1.compatible(g2):
                bad(n, "Delta1 and Gamma2 incompatible")
            if not g1.compatible(g2.diff(delta1)):
                bad(n, "Gamma1 and Gamma2 - Delta1 incompatible")
            if g1.supp & g2.diff(delta1).supp:
                bad(n, "a slot is consumed twice")
            delta2 = store(d2)
            if delta2 is not None and not delta2.compatible(delta1.diff(g2)):
                bad(n, "Delta2 and Delta1 - Gamma2 incompatible")
            if n.ctx != g1.union(g2.diff(delta1)):
                bad(n, "conclusion context is not Gamma1 + (Gamma2 - Delta1)")
        elif n.rule == "fn":
            if n.info["slot"] in n.ctx.supp:
                bad(n, "bound slot leaks into the context")
        elif n.rule == "app":
            if ps[0].ctx.supp & ps[1].ctx.supp:
                bad(n, "function and argument contexts overlap")
        elif n.rule in ("if", "while"):
            if not n.ctx.is_order_complete():
                bad(n, "context not order-complete")
            if ps[0].result != BOOL:
                bad(n, "test is not boolean")
        elif n.rule == "sampler":
            if not is_measure_type(ps[0].result):
                bad(n, "sampler of a non-measure type")
        elif n.rule == "sample":
            if not isinstance(ps[0].result, MType) or not is_measure_type(ps[0].result.inner):
                bad(n, "sample of a non-M type")
        elif n.rule == "observe":
            ((i, bt),) = n.ctx.items()
            if not isinstance(bt, Bayes) or not is_order_complete(bt.carrier):
                bad(n, "observe context must be one order-complete Bayesian slot")
            if n.result.cod != bt:
                bad(n, "codomain is not the prior type")
        elif n.rule == "subsume":
            src = ps[0].result
            if isinstance(src, Context) and isinstance(n.result, Context):
                ok = all(subtype(src(i), n.result(i), axioms) for i in src.supp | n.result.supp)
            elif isinstance(src, Context):
                ok = False
            else:
                ok = subtype(src, n.result, axioms)
            if not ok:
                bad(n, "result is not a supertype of the premise's")
            for i, ty in n.info.get("inputs", {}).items():
                if not subtype(ty, ps[0].ctx(i), axioms):
                    bad(n, f"input slot x{i} is not a subtype")
    return problems


def linearity_violations(d):
    """Slots consumed by more than one premise of a node (branches of if/while excepted)."""
    out = []
    for n in d.walk():
        if n.rule in ("if", "while", "subsume"):
            continue
        seen = set()
        for k, p in enumerate(n.premises):
            slots = set(p.ctx.supp)
            if n.rule == "let" and k == 1:
                slots.discard(n.info["slot"])
            if n.rule == "seq" and k == 1:
                slots -= set(store(n.premises[0]) or ())
            dup = seen & slots
            if dup:
                out.append((n.rule, S.pretty(n.term), sorted(dup)))
            seen |= slots
    return out


def store(n):
    if n.is_store:
        return n.result.supp
    return frozenset() if n.result == UNIT else None
