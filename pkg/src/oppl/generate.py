"""Random well-typed programs over bool and int, for property suites.

Candidates come from a small grammar biased toward well-typed terms and are
kept only if the typechecker accepts them. Branch and loop tests never sample,
so each test is deterministic given the store.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import syntax as S
from . import types as T

PROBS = (0.1, 0.25, 0.5, 0.75, 0.9)


@dataclass
class Program:
    ctx: T.Context
    term: S.Term
    derivation: T.Derivation

    @property
    def text(self):
        return S.pretty(self.term)


class Generator:
    def __init__(self, seed=0, int_max=4, slots=4, max_depth=6):
        self.rng = np.random.default_rng(seed)
        self.int_max = int_max
        self.slots = slots
        self.max_depth = max_depth
        self.checker = T.Checker()

    # small helpers
    def _pick(self, seq):
        return seq[int(self.rng.integers(len(seq)))]

    def _coin(self, p):
        return bool(self.rng.random() < p)

    def _fresh(self, env):
        free = [i for i in range(self.slots) if i not in env]
        return self._pick(free) if free else None

    def const(self, ty):
        if ty == T.BOOL:
            return S.ConstFin(int(self._coin(0.5)), 2)
        return S.ConstNat((int(self.rng.integers(self.int_max + 1)),))

    def dist(self, ty):
        if ty == T.BOOL:
            return S.BuiltinApp("bernoulli", (S.ConstReal((self._pick(PROBS),)),))
        return S.BuiltinApp("uniform_int", (), int(self.rng.integers(1, self.int_max + 2)))

    # expressions; ``budget`` bounds the AST depth of the result
    def leaf(self, ty, budget, env, pure=False):
        vars_ = [i for i, t in env.items() if t == ty]
        need = 3 if ty == T.BOOL else 2
        if vars_ and self._coin(0.6):
            return S.Var(self._pick(vars_))
        if not pure and budget >= need and self._coin(0.5):
            return S.Sample(self.dist(ty))
        return self.const(ty)

    def expr(self, ty, budget, env, pure=False):
        """An expression of ground type ``ty``; ``env`` maps slot -> ground type in scope."""
        if budget <= 1 or self._coin(0.15):
            return self.leaf(ty, budget, env, pure)
        kinds = ["op", "op", "let", "if"] + ([] if pure else ["sample", "sampler", "app"])
        kind = self._pick(kinds)
        d = budget - 1
        if kind == "op":
            if ty == T.BOOL:
                op = self._pick(["not", "and", "or", "xor", "eq", "lt", "eqb"])
                if op == "not":
                    return S.BuiltinApp("not", (self.expr(T.BOOL, d, env, pure),))
                if op in ("eq", "lt"):
                    return S.BuiltinApp(op, self._two(T.IntV(1), d, env, pure))
                return S.BuiltinApp("eq" if op == "eqb" else op, self._two(T.BOOL, d, env, pure))
            return S.BuiltinApp(self._pick(["add", "mul"]), self._two(ty, d, env, pure))
        if kind == "sample":
            return self.leaf(ty, budget, {}, pure)
        if kind == "sampler" and budget >= 3:
            return S.Sample(S.Sampler(self.expr(ty, budget - 2, env)))
        k = self._fresh(env)
        if kind == "let" and k is not None:
            t1 = self._pick([T.BOOL, T.IntV(1)])
            bound = self.expr(t1, d, env, pure)
            body = self.expr(ty, d, {**env, k: t1}, pure)
            return S.LetIn(k, bound, body)
        if kind == "app" and k is not None and budget >= 3:
            t1 = self._pick([T.BOOL, T.IntV(1)])
            self._params[k] = t1
            body = self.expr(ty, budget - 2, {**env, k: t1})
            return S.App(S.Fn(k, body), self.expr(t1, d, env))
        test = self.expr(T.BOOL, min(d, 3), env, pure=True)
        return S.If(test, self.expr(ty, d, env, pure), self.expr(ty, d, env, pure))

    def _two(self, ty, d, env, pure):
        return (self.expr(ty, d, env, pure), self.expr(ty, d, env, pure))

    # statements over a single slot (keeps conditional contexts order-complete)
    def stmt(self, slot, ty, budget):
        env = {slot: ty}
        kinds = ["assign", "assign", "seq", "if"] + (["while", "while"] if budget >= 5 else [])
        kind = self._pick(kinds) if budget > 2 else "assign"
        d = budget - 1
        if kind == "assign":
            return S.Assign(slot, self.expr(ty, d, env))
        if kind == "seq":
            return S.Seq(self.stmt(slot, ty, d), self.stmt(slot, ty, d))
        if kind == "if":
            test = self.expr(T.BOOL, min(d, 3), env, pure=True)
            return S.If(test, self.stmt(slot, ty, d), self.stmt(slot, ty, d))
        if ty == T.BOOL:
            body = S.Assign(slot, S.Sample(self.dist(T.BOOL)))
            return S.While(S.Var(slot), body)
        bound = S.ConstNat((int(self.rng.integers(1, self.int_max + 1)),))
        step = S.BuiltinApp("add", (S.Var(slot), self._pick([S.ConstNat((1,)), S.Sample(
            S.BuiltinApp("uniform_int", (), 2))])))
        return S.While(S.BuiltinApp("lt", (S.Var(slot), bound)), S.Assign(slot, step))

    def observe_program(self, budget):
        t0 = self._pick([T.BOOL, T.IntV(1)])
        k = self._fresh({})
        prior = self.expr(t0, min(budget - 1, 3), {})
        ty = self._pick([T.BOOL, T.IntV(1)])
        lik = self.expr(ty, budget - 2, {k: t0})
        return S.LetIn(k, prior, S.Observe(lik))

    def candidate(self):
        self._params = {}
        depth = int(self.rng.integers(3, self.max_depth + 1))
        shape = self._pick(["value", "value", "store", "observe"])
        if shape == "value":
            term = self.expr(self._pick([T.BOOL, T.IntV(1)]), depth, {})
            ctx = T.Context(dict(self._params))
        elif shape == "store":
            slot = int(self.rng.integers(self.slots))
            ty = self._pick([T.BOOL, T.IntV(1)])
            term = self.stmt(slot, ty, depth)
            ctx = T.Context({slot: ty})
        else:
            term = self.observe_program(depth)
            ctx = T.EMPTY
        return ctx, term

    def programs(self, n, max_tries=None):
        """Yield ``n`` well-typed programs whose syntax trees have depth at most ``max_depth``."""
        made, tries = 0, 0
        max_tries = max_tries or 200 * n
        while made < n:
            tries += 1
            if tries > max_tries:
                raise RuntimeError(f"only {made} of {n} candidates typechecked")
            ctx, term = self.candidate()
            if term_depth(term) > self.max_depth:
                continue
            try:
                d = self.checker.check(ctx, term)
            except T.TypingError:
                continue
            made += 1
            yield Program(ctx, term, d)


def term_depth(t):
    kids = S.children(t)
    return 1 + max((term_depth(k) for k in kids), default=0)
