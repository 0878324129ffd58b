"""Independent reference computations.

* :func:`enumerate` runs a first-order discrete program by expanding every
  random choice into a trace, with no linear algebra involved.
* :func:`gaussian_posterior` / :func:`gaussian_marginal` are the conjugate
  closed forms, each checkable against direct numerical integration.
* :func:`meet_bruteforce` finds the infimum that defines the branch
  restriction maps by solving one linear program per coordinate.
"""
from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.stats import norm

from . import syntax as S
from .builtins import GROUND_IMPLS


class OracleError(RuntimeError):
    pass


# -- enumeration semantics ------------------------------------------------------

@dataclass(frozen=True)
class Dist:
    """A finite distribution value (what an M-typed expression evaluates to)."""

    items: tuple  # ((atom, prob), ...), sorted by atom label

    @classmethod
    def of(cls, pairs):
        acc = defaultdict(float)
        for a, p in pairs:
            if p > 0:
                acc[a] += p
        return cls(tuple(sorted(acc.items(), key=lambda kv: repr(kv[0]))))


@dataclass
class TraceDistribution:
    """Weighted traces: (choices, probability, final value, final store)."""

    traces: list = field(default_factory=list)
    residual: float = 0.0

    @property
    def total(self):
        return float(sum(p for _, p, _, _ in self.traces))

    def marginal(self, slots=None):
        """Distribution of the final value, or of the given store slots (a tuple per trace)."""
        acc = defaultdict(float)
        for _, p, value, store in self.traces:
            key = value if slots is None else tuple(store.get(i) for i in slots)
            acc[key] += p
        return dict(acc)

    def condition(self, pred):
        """Renormalized distribution of traces whose final state satisfies ``pred``."""
        kept = [t for t in self.traces if pred(t[2], t[3])]
        z = sum(p for _, p, _, _ in kept)
        if z <= 0:
            raise OracleError("conditioning on an event of probability zero")
        return TraceDistribution([(c, p / z, v, s) for c, p, v, s in kept])


class Enumerator:
    """Trace semantics for the first-order discrete fragment.

    Ints live in ``0..int_max`` and out-of-range results are clamped to the
    nearest end, mirroring how the denotational side snaps to its atoms.
    """

    def __init__(self, int_max=8, max_depth=64):
        self.int_max = int_max
        self.max_depth = max_depth

    def _int(self, v):
        return min(max(int(round(v)), 0), self.int_max)

    def run(self, t, store):
        """List of (choices, prob, value, store) for ``t`` started in ``store``."""
        return getattr(self, "_e_" + type(t).__name__)(t, dict(store))

    def _single(self, value, store):
        return [((), 1.0, value, store)]

    def _e_ConstNat(self, t, store):
        if len(t.values) != 1:
            return self._single(tuple(self._int(v) for v in t.values), store)
        return self._single(self._int(t.values[0]), store)

    def _e_ConstReal(self, t, store):
        v = tuple(float(x) for x in t.values)
        return self._single(v[0] if len(v) == 1 else v, store)

    def _e_ConstPosDef(self, t, store):
        return self._single(float(t.rows[0][0]) if len(t.rows) == 1 else t.rows, store)

    def _e_ConstFin(self, t, store):
        return self._single(fin_atom(t.value, t.size), store)

    def _e_Var(self, t, store):
        if t.index not in store:
            raise OracleError(f"x{t.index} is unset")
        return self._single(store[t.index], store)

    def _args(self, args, store):
        """Cartesian expansion of argument traces, threading the store left to right."""
        out = [((), 1.0, (), store)]
        for a in args:
            nxt = []
            for c, p, vals, st in out:
                for c2, p2, v, st2 in self.run(a, st):
                    nxt.append((c + c2, p * p2, vals + (v,), st2))
            out = nxt
        return out

    def _e_BuiltinApp(self, t, store):
        out = []
        for c, p, vals, st in self._args(t.args, store):
            out.append((c, p, self.apply(t.op, vals, t.param), st))
        return out

    def apply(self, op, vals, param):
        if op in GROUND_IMPLS:
            v = GROUND_IMPLS[op](*vals)
            if isinstance(v, bool) or op in ("eq", "lt", "and", "or", "xor", "not"):
                return bool(v)
            if all(isinstance(x, int) and not isinstance(x, bool) for x in vals):
                return self._int(v)
            return float(v)
        if op == "bernoulli":
            q = min(max(float(vals[0]), 0.0), 1.0)
            return Dist.of([(False, 1 - q), (True, q)])
        if op == "uniform_fin":
            return Dist.of((fin_atom(k, param), 1 / param) for k in range(param))
        if op == "uniform_int":
            return Dist.of([(self._int(k), 1 / param) for k in range(param)])
        raise OracleError(f"{op} is outside the discrete fragment")

    def _e_Sample(self, t, store):
        out = []
        for c, p, dist, st in self.run(t.expr, store):
            for atom, q in dist.items:
                out.append((c + ((S.pretty(t), atom),), p * q, atom, st))
        return out

    def _e_Sampler(self, t, store):
        return [(c, p, Dist.of([(v, 1.0)]), st) for c, p, v, st in self.run(t.expr, store)]

    def _e_Assign(self, t, store):
        out = []
        for c, p, v, st in self.run(t.expr, store):
            st = dict(st)
            st[t.index] = v
            out.append((c, p, "*", st))
        return out

    def _e_Seq(self, t, store):
        out = []
        for c, p, _, st in self.run(t.first, store):
            for c2, p2, v2, st2 in self.run(t.second, st):
                out.append((c + c2, p * p2, v2, st2))
        return out

    def _e_LetIn(self, t, store):
        out = []
        for c, p, v, st in self.run(t.bound, store):
            inner = dict(st)
            inner[t.index] = v
            for c2, p2, v2, st2 in self.run(t.body, inner):
                out.append((c + c2, p * p2, v2, st2))
        return out

    def _e_If(self, t, store):
        out = []
        for c, p, b, st in self.run(t.cond, store):
            branch = t.then if b else t.orelse
            for c2, p2, v2, st2 in self.run(branch, st):
                out.append((c + c2, p * p2, v2, st2))
        return out

    def _e_While(self, t, store):
        live = [((), 1.0, "*", store)]
        done = []
        # at most max_depth runs of the body; the states after the last run are still tested
        for k in range(self.max_depth + 1):
            nxt = []
            for c, p, _, st in live:
                for c2, p2, b, st2 in self.run(t.cond, st):
                    if not b:
                        done.append((c + c2, p * p2, "*", st2))
                        continue
                    if k == self.max_depth:
                        continue
                    for c3, p3, _, st3 in self.run(t.body, st2):
                        nxt.append((c + c2 + c3, p * p2 * p3, "*", st3))
            live = _merge(nxt)
            if not live:
                break
        return done

    def _e_Observe(self, t, store):
        raise OracleError("use posterior() for observe programs")

    def _e_Fn(self, t, store):
        raise OracleError("functions are outside the first-order fragment")

    _e_App = _e_Fn


def fin_atom(k, m):
    """Atom naming shared with the denotational side: unit, bool, then plain indices."""
    if m == 1:
        return "*"
    return bool(k) if m == 2 else k


def ground_atoms(ty, int_max=8):
    """Atoms of a discrete ground type, named as on the denotational side."""
    from . import types as T
    if isinstance(ty, T.Fin):
        return [fin_atom(k, ty.m) for k in range(ty.m)]
    if isinstance(ty, T.IntV) and ty.n == 1:
        return list(range(int_max + 1))
    raise OracleError(f"{T.show_type(ty)} is outside the discrete fragment")


def _merge(traces):
    """Collapse live loop states with equal stores so unrolling stays polynomial."""
    acc = {}
    for c, p, v, st in traces:
        key = tuple(sorted(st.items()))
        if key in acc:
            c0, p0, v0, st0 = acc[key]
            acc[key] = (c0, p0 + p, v0, st0)
        else:
            acc[key] = (c, p, v, st)
    return list(acc.values())


def enumerate(term, cfg=None, max_depth=64, store=None):
    """Exact trace distribution of a closed first-order discrete program.

    Loops are unrolled at most ``max_depth`` times; mass still looping then
    is reported as ``residual``. Every other construct preserves mass, so
    the residual is whatever the finished traces do not account for.
    """
    if isinstance(term, str):
        term = S.parse(term)
    int_max = cfg.int_max if cfg is not None else 8
    en = Enumerator(int_max, max_depth)
    traces = en.run(term, store or {})
    out = TraceDistribution(traces)
    out.residual = max(0.0, 1.0 - out.total)
    return out


def observe_parts(term):
    """Split ``let xi = prior in observe(e)`` or ``xi := prior; observe(e)`` into (i, prior, e)."""
    if isinstance(term, str):
        term = S.parse(term)
    if isinstance(term, S.LetIn) and isinstance(term.body, S.Observe):
        return term.index, term.bound, term.body.expr
    if (isinstance(term, S.Seq) and isinstance(term.first, S.Assign)
            and isinstance(term.second, S.Observe)):
        return term.first.index, term.first.expr, term.second.expr
    raise OracleError("expected let xi = prior in observe(e) or xi := prior; observe(e)")


def posterior(term, y, cfg=None, max_depth=64):
    """Posterior over the prior's values given that the observed expression equals ``y``.

    Runs prior and likelihood jointly over traces, keeps those producing
    ``y`` and renormalizes. Returns a dict atom -> probability.
    """
    i, prior, obs = observe_parts(term)
    joint = enumerate(S.LetIn(i, prior, obs), cfg, max_depth)
    cond = joint.condition(lambda v, st: v == y)
    return {k[0]: p for k, p in cond.marginal(slots=(i,)).items()}


def marginal(term, cfg=None, max_depth=64):
    """Distribution of the observed expression under the prior (the evidence)."""
    i, prior, obs = observe_parts(term)
    return enumerate(S.LetIn(i, prior, obs), cfg, max_depth).marginal()


# -- conjugate Gaussian ---------------------------------------------------------

@dataclass(frozen=True)
class GaussParams:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise ValueError("sd must be positive")


def gaussian_marginal(prior, likelihood_sd):
    return GaussParams(prior.mean, float(np.hypot(prior.sd, likelihood_sd)))


def gaussian_posterior(prior, likelihood_sd, y):
    v0, v1 = prior.sd ** 2, likelihood_sd ** 2
    mean = (y * v0 + prior.mean * v1) / (v0 + v1)
    return GaussParams(float(mean), float(np.sqrt(v0 * v1 / (v0 + v1))))


def integrate_posterior(prior, likelihood_sd, y, step=1e-3, width=12.0):
    """Posterior moments by direct quadrature of prior(x) * lik(y | x)."""
    x = np.arange(prior.mean - width * prior.sd, prior.mean + width * prior.sd + step, step)
    w = norm.pdf(x, prior.mean, prior.sd) * norm.pdf(y, x, likelihood_sd)
    z = np.trapezoid(w, x)
    mean = np.trapezoid(w * x, x) / z
    var = np.trapezoid(w * (x - mean) ** 2, x) / z
    return GaussParams(float(mean), float(np.sqrt(var)))


def integrate_marginal(prior, likelihood_sd, step=1e-3, width=12.0):
    """Marginal moments of y = x + noise by quadrature over x and y."""
    s = float(np.hypot(prior.sd, likelihood_sd))
    x = np.arange(prior.mean - width * prior.sd, prior.mean + width * prior.sd + step, step)
    y = np.arange(prior.mean - width * s, prior.mean + width * s + 10 * step, 10 * step)
    py = np.trapezoid(norm.pdf(x, prior.mean, prior.sd)[None, :] * norm.pdf(y[:, None], x[None, :], likelihood_sd), x, axis=1)
    z = np.trapezoid(py, y)
    mean = np.trapezoid(py * y, y) / z
    var = np.trapezoid(py * (y - mean) ** 2, y) / z
    return GaussParams(float(mean), float(np.sqrt(var)))


def discretized_normal(params, points):
    """Bin masses of N(mean, sd) on grid points, computed with scipy's cdf."""
    points = np.asarray(points, dtype=float)
    mid = (points[1:] + points[:-1]) / 2
    cdf = norm.cdf(np.concatenate([[-np.inf], mid, [np.inf]]), params.mean, params.sd)
    return np.diff(cdf)


# -- lattice infimum by linear programming --------------------------------------

def meet_bruteforce(E, gamma, branch=True):
    """Coordinatewise infimum of {g : 0 <= g <= gamma, (E g)[branch] = (E gamma)[branch]}.

    ``E`` is (2 x n) with row 0 for false and row 1 for true. Each coordinate
    is minimized separately over the constraint polytope.
    """
    E = np.asarray(E, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    n = gamma.size
    if n > 4:
        raise ValueError("meet_bruteforce is limited to 4 atoms")
    if np.all(gamma == 0):
        return np.zeros(n)
    row = E[1 if branch else 0]
    out = np.zeros(n)
    for j in range(n):
        c = np.zeros(n)
        c[j] = 1.0
        res = linprog(c, A_eq=row[None, :], b_eq=[row @ gamma],
                      bounds=list(zip([0.0] * n, gamma)), method="highs")
        if not res.success:
            raise OracleError(res.message)
        out[j] = res.fun
    return np.where(np.abs(out) < 1e-12, 0.0, out)
