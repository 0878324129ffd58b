"""Verification suites shared by the command line and the test-suite.

Each suite returns a plain dict summary with a boolean ``passed`` and the
worst deviation it saw, so callers can print or assert on it.
"""
from __future__ import annotations

import itertools
import json
from pathlib import Path

import numpy as np

from . import kernels as K
from . import oracle as O
from . import syntax as S
from . import types as T
from .denote import (DiscretizationConfig, Evaluator, atom_label, leg_labels, output_table,
                     uniform_input, verify_theorem11)
from .finspace import MeasureVec, measure_space
from .generate import Generator

# probabilities in discrete programs land exactly on a 0.01-step real grid
DISCRETE_CFG = DiscretizationConfig(real_grid=(0.0, 1.0, 101), int_max=4)


def tv(p, q):
    """Total variation (sum of absolute differences) between two label -> mass tables."""
    keys = set(p) | set(q)
    return float(sum(abs(p.get(k, 0.0) - q.get(k, 0.0)) for k in keys))


# -- positivity and norm of generated programs -------------------------------------

def th11_suite(n=500, seed=0, cfg=DISCRETE_CFG, max_depth=6):
    failures, worst_norm, worst_entry = [], 0.0, 0.0
    for prog in Generator(seed=seed, int_max=cfg.int_max, max_depth=max_depth).programs(n):
        den = Evaluator(cfg).denote(prog.derivation)
        rep = verify_theorem11(den)
        worst_norm = max(worst_norm, rep.norm)
        worst_entry = min(worst_entry, rep.min_entry)
        if not rep.passed or rep.unchecked:
            failures.append({"program": prog.text, "ctx": str(prog.ctx), "witness": repr(rep.witness),
                             "unchecked": rep.unchecked})
    return {"suite": "th11", "programs": n, "passed": not failures, "max_norm": worst_norm,
            "min_entry": worst_entry, "failures": failures}


# -- enumeration oracle -----------------------------------------------------------

def is_observe_program(d):
    return isinstance(d.result, T.Arrow) and any(n.rule == "observe" for n in d.walk())


def denote_table(d, cfg):
    den = Evaluator(cfg).denote(d)
    return output_table(den, uniform_input(den))


def oracle_inputs(d, cfg):
    """(store, weight) pairs of the uniform product input over the consumed slots."""
    slots = [i for i, _ in d.ctx.items()]
    choices = [O.ground_atoms(T.erase(ty), cfg.int_max) for _, ty in d.ctx.items()]
    for combo in itertools.product(*choices):
        yield dict(zip(slots, combo)), float(np.prod([1.0 / len(c) for c in choices]))


def oracle_table(d, term, cfg, max_depth=64):
    out = {}
    for store, w in oracle_inputs(d, cfg):
        dist = O.enumerate(term, cfg, max_depth, store)
        if d.is_store:
            slots = sorted(d.result.supp)
            table = {", ".join(f"x{i}={atom_label(v)}" for i, v in zip(slots, key)): p
                     for key, p in dist.marginal(slots).items()}
        elif d.result == T.UNIT:
            table = {"*": dist.total}
        else:
            table = {atom_label(v): p for v, p in dist.marginal().items()}
        for k, p in table.items():
            out[k] = out.get(k, 0.0) + w * p
    return out


def posterior_tables(d, cfg):
    """Denotational (marginal, {evidence label: posterior table}) of a closed observe program."""
    den = Evaluator(cfg).denote(d)
    (_, op), = den.cod
    ev, prior = op.factors
    G = (den.matrix() @ uniform_input(den)).reshape(prior.size, ev.size)
    prior_labels = [atom_label(a) for a in prior.atoms]
    marg = {atom_label(a): float(m) for a, m in zip(ev.atoms, ev.generator.coeffs[ev.index])}
    posts = {atom_label(a): dict(zip(prior_labels, map(float, G[:, k]))) for k, a in enumerate(ev.atoms)}
    return marg, posts


def oracle_posterior_tables(term, cfg, max_depth=64):
    marg = {atom_label(y): p for y, p in O.marginal(term, cfg, max_depth).items() if p > 0}
    posts = {}
    for y in O.marginal(term, cfg, max_depth):
        posts[atom_label(y)] = {atom_label(x): p for x, p in O.posterior(term, y, cfg, max_depth).items()}
    return marg, posts


def compare_program(ctx, term, cfg=DISCRETE_CFG, max_depth=64):
    """Worst TV distance between the two semantics on one program (posteriors included)."""
    if isinstance(term, str):
        term = S.parse(term)
    d = T.Checker().check(T.parse_context(ctx) if isinstance(ctx, str) else ctx, term)
    if is_observe_program(d):
        m1, p1 = posterior_tables(d, cfg)
        m2, p2 = oracle_posterior_tables(term, cfg, max_depth)
        worst = tv(m1, m2)
        for y in set(p1) | set(p2):
            worst = max(worst, tv(p1.get(y, {}), p2.get(y, {})))
        return worst
    return tv(denote_table(d, cfg), oracle_table(d, term, cfg, max_depth))


def expected_document(ctx, term, cfg=DISCRETE_CFG, max_depth=64):
    """The sidecar contents for a corpus program, computed by the enumeration oracle only."""
    if isinstance(term, str):
        term = S.parse(term)
    d = T.Checker().check(T.parse_context(ctx) if isinstance(ctx, str) else ctx, term)
    if is_observe_program(d):
        marg, posts = oracle_posterior_tables(term, cfg, max_depth)
        return {"kind": "posterior", "marginal": marg, "posteriors": posts}
    dist = O.enumerate(term, cfg, max_depth)
    return {"kind": "distribution", "table": oracle_table(d, term, cfg, max_depth),
            "residual": dist.residual}


def load_corpus(directory):
    """Yield (name, program text, sidecar dict) for every ``*.oppl`` file with a ``.json`` sidecar."""
    for path in sorted(Path(directory).glob("*.oppl")):
        side = path.with_suffix(".json")
        doc = json.loads(side.read_text(encoding="utf-8"))
        yield path.stem, path.read_text(encoding="utf-8"), doc


def compare_with_sidecar(text, doc, cfg=DISCRETE_CFG):
    term = S.parse(text)
    d = T.Checker().check(T.parse_context(doc.get("ctx", "")), term)
    if doc["kind"] == "posterior":
        m1, p1 = posterior_tables(d, cfg)
        worst = tv(m1, doc["marginal"])
        for y, table in doc["posteriors"].items():
            worst = max(worst, tv(p1.get(y, {}), table))
        return worst
    return tv(denote_table(d, cfg), doc["table"])


def oracle_suite(n=100, seed=0, cfg=DISCRETE_CFG, corpus=None, tol=1e-9):
    failures, worst, count = [], 0.0, 0
    if corpus is not None:
        for name, text, doc in load_corpus(corpus):
            dist = compare_with_sidecar(text, doc, cfg)
            count += 1
            worst = max(worst, dist)
            if dist > tol:
                failures.append({"program": name, "tv": dist})
    gen = Generator(seed=seed, int_max=cfg.int_max, max_depth=5)
    made = 0
    for prog in gen.programs(10 * n):
        if made >= n:
            break
        if any(isinstance(x, (S.Fn, S.App)) for x in _nodes(prog.term)):
            continue
        dist = compare_program(prog.ctx, prog.term, cfg)
        made += 1
        worst = max(worst, dist)
        if dist > tol:
            failures.append({"program": prog.text, "ctx": str(prog.ctx), "tv": dist})
    return {"suite": "oracle", "programs": count + made, "passed": not failures, "max_tv": worst,
            "failures": failures}


def _nodes(t):
    yield t
    for k in S.children(t):
        yield from _nodes(k)


# -- kernels and natural transformations ---------------------------------------------

def random_instance(rng, max_dim=5, full_support=False):
    """A random probability kernel f: X -> M(Y) and prior mu on X (some zeros unless full)."""
    n, m = (int(x) for x in rng.integers(1, max_dim + 1, size=2))
    X = measure_space(list(range(n)), "X")
    Y = measure_space([f"y{j}" for j in range(m)], "Y")
    M = rng.random((m, n)) * (rng.random((m, n)) < 0.7)
    M[rng.integers(m, size=n), np.arange(n)] += 0.1
    M /= M.sum(axis=0, keepdims=True)
    mu = rng.random(n) * (1.0 if full_support else (rng.random(n) < 0.8))
    if mu.sum() == 0:
        mu[0] = 1.0
    mu /= mu.sum()
    return K.Kernel(X, Y, M), MeasureVec(X, mu)


def inversion_laws(f, mu):
    """Worst per-coordinate deviation of (f+)_*(f_* mu) = mu and (f+)+ = f on supp(mu)."""
    nu = K.pushforward(f, mu)
    fd = K.bayes_invert(f, mu)
    back = K.pushforward(fd, nu)
    law1 = float(np.max(np.abs(back.coeffs - mu.coeffs)))
    fdd = K.bayes_invert(fd, nu)
    s = mu.coeffs > 0
    law2 = float(np.max(np.abs(fdd.matrix[:, s] - f.matrix[:, s]))) if s.any() else 0.0
    return law1, law2


def round_trips(rng, mu):
    """Worst deviation of MR(RN(nu)) = nu and RN(MR(h)) = h, and of RR(FR) on the same band."""
    s = mu.coeffs > 0
    nu = MeasureVec(mu.space, rng.random(mu.space.size) * s)
    e1 = np.max(np.abs(K.mr(K.rn_derivative(nu, mu), mu).coeffs - nu.coeffs))
    h = rng.random(mu.space.size) * s
    e2 = np.max(np.abs(K.rn_derivative(K.mr(h, mu), mu) - h))
    F = K.fr(nu)
    e3 = np.max(np.abs(K.rr(K.as_callable(F), nu).coeffs - nu.coeffs))
    phi = rng.random(mu.space.size)
    back = K.fr(K.rr(lambda g: float(np.dot(phi, g)), nu))
    e4 = np.max(np.abs(back.coeffs - phi))
    return float(max(e1, e2, e3, e4))


def naturality_suite(n=100, seed=0, tol=1e-12):
    rng = np.random.default_rng(seed)
    worst_laws, worst_trips, worst_nat = 0.0, 0.0, 0.0
    for _ in range(n):
        f, mu = random_instance(rng)
        worst_laws = max(worst_laws, *inversion_laws(f, mu))
        worst_trips = max(worst_trips, round_trips(rng, mu))
        # naturality square: RN(F rho, F mu) = (f+)^* RN(rho, mu)
        rho = MeasureVec(mu.space, rng.random(mu.space.size) * (mu.coeffs > 0))
        lhs = K.rn_derivative(K.pushforward(f, rho), K.pushforward(f, mu))
        rhs = K.l1_pullback(K.bayes_invert(f, mu), K.rn_derivative(rho, mu))
        nz = K.pushforward(f, mu).coeffs > 0
        worst_nat = max(worst_nat, float(np.max(np.abs(lhs[nz] - rhs[nz]))))
    return {"suite": "naturality", "instances": n,
            "passed": max(worst_laws, worst_trips) <= tol and worst_nat <= 1e-9,
            "max_inversion_error": worst_laws, "max_round_trip_error": worst_trips,
            "max_naturality_error": worst_nat}
