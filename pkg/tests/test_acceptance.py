"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary lines
are written straight to the terminal even when output capture is on.
"""
import time
from pathlib import Path

import numpy as np
import pytest

from oppl import oracle as O
from oppl import suites
from oppl import types as T
from oppl.denote import DiscretizationConfig, Evaluator, cond_restrict
from oppl.finspace import MeasureVec, measure_space, projective_norm_bruteforce, tensor_space, tv_norm

# pinned tolerances and budgets
GAUSS_TV, GAUSS_SECONDS = 2e-3, 10.0
NORM_ENTRY, NORM_SLACK, NORM_SECONDS = -1e-12, 1e-9, 300.0
ORACLE_TV = 1e-9
INVERSION_TOL = 1e-12
ROUND_TRIP_TOL = 1e-12
PROJECTIVE_TOL = 1e-6
MEET_TOL = 1e-4
LOOP_RESIDUAL, LOOP_SECONDS = 2.0 ** -30, 1.0

GAUSSIAN = "let x0 = sample(normal(0, 1)) in observe(sample(normal(x0, 1)))"
GAUSSIAN_TYPE = "(real, sample(normal(sample(normal(0, 1)), 1))) -> (real, sample(normal(0, 1)))"
CORPUS = Path(__file__).parent / "corpus"


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_criterion_1_gaussian_example(report):
    cfg = DiscretizationConfig(real_grid=(-8.0, 8.0, 1601))
    prior = O.GaussParams(0.0, 1.0)
    start = time.perf_counter()

    d = Evaluator(cfg).denote(T.typecheck("", "sample(normal(sample(normal(0, 1)), 1))"))
    marg = d.matrix()[:, 0]
    want = O.discretized_normal(O.gaussian_marginal(prior, 1.0), cfg.grid_points())
    tv_marg = float(np.abs(marg - want).sum())

    ev = Evaluator(cfg)
    g = ev.denote(T.typecheck("", GAUSSIAN))
    (_, op), = g.cod
    evidence, prior_band = op.factors
    G = g.matrix()[:, 0].reshape(prior_band.size, evidence.size)
    k = int(np.flatnonzero(evidence.root_index() == ev.snap(1.0, T.RealV(), evidence.root))[0])
    want = O.discretized_normal(O.gaussian_posterior(prior, 1.0, 1.0),
                                np.array(prior_band.atoms, dtype=float))
    tv_post = float(np.abs(G[:, k] - want).sum())
    elapsed = time.perf_counter() - start

    ok = tv_marg <= GAUSS_TV and tv_post <= GAUSS_TV and elapsed < GAUSS_SECONDS
    report(1, ok, f"marginal TV {tv_marg:.2e}, posterior TV {tv_post:.2e} (<= {GAUSS_TV}), "
                  f"{elapsed:.2f}s (< {GAUSS_SECONDS}s)")


def test_criterion_2_generated_programs_are_positive_contractions(report):
    start = time.perf_counter()
    rep = suites.th11_suite(n=500, seed=0, max_depth=6)
    elapsed = time.perf_counter() - start
    ok = (rep["passed"] and rep["min_entry"] >= NORM_ENTRY and rep["max_norm"] <= 1 + NORM_SLACK
          and elapsed < NORM_SECONDS)
    report(2, ok, f"{rep['programs']} programs, min entry {rep['min_entry']:.2e}, "
                  f"max norm {rep['max_norm']:.12f}, {len(rep['failures'])} failures, {elapsed:.1f}s")


def test_criterion_3_oracle_equivalence_on_the_corpus(report):
    worst, count, bad = 0.0, 0, []
    kinds = set()
    for name, src, doc in suites.load_corpus(CORPUS):
        dist = suites.compare_with_sidecar(src, doc)
        count += 1
        kinds.add(doc["kind"])
        worst = max(worst, dist)
        if dist > ORACLE_TV:
            bad.append(name)
    ok = count >= 30 and worst <= ORACLE_TV and kinds == {"distribution", "posterior"}
    report(3, ok, f"{count} programs, worst TV {worst:.2e} (<= {ORACLE_TV}), failing {bad}")


def test_criterion_4_bayesian_inversion_laws(report):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(100):
        f, mu = suites.random_instance(rng, max_dim=5)
        worst = max(worst, *suites.inversion_laws(f, mu))
    report(4, worst <= INVERSION_TOL, f"100 instances, worst coordinate error {worst:.2e} "
                                      f"(<= {INVERSION_TOL})")


def test_criterion_5_natural_transformation_round_trips(report):
    rng = np.random.default_rng(2025)
    worst = 0.0
    for _ in range(100):
        _, mu = suites.random_instance(rng, max_dim=5)
        worst = max(worst, suites.round_trips(rng, mu))
    report(5, worst <= ROUND_TRIP_TOL, f"100 instances, worst error {worst:.2e} (<= {ROUND_TRIP_TOL})")


def test_criterion_6_projective_norm_isometry(report):
    rng = np.random.default_rng(2026)
    worst = 0.0
    for _ in range(50):
        m, n = (int(k) for k in rng.integers(1, 4, size=2))
        space = tensor_space(measure_space(range(m)), measure_space(range(n)))
        x = MeasureVec(space, rng.normal(size=m * n))
        worst = max(worst, abs(projective_norm_bruteforce(x) - tv_norm(x)))
    report(6, worst <= PROJECTIVE_TOL, f"50 tensors, worst |pi - tv| {worst:.2e} (<= {PROJECTIVE_TOL})")


def test_criterion_7_conditional_meet(report):
    rng = np.random.default_rng(2027)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 5))
        E = rng.random((2, n)) * (rng.random((2, n)) < 0.6)
        gamma = rng.random(n) * (rng.random(n) < 0.8)
        branch = bool(rng.integers(2))
        worst = max(worst, float(np.max(np.abs(
            cond_restrict(E, gamma, branch) - O.meet_bruteforce(E, gamma, branch)))))

    # a predicate test restricts the input measure to the predicate's set
    ev = Evaluator(suites.DISCRETE_CFG)
    E = ev.denote(T.typecheck("x0: int", "lt(x0, 2)")).matrix()
    mu = np.array([0.1, 0.2, 0.3, 0.25, 0.15])
    in_b = np.array([True, True, False, False, False])
    restricts = (np.array_equal(cond_restrict(E, mu, True), np.where(in_b, mu, 0.0))
             and np.array_equal(cond_restrict(E, mu, False), np.where(in_b, 0.0, mu)))
    ok = worst <= MEET_TOL and restricts
    report(7, ok, f"100 instances, worst deviation {worst:.2e} (<= {MEET_TOL}); "
                  f"predicate restriction exact: {restricts}")


NEGATIVES = [
    ("let x0 = 1 in add(x0, x0)", "", "builtin-disjoint"),
    ("x1 := x0 ; add(x0, x1)", "x0: real", "seq-linearity"),
    ("x5", "", "var-untyped"),
    ("add(true, 1)", "", "builtin-arg-type"),
    ("sample(1)", "", "sample-arg-M"),
    ("observe(1)", "", "observe-bayes-context"),
    ("if 1 then 2 else 3", "", "if-test-bool"),
    ("if true then 1 else true", "", "if-branch-type"),
    ("let x1 = sample(normal(0, 1)) in if x0 then x1 else 2.0", "x0: bool", "if-order-complete"),
    ("while 1 do x0 := 1", "", "while-test-bool"),
    ("let x0 = 1 in 2", "", "let-unused"),
    ("(1)(2)", "", "app-not-function"),
    ("x0 := 1 ; x0 := true", "", "seq-compat-mid"),
    ("1 ; 2", "", "seq-value"),
]


def test_criterion_8_typing_goldens(report):
    gauss = T.typecheck("", GAUSSIAN).show_result()
    store = T.typecheck("x1: real, x2: real", "x1 := 3.5 ; x2 := 7.3").show_result()
    wrong = []
    for src, ctx, rule in NEGATIVES:
        try:
            T.typecheck(ctx, src)
            wrong.append((src, "accepted"))
        except T.TypingError as exc:
            if exc.rule != rule:
                wrong.append((src, exc.rule))
    ok = (gauss == GAUSSIAN_TYPE and store == "store [x1: (real, 3.5), x2: (real, 7.3)]"
          and not wrong and len(NEGATIVES) >= 10)
    report(8, ok, f"Gaussian type {'exact' if gauss == GAUSSIAN_TYPE else gauss!r}; "
                  f"two-assignment {store!r}; {len(NEGATIVES) - len(wrong)}/{len(NEGATIVES)} "
                  f"negatives named correctly" + (f" {wrong}" if wrong else ""))


def test_criterion_9_while_loop_convergence(report):
    cfg = DiscretizationConfig()
    results = []
    for src in ("x0 := true ; while x0 do x0 := sample(bernoulli(0.5))",
                "x0 := true ; while x0 do x0 := true"):
        start = time.perf_counter()
        ev = Evaluator(cfg)
        ev.denote(T.typecheck("", src))
        results.append((ev.report.residual_mass, time.perf_counter() - start))
    (geo, t_geo), (div, t_div) = results
    ok = geo <= LOOP_RESIDUAL and div == 1.0 and t_geo < LOOP_SECONDS and t_div < LOOP_SECONDS
    report(9, ok, f"geometric residual {geo:.3e} (<= 2^-30), {t_geo:.3f}s; "
                  f"divergent residual {div}, {t_div:.3f}s")
