"""Which coin was tossed? Exact discrete inference, two ways.

A fair choice between a coin with bias 0.9 and one with bias 0.2; we see
heads. The operator semantics and brute-force trace enumeration should give
the same posterior, 9/11 for the first coin.

    python3 demos/coin_walkthrough.py
"""
from oppl import oracle as O
from oppl import syntax as S
from oppl import types as T
from oppl.suites import DISCRETE_CFG, posterior_tables

SOURCE = """
let x0 = sample(bernoulli(0.5)) in
observe(if x0 then sample(bernoulli(0.9)) else sample(bernoulli(0.2)))
"""

term = S.parse(SOURCE)
d = T.typecheck("", term)
print("program:", S.pretty(term))
print("type:   ", d.show_result())

marg, posts = posterior_tables(d, DISCRETE_CFG)
print("\noperator semantics")
print("  evidence:", marg)
print("  posterior after heads:", posts["true"])

print("trace enumeration")
print("  evidence:", O.marginal(term, DISCRETE_CFG))
print("  posterior after heads:", O.posterior(term, True, DISCRETE_CFG))
print(f"\nexact answer: {9 / 11:.6f} for the biased-to-heads coin")
