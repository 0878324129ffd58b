"""Conjugate Gaussian model, from program text to posterior.

Prior x ~ N(0, 1), one observation y ~ N(x, 1). The program is typechecked,
its Bayesian type printed, and the operator it denotes is evaluated on a
1601-point grid over [-8, 8] and compared with the closed-form answers.

    python3 demos/gaussian_walkthrough.py [observed value]
"""
import sys

import numpy as np

from oppl import oracle as O
from oppl import types as T
from oppl.denote import DiscretizationConfig, Evaluator

SOURCE = "let x0 = sample(normal(0, 1)) in observe(sample(normal(x0, 1)))"
y = float(sys.argv[1]) if len(sys.argv) > 1 else 1.0

d = T.typecheck("", SOURCE)
print("program:", SOURCE)
print("type:   ", d.show_result())

cfg = DiscretizationConfig(real_grid=(-8.0, 8.0, 1601))
ev = Evaluator(cfg)
den = ev.denote(d)
(_, op), = den.cod
evidence, prior = op.factors
G = den.matrix()[:, 0].reshape(prior.size, evidence.size)

# the evidence is the pushforward of the prior through the likelihood
marginal = evidence.generator.coeffs[evidence.index]
grid = np.array(evidence.atoms, dtype=float)
print(f"\nevidence: mean {marginal @ grid:+.4f}, sd {np.sqrt(marginal @ grid ** 2):.5f} "
      f"(closed form sd {np.sqrt(2):.5f})")

k = int(np.flatnonzero(evidence.root_index() == ev.snap(y, T.RealV(), evidence.root))[0])
post = G[:, k]
xs = np.array(prior.atoms, dtype=float)
mean = post @ xs
sd = np.sqrt(post @ (xs - mean) ** 2)
exact = O.gaussian_posterior(O.GaussParams(0.0, 1.0), 1.0, evidence.atoms[k])
print(f"posterior given y = {evidence.atoms[k]}: mean {mean:.5f}, sd {sd:.5f}")
print(f"closed form:                mean {exact.mean:.5f}, sd {exact.sd:.5f}")
tv = np.abs(post - O.discretized_normal(exact, xs)).sum()
print(f"total variation to the discretized closed form: {tv:.2e}")
