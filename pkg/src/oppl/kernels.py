"""Measure kernels between finite spaces: pushforward, disintegration,
Bayesian inversion and the Radon-Nikodym / Riesz representation maps."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .finspace import FinSpace, MeasureVec, RegOperator, SpaceMismatch, _same, dual


class AbsoluteContinuityError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Kernel:
    """A measure kernel ``dom -> M(cod)`` stored column-per-domain-atom."""

    dom: FinSpace
    cod: FinSpace
    matrix: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.matrix, dtype=float)
        if m.shape != (self.cod.size, self.dom.size):
            raise SpaceMismatch(f"kernel matrix {m.shape} does not fit {self.cod.size}x{self.dom.size}")
        object.__setattr__(self, "matrix", m)

    @property
    def bound(self):
        """The uniform bound K: the largest column total variation."""
        if self.matrix.size == 0:
            return 0.0
        return float(np.abs(self.matrix).sum(axis=0).max())

    def column(self, atom):
        return MeasureVec(self.cod, self.matrix[:, self.dom.index_of(atom)])

    def is_probability(self, atol=1e-12):
        m = self.matrix
        return bool(np.all(m >= -atol) and np.allclose(m.sum(axis=0), 1.0, atol=atol, rtol=0))

    def as_operator(self):
        return RegOperator(self.dom, self.cod, self.matrix)

    @classmethod
    def from_function(cls, dom, cod, g):
        """Deterministic kernel of a map ``g`` on atom labels."""
        m = np.zeros((cod.size, dom.size))
        for j, a in enumerate(dom.atoms):
            m[cod.index_of(g(a)), j] = 1.0
        return cls(dom, cod, m)


@dataclass(frozen=True, eq=False)
class KrnObject:
    space: FinSpace
    mu: MeasureVec

    def __post_init__(self):
        _same(self.space, self.mu.space)
        if not self.mu.is_positive():
            raise ValueError("Krn objects carry a positive measure")


def pushforward(f, mu):
    """nu(B) = sum_x f(x)(B) mu(x)."""
    _same(f.dom, mu.space)
    return MeasureVec(f.cod, f.matrix @ mu.coeffs)


def _positive(mu):
    if not mu.is_positive():
        raise ValueError("measure must be positive")


def disintegrate(g, mu):
    """Disintegration of ``mu`` along the deterministic kernel ``g``.

    Column y is mu restricted to the fibre g^-1(y), normalized; fibres of
    zero mass give zero columns.
    """
    _same(g.dom, mu.space)
    _positive(mu)
    M = g.matrix * mu.coeffs[None, :]          # y x x: mu(x)[g(x)=y]
    mass = M.sum(axis=1)
    out = np.zeros((g.dom.size, g.cod.size))
    nz = mass > 0
    out[:, nz] = (M[nz] / mass[nz, None]).T
    return Kernel(g.cod, g.dom, out)


def bayes_invert(f, mu):
    """The Bayesian inverse f^dagger_mu: Y -> M(X).

    f^dagger(y)(x) = f(x)({y}) mu(x) / nu(y) with nu the pushforward; columns
    where nu(y) = 0 are zero.
    """
    _same(f.dom, mu.space)
    _positive(mu)
    joint = f.matrix * mu.coeffs[None, :]       # y x x
    nu = joint.sum(axis=1)
    out = np.zeros((f.dom.size, f.cod.size))
    nz = nu > 0
    out[:, nz] = (joint[nz] / nu[nz, None]).T
    return Kernel(f.cod, f.dom, out)


def bayes_invert_via_joint(f, mu):
    """Same inverse built literally: joint on X x Y, disintegrate along pi_Y, push through pi_X."""
    from .finspace import tensor_space

    XY = tensor_space(f.dom, f.cod)
    gamma = (mu.coeffs[:, None] * f.matrix.T).ravel()     # (x, y) lexicographic
    pi_y = Kernel.from_function(XY, f.cod, lambda a: a[1])
    pi_x = Kernel.from_function(XY, f.dom, lambda a: a[0])
    d = disintegrate(pi_y, MeasureVec(XY, gamma))
    return Kernel(f.cod, f.dom, pi_x.matrix @ d.matrix)


# -- natural transformations -------------------------------------------------

def rn_derivative(nu, mu):
    """d nu / d mu as a density on mu's support (zero off it)."""
    _same(nu.space, mu.space)
    off = (mu.coeffs == 0) & (nu.coeffs != 0)
    if off.any():
        atom = nu.space.atoms[int(np.flatnonzero(off)[0])]
        raise AbsoluteContinuityError(f"nu charges atom {atom!r} where mu vanishes")
    h = np.zeros(mu.space.size)
    s = mu.coeffs != 0
    h[s] = nu.coeffs[s] / mu.coeffs[s]
    return h


def mr(density, mu):
    """Measure representation h -> h mu."""
    return MeasureVec(mu.space, np.asarray(density, dtype=float) * mu.coeffs)


def fr(mu):
    """Functional representation: phi -> integral of phi against mu (coefficients on atoms)."""
    return MeasureVec(dual(mu.space), mu.coeffs.copy())


def rr(functional, mu):
    """Riesz representation: B -> F(1_B), evaluated on indicators of atoms."""
    space = mu.space
    coeffs = np.array([functional(np.eye(space.size)[i]) for i in range(space.size)])
    return MeasureVec(space, coeffs)


def as_callable(F):
    """A dual vector as a function on densities."""
    return lambda phi: float(np.dot(F.coeffs, phi))


def l1_pullback(f_dagger, density):
    """L^1 action of an inverse kernel on a density: integrate against f_dagger(y)."""
    return f_dagger.matrix.T @ np.asarray(density, dtype=float)
