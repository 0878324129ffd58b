"""Finite atomic models of regular ordered Banach spaces.

Every semantic space is represented by a finite list of atoms. Vectors are
coefficient arrays over those atoms, the positive cone is the coordinatewise
one and the norm is total variation. Operators are dense matrices with
``entries[cod_atom, dom_atom]``.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.optimize import linprog

ATOL = 1e-9


class SpaceMismatch(ValueError):
    pass


class NoConvergence(RuntimeError):
    pass


class FinSpace:
    """A finite-dimensional space of measures on a finite set of atoms.

    ``kind`` is one of ``measure``, ``tensor``, ``band``, ``opspace``,
    ``formal`` or ``dual``. Spaces compare equal when their structural keys
    agree, so two separately built grids with the same atoms are the same space.
    """

    def __init__(self, kind, atoms=None, *, factors=(), parent=None, index=None,
                 generator=None, inner=None, support=None, keys=None, name=""):
        self.kind = kind
        self._atoms = None if atoms is None else tuple(atoms)
        self.factors = tuple(factors)
        self.parent = parent
        self.index = None if index is None else np.asarray(index, dtype=np.intp)
        self.generator = generator
        self.inner = inner
        self.support = support
        self.keys = None if keys is None else tuple(keys)
        self.name = name

    @cached_property
    def key(self):
        if self.kind == "measure":
            return ("measure", self._atoms)
        if self.kind == "tensor":
            return ("tensor",) + tuple(f.key for f in self.factors)
        if self.kind == "opspace":
            return ("opspace",) + tuple(f.key for f in self.factors)
        if self.kind == "band":
            return ("band", self.parent.key, tuple(self.index.tolist()))
        if self.kind == "formal":
            return ("formal", self.inner.key, self.keys)
        if self.kind == "dual":
            return ("dual", self.parent.key)
        raise AssertionError(self.kind)

    def __eq__(self, other):
        return isinstance(other, FinSpace) and (self is other or self.key == other.key)

    def __hash__(self):
        return hash(self.key)

    def __repr__(self):
        return f"FinSpace({self.describe()}, size={self.size})"

    def describe(self):
        if self.name:
            return self.name
        if self.kind == "tensor":
            return " ⊗ ".join(f.describe() for f in self.factors)
        if self.kind == "opspace":
            return f"[{self.factors[0].describe()}, {self.factors[1].describe()}]"
        if self.kind == "band":
            return f"band({self.parent.describe()})"
        if self.kind == "formal":
            return f"M({self.inner.describe()})"
        if self.kind == "dual":
            return f"({self.parent.describe()})*"
        return f"{self.kind}[{len(self._atoms)}]"

    @cached_property
    def size(self):
        if self.kind in ("measure",):
            return len(self._atoms)
        if self.kind in ("tensor", "opspace"):
            return int(np.prod([f.size for f in self.factors], dtype=np.int64))
        if self.kind == "band":
            return len(self.index)
        if self.kind == "formal":
            return len(self.keys)
        if self.kind == "dual":
            return self.parent.size
        raise AssertionError(self.kind)

    @property
    def atoms(self):
        """Atom labels, materialized lazily for product spaces."""
        if self._atoms is None:
            if self.kind == "tensor":
                u, v = self.factors
                self._atoms = tuple(itertools.product(u.atoms, v.atoms))
            elif self.kind == "opspace":
                dom, cod = self.factors
                self._atoms = tuple(itertools.product(cod.atoms, dom.atoms))
            elif self.kind == "band":
                patoms = self.parent.atoms
                self._atoms = tuple(patoms[i] for i in self.index)
            elif self.kind == "dual":
                self._atoms = self.parent.atoms
            else:
                raise AssertionError(self.kind)
        return self._atoms

    @cached_property
    def _lookup(self):
        return {a: i for i, a in enumerate(self.atoms)}

    def index_of(self, label):
        try:
            return self._lookup[label]
        except KeyError:
            raise KeyError(f"{label!r} is not an atom of {self.describe()}") from None

    @property
    def root(self):
        """The ambient space a chain of bands lives in."""
        s = self
        while s.kind == "band":
            s = s.parent
        return s

    def root_index(self):
        """Positions of this space's atoms inside :attr:`root`."""
        if self.kind != "band":
            return np.arange(self.size)
        return self.parent.root_index()[self.index]

    @property
    def is_al(self):
        """True when the norm is additive on the positive cone (no operator spaces inside)."""
        if self.kind == "opspace":
            return False
        if self.kind == "tensor":
            return all(f.is_al for f in self.factors)
        if self.kind == "band":
            return self.parent.is_al
        return True


def measure_space(atoms, name=""):
    atoms = tuple(atoms)
    if len(set(atoms)) != len(atoms):
        raise ValueError("atom labels must be pairwise distinct")
    return FinSpace("measure", atoms, name=name)


def dual(space):
    return FinSpace("dual", parent=space)


def operator_space(dom, cod):
    """The space [dom, cod] with matrix units as atoms, flattened cod-major."""
    return FinSpace("opspace", factors=(dom, cod))


def formal_space(inner, vectors, labels=None):
    """Finitely supported measures over vectors of ``inner``.

    ``vectors`` has one row per atom. Atom identity is the vector quantized
    at 1e-12, so equal distributions built by different routes coincide.
    """
    vectors = np.atleast_2d(np.asarray(vectors, dtype=float)).reshape(-1, inner.size)
    keys = [formal_key(v) for v in vectors]
    if len(set(keys)) != len(keys):
        raise ValueError("formal atoms must be distinct vectors")
    if labels is None:
        labels = [f"δ#{k[:6].hex()}" for k in keys]
    return FinSpace("formal", labels, inner=inner, support=vectors.T.copy(), keys=keys)


def formal_key(vec):
    q = np.round(np.asarray(vec, dtype=float) * 1e12).astype(np.int64)
    q[q == 0] = 0
    return q.tobytes()


@dataclass(frozen=True, eq=False)
class MeasureVec:
    space: FinSpace
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float)
        if c.shape != (self.space.size,):
            raise SpaceMismatch(f"expected {self.space.size} coefficients, got {c.shape}")
        object.__setattr__(self, "coeffs", c)

    def is_positive(self, atol=0.0):
        return bool(np.all(self.coeffs >= -atol))

    def support(self):
        return np.flatnonzero(self.coeffs)

    def as_dict(self):
        return {a: float(c) for a, c in zip(self.space.atoms, self.coeffs)}

    def allclose(self, other, atol=ATOL):
        return self.space == other.space and np.allclose(self.coeffs, other.coeffs, atol=atol, rtol=0)

    def __add__(self, other):
        _same(self.space, other.space)
        return MeasureVec(self.space, self.coeffs + other.coeffs)

    def __sub__(self, other):
        _same(self.space, other.space)
        return MeasureVec(self.space, self.coeffs - other.coeffs)

    def __rmul__(self, scalar):
        return MeasureVec(self.space, scalar * self.coeffs)


@dataclass(frozen=True, eq=False)
class RegOperator:
    dom: FinSpace
    cod: FinSpace
    entries: np.ndarray

    def __post_init__(self):
        e = np.asarray(self.entries, dtype=float)
        if e.shape != (self.cod.size, self.dom.size):
            raise SpaceMismatch(f"matrix {e.shape} does not fit {self.cod.size}x{self.dom.size}")
        object.__setattr__(self, "entries", e)

    def __call__(self, v):
        _same(self.dom, v.space)
        return MeasureVec(self.cod, self.entries @ v.coeffs)

    def __matmul__(self, other):
        _same(self.dom, other.cod)
        return RegOperator(other.dom, self.cod, self.entries @ other.entries)

    def is_positive(self, atol=0.0):
        return bool(np.all(self.entries >= -atol))


def _same(a, b):
    if a != b:
        raise SpaceMismatch(f"space mismatch: {a.describe()} vs {b.describe()}")


def identity(space):
    return RegOperator(space, space, np.eye(space.size))


def tv_norm(v):
    """Total variation: the sum of absolute coefficients."""
    return float(np.abs(v.coeffs).sum())


def hahn_jordan(v):
    """Split ``v`` into disjointly supported positive and negative parts."""
    c = v.coeffs
    return MeasureVec(v.space, np.where(c > 0, c, 0.0)), MeasureVec(v.space, np.where(c < 0, -c, 0.0))


def modulus(v):
    return MeasureVec(v.space, np.abs(v.coeffs))


def meet(v, w):
    _same(v.space, w.space)
    return MeasureVec(v.space, np.minimum(v.coeffs, w.coeffs))


def join(v, w):
    _same(v.space, w.space)
    return MeasureVec(v.space, np.maximum(v.coeffs, w.coeffs))


def regular_norm(F):
    """max over domain atoms of the total variation of the image under |F|."""
    if F.entries.size == 0:
        return 0.0
    return float(np.abs(F.entries).sum(axis=0).max())


# -- tensors -----------------------------------------------------------------

def tensor_space(U, V):
    return FinSpace("tensor", factors=(U, V))


def tensor_vec(u, v):
    return MeasureVec(tensor_space(u.space, v.space), np.kron(u.coeffs, v.coeffs))


def tensor_op(F, G):
    return RegOperator(tensor_space(F.dom, G.dom), tensor_space(F.cod, G.cod),
                       np.kron(F.entries, G.entries))


def _l1_sphere_grid(n, resolution):
    pts = set()
    for combo in itertools.product(range(-resolution, resolution + 1), repeat=n):
        s = sum(abs(c) for c in combo)
        if s == resolution:
            pts.add(tuple(c / resolution for c in combo))
    return np.array(sorted(pts))


def _lp_factor(x, W):
    """Left factors Z minimizing sum_i ||z_i|| ||w_i|| subject to x = sum_i z_i (x) w_i (an LP)."""
    m, n = x.shape
    r = len(W)
    A = np.hstack([np.kron(np.eye(m), W[i][:, None]) for i in range(r)])
    cost = np.repeat(np.abs(W).sum(axis=1), m)
    res = linprog(np.concatenate([cost, cost]), A_eq=np.hstack([A, -A]), b_eq=x.ravel(),
                  bounds=(0, None), method="highs")
    if res.status != 0:
        return None
    return (res.x[:r * m] - res.x[r * m:]).reshape(r, m)


def _decomposition_cost(x, Z, W):
    """sum_i ||z_i|| ||w_i|| plus the l1 size of whatever the decomposition misses.

    The leftover can always be written with point-mass products at exactly its
    l1 norm, so the result is a valid upper bound even for slightly infeasible
    solver output.
    """
    used = float(np.sum(np.abs(Z).sum(axis=1) * np.abs(W).sum(axis=1)))
    return used + float(np.abs(x - Z.T @ W).sum())


def projective_norm_bruteforce(x, max_terms=None, restarts=8, seed=0, max_rounds=25):
    """Search decompositions ``x = sum u_i (x) v_i`` for the least ``sum ||u_i|| ||v_i||``.

    Multi-start local search over the factor coefficients: each start fixes
    random right factors, then alternately re-solves the left and the right
    factors exactly by linear programming until the cost stops improving. One
    extra start uses a signed grid on the l1 sphere. Test oracle only.
    """
    if x.space.kind != "tensor":
        raise SpaceMismatch("projective norm needs a tensor space")
    U, V = x.space.factors
    m, n = U.size, V.size
    if max(m, n) > 3:
        raise ValueError("brute force limited to factors of dimension <= 3")
    X = x.coeffs.reshape(m, n)
    r = max_terms or m * n
    rng = np.random.default_rng(seed)
    starts = [_l1_sphere_grid(n, 2)] + [rng.normal(size=(r, n)) for _ in range(restarts)]
    best = np.inf
    for W in starts:
        cost = np.inf
        for _ in range(max_rounds):
            Z = _lp_factor(X, W)
            if Z is None:
                break
            W2 = _lp_factor(X.T, Z)
            if W2 is None:
                break
            W = W2
            new = _decomposition_cost(X, Z, W)
            if new > cost - 1e-13:
                cost = min(cost, new)
                break
            cost = new
        best = min(best, cost)
    if not np.isfinite(best):
        raise NoConvergence("no feasible decomposition found")
    return best


# -- bands -------------------------------------------------------------------

def band(space, mu):
    """The principal band generated by ``mu``: the sub-space on its support."""
    _same(space, mu.space)
    return FinSpace("band", parent=space, index=np.flatnonzero(mu.coeffs), generator=mu)


def band_of_indices(space, index):
    ind = np.zeros(space.size)
    ind[np.asarray(index, dtype=np.intp)] = 1.0
    return band(space, MeasureVec(space, ind))


def band_inclusion(band_space):
    P = np.zeros((band_space.parent.size, band_space.size))
    P[band_space.index, np.arange(band_space.size)] = 1.0
    return RegOperator(band_space, band_space.parent, P)


def band_restrict(space, mu):
    B = band(space, mu)
    return RegOperator(space, B, band_inclusion(B).entries.T.copy())


def in_band(v, band_space):
    """Absolute continuity: ``v`` vanishes off the band's atoms."""
    _same(v.space, band_space.parent)
    mask = np.ones(v.space.size, dtype=bool)
    mask[band_space.index] = False
    return bool(np.all(v.coeffs[mask] == 0))


# -- duality -----------------------------------------------------------------

def kothe_adjoint(F):
    """Transpose, typed between the dual spaces. <F u, f> = <u, F^T f>."""
    cod = F.cod.parent if F.cod.kind == "dual" else dual(F.cod)
    dom = F.dom.parent if F.dom.kind == "dual" else dual(F.dom)
    return RegOperator(cod, dom, F.entries.T.copy())


def pairing(v, f):
    return float(np.dot(v.coeffs, f.coeffs))


def _functional_coeffs(space):
    if space.kind in ("measure", "formal"):
        return np.ones(space.size)
    if space.kind == "tensor":
        return np.kron(*[_functional_coeffs(f) for f in space.factors])
    if space.kind == "band":
        return _functional_coeffs(space.parent)[space.index]
    if space.kind == "opspace":
        dom, cod = space.factors
        phi, psi = _functional_coeffs(dom), _functional_coeffs(cod)
        # chi on the matrix unit E_{v,u}: psi(delta_v) / phi(delta_u)
        return np.outer(psi, 1.0 / phi).ravel()
    if space.kind == "dual":
        return _functional_coeffs(space.parent)
    raise AssertionError(space.kind)


def strictly_positive_functional(space):
    """A functional strictly positive on nonzero positive vectors of ``space``.

    Total mass for measure and formal spaces, products for tensors,
    restriction for bands. On operator spaces this is the linear extension of
    :func:`chi` from the matrix units.
    """
    return MeasureVec(dual(space), _functional_coeffs(space))


def chi(T, phi=None, psi=None):
    """sup { psi(T s) : s >= 0, s != 0, phi(s) <= 1 }, extended by positive parts.

    The supremum over the positive part of the phi-ball is attained at a scaled
    atom, so it is a max over columns.
    """
    phi = _functional_coeffs(T.dom) if phi is None else phi.coeffs
    psi = _functional_coeffs(T.cod) if psi is None else psi.coeffs

    def sup(E):
        if E.shape[1] == 0:
            return 0.0
        return float(((psi @ E) / phi).max())

    pos = np.where(T.entries > 0, T.entries, 0.0)
    neg = np.where(T.entries < 0, -T.entries, 0.0)
    return sup(pos) - sup(neg)
