"""Denotational semantics: types to finite spaces, derivations to positive operators.

A denotation (:class:`Den`) is a dense array with one axis per output leg
followed by one axis per input slot. Output legs are either a single value
leg or one leg per slot of an output store. Composite rules build small
tensor networks that are contracted with :func:`numpy.einsum`.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import syntax as S
from . import types as T
from .builtins import implementation
from .finspace import (FinSpace, MeasureVec, RegOperator, SpaceMismatch, _functional_coeffs,
                       band, formal_key, formal_space, measure_space, operator_space,
                       tensor_space)


class DenotationError(RuntimeError):
    pass


@dataclass(frozen=True)
class DiscretizationConfig:
    """Finite stand-ins for the continuous and unbounded ground types."""

    real_grid: tuple = (-8.0, 8.0, 161)
    int_max: int = 8
    posdef1_grid: tuple = (0.1, 5.0, 50)
    clamp_report_threshold: float = 1e-6
    while_tolerance: float = 1e-9
    while_max_iter: int = 10000
    max_dense: int = 60_000_000

    def __post_init__(self):
        for name in ("real_grid", "posdef1_grid"):
            lo, hi, bins = getattr(self, name)
            if not lo < hi or int(bins) < 2:
                raise ValueError(f"{name} needs lo < hi and at least 2 bins")
            object.__setattr__(self, name, (float(lo), float(hi), int(bins)))
        if self.posdef1_grid[0] <= 0:
            raise ValueError("posdef1_grid must be strictly positive")
        if self.int_max < 0:
            raise ValueError("int_max must be nonnegative")

    @classmethod
    def from_dict(cls, doc):
        """Accepts nested (``{"real_grid": {"lo": ...}}``) or dotted (``"real_grid.lo"``) keys."""
        flat = {}
        for k, v in doc.items():
            if isinstance(v, dict):
                for kk, vv in v.items():
                    flat[f"{k}.{kk}"] = vv
            else:
                flat[k] = v
        kwargs = {}
        for grid in ("real_grid", "posdef1_grid"):
            keys = [f"{grid}.{p}" for p in ("lo", "hi", "bins")]
            if any(k in flat for k in keys):
                default = getattr(cls, grid)
                kwargs[grid] = tuple(flat.pop(k, d) for k, d in zip(keys, default))
            if grid in flat:
                kwargs[grid] = tuple(flat.pop(grid))
        names = {f.name for f in fields(cls)}
        for k, v in flat.items():
            if k not in names:
                raise ValueError(f"unknown configuration key {k!r}")
            kwargs[k] = v
        return cls(**kwargs)

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def grid_points(self, which="real"):
        lo, hi, bins = self.real_grid if which == "real" else self.posdef1_grid
        return np.round(np.linspace(lo, hi, bins), 12)


# -- denotation values -------------------------------------------------------

UNIT_SPACE = measure_space(["*"], name="R")


def joint_space(spaces):
    spaces = list(spaces)
    if not spaces:
        return UNIT_SPACE
    out = spaces[-1]
    for s in reversed(spaces[:-1]):
        out = tensor_space(s, out)
    return out


@dataclass(eq=False)
class Den:
    """``array[cod legs..., dom legs...]``; dom legs are sorted by slot."""

    dom: tuple
    cod: tuple
    array: np.ndarray

    def __post_init__(self):
        self.dom = tuple(self.dom)
        self.cod = tuple(self.cod)
        shape = tuple(s.size for _, s in self.cod) + tuple(s.size for _, s in self.dom)
        a = np.asarray(self.array, dtype=float)
        if a.shape != shape:
            if a.size != int(np.prod(shape, dtype=np.int64)):
                raise SpaceMismatch(f"array of shape {a.shape} does not fit legs {shape}")
            a = a.reshape(shape)
        self.array = a

    @property
    def dom_space(self):
        return joint_space(s for _, s in self.dom)

    @property
    def cod_space(self):
        return joint_space(s for _, s in self.cod)

    @property
    def is_store(self):
        return any(k is not None for k, _ in self.cod)

    def matrix(self):
        return self.array.reshape(self.cod_space.size, self.dom_space.size)

    def as_operator(self):
        return RegOperator(self.dom_space, self.cod_space, self.matrix())

    def __call__(self, v=None):
        """Apply to a vector over the joint input (1 when there are no inputs)."""
        if v is None:
            v = np.ones(1) if not self.dom else None
            if v is None:
                raise ValueError("this denotation has inputs; pass a vector")
        coeffs = v.coeffs if isinstance(v, MeasureVec) else np.asarray(v, dtype=float)
        return MeasureVec(self.cod_space, self.matrix() @ coeffs)


class ObserveDen(Den):
    """The conditioning operator nu -> G_nu, kept in factored form.

    ``K[x, y] = F[y, x] / (F mu)[y]`` so that ``G_nu[x, y] = nu[x] K[x, y]``.
    The dense array (one operator per input atom) is built only on demand.
    """

    def __init__(self, slot, dom_space, cod_space, K, limit):
        self.dom = ((slot, dom_space),)
        self.cod = ((None, cod_space),)
        self.K = K
        self.limit = limit
        self._array = None

    @property
    def array(self):
        if self._array is None:
            n, m = self.K.shape
            if n * n * m > self.limit:
                raise DenotationError(f"observe operator too large to materialize ({n}x{n}x{m})")
            self._array = self.feed(np.eye(n)).reshape(n * m, n)
        return self._array

    @array.setter
    def array(self, value):
        self._array = value

    def feed(self, A):
        """Compose after a producer matrix ``A`` (n x D): column d becomes G_{A[:, d]}."""
        return np.einsum("xd,xy->xyd", A, self.K)

    def operator_at(self, nu):
        """G_nu as an (n x m) matrix from the evidence band to the prior band."""
        return np.asarray(nu, dtype=float)[:, None] * self.K


# -- tensor networks -----------------------------------------------------------

class Net:
    def __init__(self, limit):
        self.factors = []
        self.n = 0
        self.limit = limit

    def wire(self):
        self.n += 1
        return self.n - 1

    def add(self, array, labels):
        array = np.asarray(array)
        if array.ndim != len(labels):
            raise SpaceMismatch(f"factor of rank {array.ndim} given {len(labels)} labels")
        self.factors.append((array, list(labels)))

    def run(self, out_labels, shape):
        size = int(np.prod(shape, dtype=np.int64))
        if size > self.limit:
            raise DenotationError(f"dense result of {size} entries exceeds the size limit")
        used = sorted({l for _, ls in self.factors for l in ls} | set(out_labels))
        ren = {l: k for k, l in enumerate(used)}
        if len(ren) > 52:
            raise DenotationError("tensor network too wide")
        args = []
        for a, ls in self.factors:
            args += [a, [ren[l] for l in ls]]
        args.append([ren[l] for l in out_labels])
        out = np.einsum(*args, optimize=True) if self.factors else np.ones(())
        return np.asarray(out, dtype=float).reshape(shape)


# -- evaluator -----------------------------------------------------------------

@dataclass
class Report:
    clamped_mass: float = 0.0
    snapped: float = 0.0
    loops: list = field(default_factory=list)

    def clamp(self, mass):
        self.clamped_mass = max(self.clamped_mass, float(mass))

    def snap(self, dist):
        self.snapped = max(self.snapped, float(dist))

    @property
    def residual_mass(self):
        return max((l["residual"] for l in self.loops), default=0.0)


def _atom_label(a):
    if isinstance(a, bool):
        return "true" if a else "false"
    if isinstance(a, float):
        return repr(float(a))
    if isinstance(a, tuple):
        return "(" + ", ".join(_atom_label(x) for x in a) + ")"
    return str(a)


def atom_label(a):
    return _atom_label(a)


class Evaluator:
    def __init__(self, cfg=None, checker=None):
        self.cfg = cfg or DiscretizationConfig()
        self.checker = checker or T.Checker()
        self.report = Report()
        self._bayes = {}
        self._ground = {}

    # ---- types to spaces
    def ground_space(self, t):
        key = t
        if key in self._ground:
            return self._ground[key]
        cfg = self.cfg
        if isinstance(t, T.Fin):
            atoms = ["*"] if t.m == 1 else ([False, True] if t.m == 2 else list(range(t.m)))
            sp = measure_space(atoms, name=T.show_type(t))
        elif isinstance(t, T.IntV):
            base = list(range(cfg.int_max + 1))
            sp = self._grid_product(base, t.n, T.show_type(t))
        elif isinstance(t, T.RealV):
            sp = self._grid_product([float(x) for x in cfg.grid_points("real")], t.n, T.show_type(t))
        elif isinstance(t, T.PosDef):
            if t.n != 1:
                raise DenotationError("posdef(n) with n > 1 has no grid; only literal values are supported")
            sp = measure_space([float(x) for x in cfg.grid_points("posdef")], name="posdef(1)")
        else:
            raise AssertionError(t)
        self._ground[key] = sp
        return sp

    @staticmethod
    def _grid_product(base, n, name):
        if n == 1:
            return measure_space(base, name=name)
        import itertools
        return measure_space(list(itertools.product(base, repeat=n)), name=name)

    def interp_type(self, t, hint=None):
        """The space of a type; ``hint`` realizes M types from an existing space."""
        if T.is_ground(t):
            return self.ground_space(t)
        if isinstance(t, T.Bayes):
            return self.bayes_space(t, hint)
        if isinstance(t, T.Tensor):
            hl = hr = None
            if hint is not None:
                h = hint.root if hint.kind == "band" else hint
                if h.kind == "tensor":
                    hl, hr = h.factors
            return tensor_space(self.interp_type(t.left, hl), self.interp_type(t.right, hr))
        if isinstance(t, T.Arrow):
            hd = hc = None
            if hint is not None and hint.kind == "opspace":
                hd, hc = hint.factors
            return operator_space(self.interp_type(t.dom, hd), self.interp_type(t.cod, hc))
        if isinstance(t, T.MType):
            if hint is not None:
                h = hint.root if hint.kind == "band" else hint
                if h.kind == "formal":
                    return h
            raise DenotationError(f"{T.show_type(t)} has no space until a value realizes it")
        raise AssertionError(t)

    def bayes_space(self, t, hint=None):
        key = (t.carrier, t.prior)
        if key not in self._bayes:
            d = self.checker.check(T.EMPTY, t.prior)
            if d.is_store or T.erase(d.result) != T.erase(t.carrier):
                raise DenotationError(f"prior {S.pretty(t.prior)} is not of type {T.show_type(t.carrier)}")
            P = self.denote(d, {})
            carrier = self.interp_type(t.carrier, P.cod_space)
            vec = self.coerce(P.cod_space, carrier) @ P.matrix()[:, 0]
            self._bayes[key] = band(carrier, MeasureVec(carrier, vec))
        return self._bayes[key]

    def slot_space(self, i, ty, env):
        if i in env:
            et, sp = env[i]
            if et == ty:
                return sp
            return self.interp_type(ty, sp)
        return self.interp_type(ty)

    # ---- coercions between spaces
    def coerce(self, src, dst):
        """Matrix (dst x src) of the canonical embedding of ``src`` into ``dst``."""
        if src == dst:
            return np.eye(src.size)
        if dst.kind == "band":
            # projection onto the band; callers check that no mass is dropped
            return self.coerce(src, dst.parent)[dst.index]
        if src.kind == "band":
            P = np.zeros((src.parent.size, src.size))
            P[src.index, np.arange(src.size)] = 1.0
            return self.coerce(src.parent, dst) @ P
        if src.kind == "formal" and dst.kind == "formal":
            C_in = self.coerce(src.inner, dst.inner)
            lookup = {k: j for j, k in enumerate(dst.keys)}
            M = np.zeros((dst.size, src.size))
            for j in range(src.size):
                key = formal_key(C_in @ src.support[:, j])
                if key not in lookup:
                    raise DenotationError("a distribution is missing from the target M-space")
                M[lookup[key], j] = 1.0
            return M
        if src.kind == "tensor" and dst.kind == "tensor":
            return np.kron(self.coerce(src.factors[0], dst.factors[0]),
                           self.coerce(src.factors[1], dst.factors[1]))
        if src.kind == "opspace" and dst.kind == "opspace":
            A = self.coerce(src.factors[1], dst.factors[1])
            B = self.coerce(dst.factors[0], src.factors[0])
            return np.kron(A, B.T)
        raise SpaceMismatch(f"cannot coerce {src.describe()} into {dst.describe()}")

    def unify(self, a, b):
        """A space both ``a`` and ``b`` embed into (union of realized M atoms)."""
        if a == b:
            return a
        if a.kind == "band":
            return self.unify(a.parent, b)
        if b.kind == "band":
            return self.unify(a, b.parent)
        if a.kind == "formal" and b.kind == "formal":
            inner = self.unify(a.inner, b.inner)
            va = (self.coerce(a.inner, inner) @ a.support).T
            vb = (self.coerce(b.inner, inner) @ b.support).T
            seen = {formal_key(v) for v in va}
            extra = [v for v in vb if formal_key(v) not in seen]
            vecs = np.vstack([va] + ([np.array(extra)] if extra else []))
            return formal_space(inner, vecs)
        if a.kind == b.kind == "tensor":
            return tensor_space(*(self.unify(x, y) for x, y in zip(a.factors, b.factors)))
        raise SpaceMismatch(f"cannot unify {a.describe()} and {b.describe()}")

    # ---- structural helpers
    def _leg_inputs(self, net, den, inputs):
        """Attach ``den`` to ``net``; ``inputs`` maps slot -> (label, space)."""
        cod_labels = [net.wire() for _ in den.cod]
        dom_labels = []
        for slot, sp in den.dom:
            lab, wsp = inputs[slot]
            if wsp != sp:
                mid = net.wire()
                net.add(self.coerce(wsp, sp), [mid, lab])
                lab = mid
            dom_labels.append(lab)
        net.add(den.array, cod_labels + dom_labels)
        return cod_labels

    def _net(self):
        return Net(self.cfg.max_dense)

    def _outer_inputs(self, net, slots_spaces):
        return {i: (net.wire(), sp) for i, sp in slots_spaces}

    def _finish(self, net, dom, cod_legs):
        """cod_legs: list of (key, space, label)."""
        inputs = dom
        labels = [l for _, _, l in cod_legs] + [lab for _, (lab, _) in inputs]
        shape = [s.size for _, s, _ in cod_legs] + [sp.size for _, (_, sp) in inputs]
        arr = net.run(labels, shape)
        return Den(tuple((i, sp) for i, (_, sp) in inputs),
                   tuple((k, s) for k, s, _ in cod_legs), arr)

    def _map_cod(self, den, new_spaces):
        """Coerce each output leg into the given spaces (same keys, same order)."""
        if all(s == n for (_, s), n in zip(den.cod, new_spaces)):
            return den
        net = self._net()
        inputs = self._outer_inputs(net, den.dom)
        inputs = sorted(inputs.items())
        labels = self._leg_inputs(net, den, dict(inputs))
        out = []
        for axis, ((k, s), n, lab) in enumerate(zip(den.cod, new_spaces, labels)):
            if s != n:
                if n.kind == "band":
                    self._check_in_band(den.array, axis, s, n)
                new = net.wire()
                net.add(self.coerce(s, n), [new, lab])
                lab = new
            out.append((k, n, lab))
        return self._finish(net, inputs, out)

    def _check_in_band(self, array, axis, src, dst):
        mass = np.abs(np.moveaxis(array, axis, 0)).reshape(src.size, -1).sum(axis=1)
        full = self.coerce(src, dst.parent) @ mass
        kept = full[dst.index].sum()
        if full.sum() - kept > 1e-12 * max(1.0, full.sum()):
            raise DenotationError(f"a value of {src.describe()} falls outside {dst.describe()}")

    def _drop_unit_value(self, den):
        """A unit value is the empty store."""
        if len(den.cod) == 1 and den.cod[0][0] is None and den.cod[0][1].size == 1:
            return Den(den.dom, (), den.array.reshape(den.array.shape[1:]))
        return den

    # ---- dispatcher
    def denote(self, d, env=None):
        if env is None:
            env = {i: (ty, self.interp_type(ty)) for i, ty in d.ctx.items()}
        rule = d.rule.replace("-", "_")
        return getattr(self, "_d_" + rule)(d, env)

    # constants
    def _const(self, d, value):
        sp = self.interp_type(d.result)
        idx = self.snap(value, d.result, sp)
        vec = np.zeros(sp.size)
        vec[idx] = 1.0
        return Den((), ((None, sp),), vec)

    def snap(self, value, ty, sp):
        """Index of the atom nearest ``value``; records snap distance and clamping."""
        if isinstance(ty, T.Fin):
            return int(value)
        vals = value if isinstance(value, tuple) else (value,)
        if isinstance(ty, (T.IntV, T.RealV)):
            base = (np.arange(self.cfg.int_max + 1, dtype=float) if isinstance(ty, T.IntV)
                    else self.cfg.grid_points("real"))
            idx = []
            for v in vals:
                k = int(np.argmin(np.abs(base - float(v))))
                dist = abs(base[k] - float(v))
                step = base[1] - base[0] if len(base) > 1 else 1.0
                if dist > step / 2 + 1e-12:
                    self.report.clamp(1.0)
                self.report.snap(dist)
                idx.append(k)
            flat = 0
            for k in idx:
                flat = flat * len(base) + k
            return flat
        if isinstance(ty, T.PosDef):
            if ty.n == 1:
                base = self.cfg.grid_points("posdef")
                v = float(np.asarray(value).ravel()[0])
                k = int(np.argmin(np.abs(base - v)))
                self.report.snap(abs(base[k] - v))
                return k
            return 0
        raise AssertionError(ty)

    def _d_const_int(self, d, env):
        return self._const(d, tuple(d.info["value"]) if len(d.info["value"]) > 1 else d.info["value"][0])

    def _d_const_real(self, d, env):
        v = d.info["value"]
        return self._const(d, tuple(v) if len(v) > 1 else v[0])

    def _d_const_fin(self, d, env):
        return self._const(d, d.info["value"])

    def _d_const_posdef(self, d, env):
        rows = d.info["value"]
        if len(rows) > 1:
            sp = measure_space([tuple(map(tuple, rows))], name=T.show_type(d.result))
            return Den((), ((None, sp),), np.ones(1))
        return self._const(d, rows[0][0])

    def _d_var(self, d, env):
        i = d.term.index
        sp = self.slot_space(i, d.result, env)
        return Den(((i, sp),), ((None, sp),), np.eye(sp.size))

    def _d_subsume(self, d, env):
        prem = d.premises[0]
        inputs = d.info.get("inputs")
        if inputs:
            P = self.denote(prem, env)
            net = self._net()
            outer = {i: (net.wire(), self.slot_space(i, d.ctx(i), env)) for i, _ in P.dom}
            labels = self._leg_inputs(net, P, outer)
            return self._finish(net, sorted(outer.items()),
                                [(k, s, l) for (k, s), l in zip(P.cod, labels)])
        P = self.denote(prem, env)
        if d.is_store:
            P = self._drop_unit_value(P) if not prem.is_store else P
            targets = [self.interp_type(d.result(k), s) for k, s in P.cod]
        else:
            (_, s), = P.cod
            targets = [self.interp_type(d.result, s)]
        return self._map_cod(P, targets)

    def _d_bayes_intro(self, d, env):
        P = self.denote(d.premises[0], env)
        vec = P.matrix()[:, 0]
        key = (d.result.carrier, d.result.prior)
        if key not in self._bayes:
            self._bayes[key] = band(P.cod_space, MeasureVec(P.cod_space, vec))
        return self._map_cod(P, [self._bayes[key]])

    def _d_builtin(self, d, env):
        args = [self.denote(p, env) for p in d.premises]
        op = d.info["op"]
        kind, fn = implementation(op)
        reach = []
        for A in args:
            m = A.array.reshape(A.cod_space.size, -1)
            reach.append(np.flatnonzero(np.abs(m).sum(axis=1) > 0))
        arg_atoms = [A.cod_space.atoms for A in args]
        combos = np.array(np.meshgrid(*reach, indexing="ij")).reshape(len(args), -1).T \
            if args else np.zeros((1, 0), dtype=int)
        ncomb = len(combos)
        if ncomb * max(1, 1) > self.cfg.max_dense:
            raise DenotationError("too many reachable argument combinations")
        result = d.result
        param = d.term.param
        if kind == "ground":
            out_sp = self.interp_type(result)
            cols = np.empty(ncomb, dtype=np.intp)
            for c, combo in enumerate(combos):
                vals = [arg_atoms[k][j] for k, j in enumerate(combo)]
                cols[c] = self.snap(fn(*vals), result, out_sp)
            O = np.zeros((out_sp.size, ncomb))
            O[cols, np.arange(ncomb)] = 1.0
        else:
            inner = self.interp_type(result.inner)
            vecs, index, col_of = [], {}, np.empty(ncomb, dtype=np.intp)
            for c, combo in enumerate(combos):
                vals = [arg_atoms[k][j] for k, j in enumerate(combo)]
                v, clamped = fn(vals, param, inner.atoms)
                if clamped > self.cfg.clamp_report_threshold:
                    self.report.clamp(clamped)
                key = formal_key(v)
                if key not in index:
                    index[key] = len(vecs)
                    vecs.append(v)
                col_of[c] = index[key]
            out_sp = formal_space(inner, np.array(vecs).reshape(-1, inner.size))
            O = np.zeros((out_sp.size, ncomb))
            O[col_of, np.arange(ncomb)] = 1.0
        net = self._net()
        O = O.reshape((out_sp.size,) + tuple(len(r) for r in reach))
        out_label = net.wire()
        r_labels = [net.wire() for _ in args]
        net.add(O, [out_label] + r_labels)
        dom = []
        for A, r, rl in zip(args, reach, r_labels):
            sub = np.take(A.array, r, axis=0)
            dls = []
            for i, sp in A.dom:
                lab = net.wire()
                dom.append((i, (lab, sp)))
                dls.append(lab)
            net.add(sub, [rl] + dls)
        dom.sort(key=lambda x: x[0])
        return self._finish(net, dom, [(None, out_sp, out_label)])

    def _phi_leg(self, den, slot, sp):
        """Add an input leg weighted by the strictly positive functional of ``sp``."""
        net = self._net()
        inputs = {i: (net.wire(), s) for i, s in den.dom}
        labels = self._leg_inputs(net, den, inputs)
        lab = net.wire()
        net.add(_functional_coeffs(sp), [lab])
        inputs[slot] = (lab, sp)
        return self._finish(net, sorted(inputs.items()),
                            [(k, s, l) for (k, s), l in zip(den.cod, labels)])

    def _d_assign_bayes(self, d, env):
        i = d.info["slot"]
        P = self.denote(d.premises[0], env)
        (_, s), = P.cod
        vec = P.matrix()[:, 0]
        ty = d.premises[0].result
        key = (ty, d.result(i).prior)
        if key not in self._bayes:
            self._bayes[key] = band(s, MeasureVec(s, vec))
        B = self._bayes[key]
        P = self._map_cod(P, [B])
        P = Den((), ((i, B),), P.array)
        return self._phi_leg(P, i, self._write_slot_space(i, d.ctx(i), env, s))

    def _write_slot_space(self, i, ty, env, hint):
        if i in env:
            return self.slot_space(i, ty, env)
        return self.interp_type(ty, hint)

    def _d_assign(self, d, env):
        i = d.info["slot"]
        P = self.denote(d.premises[0], env)
        (_, s), = P.cod
        P = Den(P.dom, ((i, s),), P.array)
        if d.info["reads_slot"]:
            return P
        return self._phi_leg(P, i, self._write_slot_space(i, d.ctx(i), env, s))

    def _plug(self, consumer, feeds, outer_dom):
        """Feed producer dens into consumer slots.

        ``feeds`` maps consumer slot -> (producer den, producer cod leg index);
        remaining consumer slots and producer inputs come from ``outer_dom``
        (slot -> space). Returns (net, outer inputs, consumer cod labels,
        producer cod labels by producer id).
        """
        net = self._net()
        outer = {i: (net.wire(), sp) for i, sp in outer_dom.items()}
        prod_labels = {}
        for den, _ in {id(p): (p, k) for p, k in feeds.values()}.values():
            prod_labels[id(den)] = self._leg_inputs(net, den, outer)
        inputs = {}
        for slot, sp in consumer.dom:
            if slot in feeds:
                den, k = feeds[slot]
                inputs[slot] = (prod_labels[id(den)][k], den.cod[k][1])
            else:
                inputs[slot] = outer[slot]
        cod_labels = self._leg_inputs(net, consumer, inputs)
        return net, outer, cod_labels, prod_labels

    def _d_let(self, d, env):
        i = d.info["slot"]
        d1, d2 = d.premises
        P1 = self.denote(d1, env)
        (_, s1), = P1.cod
        P2 = self.denote(d2, {**env, i: (d1.result, s1)})
        if isinstance(P2, ObserveDen) and P2.dom[0][0] == i:
            C = self.coerce(s1, P2.dom[0][1])
            arr = P2.feed(C @ P1.matrix())
            return Den(P1.dom, P2.cod, arr)
        outer = dict(P1.dom)
        outer.update({j: sp for j, sp in P2.dom if j != i})
        net, outer_in, cod_labels, _ = self._plug(P2, {i: (P1, 0)}, outer)
        return self._finish(net, sorted(outer_in.items()),
                            [(k, s, l) for (k, s), l in zip(P2.cod, cod_labels)])

    def _d_seq(self, d, env):
        d1, d2 = d.premises
        P1 = self._drop_unit_value(self.denote(d1, env))
        leg = {k: (n, s) for n, (k, s) in enumerate(P1.cod)}
        env2 = dict(env)
        for j, ty in d.info["overlay"].items():
            env2[j] = (ty, self.interp_type(ty, leg[j][1]) if ty != d1.result(j) else leg[j][1])
        P2 = self.denote(d2, env2)
        if not d2.is_store and d2.result == T.UNIT:
            P2 = self._drop_unit_value(P2)
        left = set(d.info["left_store"])
        if isinstance(P2, ObserveDen) and P2.dom[0][0] in left and len(P1.cod) == 1:
            C = self.coerce(P1.cod[0][1], P2.dom[0][1])
            arr = P2.feed(C @ P1.matrix())
            return Den(P1.dom, P2.cod, arr)
        feeds = {j: (P1, leg[j][0]) for j, _ in P2.dom if j in left}
        outer = dict(P1.dom)
        outer.update({j: sp for j, sp in P2.dom if j not in left})
        net, outer_in, cod_labels, prod = self._plug(P2, feeds, outer)
        if not feeds:
            prod[id(P1)] = self._leg_inputs(net, P1, outer_in)
        p1_labels = prod[id(P1)]
        out = [(k, s, l) for (k, s), l in zip(P2.cod, cod_labels)]
        for j in d.info["passthrough"]:
            n, s = leg[j]
            out.append((j, s, p1_labels[n]))
        out.sort(key=lambda x: -1 if x[0] is None else x[0])
        return self._finish(net, sorted(outer_in.items()), out)

    def _d_fn(self, d, env):
        i = d.info["slot"]
        P = self.denote(d.premises[0], env)
        param_t = d.result.dom
        (_, cod_sp), = P.cod
        slots = [j for j, _ in P.dom]
        if i in slots:
            k = slots.index(i)
            psp = P.dom[k][1]
            arr = np.moveaxis(P.array, 1 + k, 1)
            rest = tuple(x for x in P.dom if x[0] != i)
        else:
            psp = self.interp_type(param_t)
            arr = P.array[:, None]
            rest = P.dom
        op = operator_space(psp, cod_sp)
        return Den(rest, ((None, op),), arr.reshape((op.size,) + arr.shape[2:]))

    def _d_app(self, d, env):
        da, df = d.premises
        A = self.denote(da, env)
        F = self.denote(df, env)
        (_, op), = F.cod
        dsp, csp = op.factors
        (_, asp), = A.cod
        net = self._net()
        outer = {i: (net.wire(), sp) for i, sp in list(A.dom) + list(F.dom)}
        a_lab, = self._leg_inputs(net, A, outer)
        if asp != dsp:
            mid = net.wire()
            net.add(self.coerce(asp, dsp), [mid, a_lab])
            a_lab = mid
        t_lab = net.wire()
        f_dom = [outer[i][0] for i, _ in F.dom]
        net.add(F.array.reshape((csp.size, dsp.size) + F.array.shape[1:]), [t_lab, a_lab] + f_dom)
        return self._finish(net, sorted(outer.items()), [(None, csp, t_lab)])

    # conditionals and loops
    def _gamma(self, d, env):
        return [(i, self.slot_space(i, ty, env)) for i, ty in d.ctx.items()]

    def _extend(self, den, gamma, result, frame_slots=()):
        """Re-index ``den`` over all of ``gamma``; frame store slots it does not write."""
        net = self._net()
        outer = {i: (net.wire(), sp) for i, sp in gamma}
        present = {i for i, _ in den.dom}
        labels = self._leg_inputs(net, den, outer)
        out = [(k, s, l) for (k, s), l in zip(den.cod, labels)]
        written = {k for k, _ in den.cod}
        for i, sp in gamma:
            if i in frame_slots and i not in written:
                new = net.wire()
                net.add(np.eye(sp.size), [new, outer[i][0]])
                out.append((i, sp, new))
            elif i not in present:
                net.add(_functional_coeffs(sp), [outer[i][0]])
        out.sort(key=lambda x: -1 if x[0] is None else x[0])
        return self._finish(net, sorted(outer.items()), out)

    def _masks(self, test, gamma):
        test = self._map_cod(test, [self.ground_space(T.BOOL)])
        E = self._extend(test, gamma, T.BOOL)
        arr = E.array
        return arr[1] > 0, arr[0] > 0

    def cond_masks(self, E):
        """Closed form of the restriction maps: keep atom a when E[branch, a] > 0."""
        return E[1] > 0, E[0] > 0

    def _result_spaces(self, d, dens):
        if d.is_store:
            spaces = []
            for k in sorted(d.result.supp):
                hints = [s for den in dens for kk, s in den.cod if kk == k]
                sp = hints[0]
                for h in hints[1:]:
                    sp = self.unify(sp, h) if T.has_m(d.result(k)) else sp
                spaces.append((k, self.interp_type(d.result(k), sp)))
            return spaces
        hints = [den.cod[0][1] for den in dens]
        sp = hints[0]
        if T.has_m(d.result):
            for h in hints[1:]:
                sp = self.unify(sp, h)
        return [(None, self.interp_type(d.result, sp))]

    def _d_if(self, d, env):
        dc, da, db = d.premises
        gamma = self._gamma(d, env)
        E = self.denote(dc, env)
        mT, mF = self._masks(E, gamma)
        A, B = self.denote(da, env), self.denote(db, env)
        if d.info["store"] or d.result == T.UNIT:
            A, B = self._drop_unit_value(A), self._drop_unit_value(B)
        frame = set(d.result.supp) if d.is_store else set()
        A = self._extend(A, gamma, d.result, frame)
        B = self._extend(B, gamma, d.result, frame)
        targets = self._result_spaces(d, [A, B])
        A = self._map_cod(A, [s for _, s in targets])
        B = self._map_cod(B, [s for _, s in targets])
        ncod = len(A.cod)
        shape = (1,) * ncod + mT.shape
        arr = A.array * mT.reshape(shape) + B.array * mF.reshape(shape)
        return Den(A.dom, A.cod, arr)

    def _d_while(self, d, env):
        dc, db = d.premises
        gamma = self._gamma(d, env)
        E = self.denote(dc, env)
        mT, mF = self._masks(E, gamma)
        B = self._drop_unit_value(self.denote(db, env))
        frame = {i for i, _ in gamma}
        B = self._extend(B, gamma, d.result, frame)
        B = self._map_cod(B, [sp for _, sp in gamma])
        N = int(np.prod([sp.size for _, sp in gamma], dtype=np.int64))
        Bm = B.array.reshape(N, N)
        t, f = mT.reshape(N).astype(float), mF.reshape(N).astype(float)
        W, X, it, converged = self.kleene(Bm, t, f)
        residual = float(X.sum(axis=0).max()) if N else 0.0
        self.report.loops.append({"iterations": it, "residual": residual, "converged": converged,
                                  "term": S.pretty(d.term)})
        cod = tuple((i, sp) for i, sp in gamma)
        return Den(tuple(gamma), cod, W.reshape(tuple(sp.size for _, sp in gamma) * 2))

    def kleene(self, Bm, t, f):
        """W = sum_k F (B T)^k, iterated until the in-loop mass is below tolerance.

        Returns (W, X, iterations, converged) where X is the mass still in the
        loop after the last iteration.
        """
        cfg = self.cfg
        N = len(t)
        X = np.eye(N)
        W = np.zeros((N, N))
        BT = Bm * t[None, :]
        for it in range(cfg.while_max_iter):
            W += f[:, None] * X
            nxt = BT @ X
            mass = np.abs(nxt).sum(axis=0).max() if N else 0.0
            if mass < cfg.while_tolerance:
                return W, nxt, it + 1, True
            if np.array_equal(nxt, X) or np.allclose(nxt, X, rtol=0, atol=1e-15):
                return W, nxt, it + 1, False
            X = nxt
        return W, X, cfg.while_max_iter, False

    # probabilistic operations
    def _d_sampler(self, d, env):
        P = self.denote(d.premises[0], env)
        (_, s), = P.cod
        labels = [f"δ({atom_label(a)})" for a in s.atoms]
        fs = formal_space(s, np.eye(s.size), labels)
        return Den(P.dom, ((None, fs),), P.array)

    def _d_sample(self, d, env):
        P = self.denote(d.premises[0], env)
        (_, fs), = P.cod
        if fs.kind == "band":
            P = self._map_cod(P, [fs.root])
            fs = fs.root
        arr = np.tensordot(fs.support, P.array, axes=1)
        return Den(P.dom, ((None, fs.inner),), arr)

    def _d_observe(self, d, env):
        i = d.info["slot"]
        P = self.denote(d.premises[0], env)
        (_, prior_sp), = P.dom
        if prior_sp.kind != "band" or prior_sp.generator is None:
            raise DenotationError("observe needs its input slot to be a band")
        mu = prior_sp.generator.coeffs[prior_sp.index]
        (_, ysp), = P.cod
        ev_t = d.result.dom
        parent = self.interp_type(ev_t.carrier, ysp)
        if parent.kind == "band":
            parent = parent.root
        F = self.coerce(ysp, parent) @ P.matrix()
        Fmu = F @ mu
        # the evidence band is generated by F mu itself; denoting the substituted
        # prior term instead can move randomness into a branch test
        self._bayes[(ev_t.carrier, ev_t.prior)] = band(parent, MeasureVec(parent, Fmu))
        evidence = self.interp_type(ev_t, ysp)
        keep = np.zeros(evidence.parent.size, dtype=bool)
        keep[evidence.index] = True
        if np.any(Fmu[~keep] > 0):
            raise DenotationError("the evidence band misses mass of the pushforward")
        Fb, Fmub = F[evidence.index], Fmu[evidence.index]
        K = np.zeros((prior_sp.size, evidence.size))
        nz = Fmub > 0
        K[:, nz] = (Fb[nz] / Fmub[nz, None]).T
        cod = operator_space(evidence, prior_sp)
        return ObserveDen(i, prior_sp, cod, K, self.cfg.max_dense)


# -- public helpers -------------------------------------------------------------

def interp_type(t, cfg=None):
    return Evaluator(cfg).interp_type(t)


def denote(d, cfg=None, checker=None):
    """Denotation of a derivation, with a fresh evaluator; returns (Den, Report)."""
    ev = Evaluator(cfg, checker)
    den = ev.denote(d)
    return den, ev.report


def cond_restrict(E, gamma, branch=True):
    """T_e / F_e on a vector: keep coordinate a iff E[branch, a] > 0.

    ``E`` is the (2 x n) matrix of a boolean test (row 0 false, row 1 true).
    Signed inputs are handled through their positive and negative parts,
    which the coordinatewise mask treats identically.
    """
    E = np.asarray(E, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    mask = E[1 if branch else 0] > 0
    return np.where(mask, gamma, 0.0)


def observe_op(F, mu, nu=None):
    """G[x, y] = nu[x] F[y, x] / (F mu)[y] on the support of F mu, zero elsewhere."""
    F = np.asarray(F, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = mu if nu is None else np.asarray(nu, dtype=float)
    if np.any(F < 0):
        raise ValueError("observe needs a positive operator")
    if np.any((mu == 0) & (nu != 0)):
        raise ValueError("nu must be absolutely continuous with respect to mu")
    Fmu = F @ mu
    G = np.zeros((F.shape[1], F.shape[0]))
    nz = Fmu > 0
    G[:, nz] = nu[:, None] * F[nz].T / Fmu[nz]
    return G


def observe_op_stepwise(F, mu, nu):
    """The five-arrow composite for a parameter nu << mu, evaluated one arrow at a time.

    1. identify M(Y) at F mu with the Koethe dual of its order ideal (density w.r.t. F mu);
    2. restrict the functional to the ideal generated by F nu (i^sigma);
    3. pull back along F (the Koethe adjoint, i.e. the transpose);
    4. identify the dual of the ideal at nu with M(X) at nu (multiply by nu);
    5. include the band at nu into the band at mu (j).
    Returns the (n x m) matrix of the composite on the basis of point masses in Y.
    """
    F = np.asarray(F, dtype=float)
    mu = np.asarray(mu, dtype=float)
    nu = np.asarray(nu, dtype=float)
    m, n = F.shape
    Fmu = F @ mu
    G = np.zeros((n, m))
    for y in range(m):
        if Fmu[y] <= 0:
            continue
        rho = np.zeros(m)
        rho[y] = 1.0
        density = rho / Fmu[y]                    # 1: RN w.r.t. F mu (a functional on Y)
        restricted = density                      # 2: same functional, smaller ideal
        pulled = F.T @ restricted                 # 3: Koethe adjoint
        measure = pulled * nu                     # 4: MR at nu
        G[:, y] = measure                         # 5: inclusion into the band at mu
    return G


def leg_labels(legs):
    """Labels for the joint atoms of a list of (slot | None, space) legs, in flat order."""
    import itertools
    if len(legs) == 1 and legs[0][0] is None:
        return [atom_label(a) for a in legs[0][1].atoms]
    if not legs:
        return ["*"]
    per = [[f"x{k}={atom_label(a)}" for a in sp.atoms] for k, sp in legs]
    return [", ".join(combo) for combo in itertools.product(*per)]


def uniform_input(den):
    """The product of uniform probability measures over the input slots."""
    vec = np.ones(1)
    for _, sp in den.dom:
        vec = np.kron(vec, np.full(sp.size, 1.0 / sp.size))
    return vec


def input_vector(den, doc):
    """Product input from ``{"x0": {"true": 0.5, ...}, ...}``; missing slots are uniform."""
    doc = dict(doc or {})
    vec = np.ones(1)
    for slot, sp in den.dom:
        labels = [atom_label(a) for a in sp.atoms]
        entry = doc.pop(f"x{slot}", None)
        if entry is None:
            v = np.full(sp.size, 1.0 / sp.size)
        else:
            v = np.zeros(sp.size)
            for lab, p in entry.items():
                if lab not in labels:
                    raise DenotationError(f"x{slot} has no atom {lab!r}; atoms are {labels[:8]}...")
                v[labels.index(lab)] = float(p)
        vec = np.kron(vec, v)
    if doc:
        raise DenotationError(f"input names slots the program does not read: {sorted(doc)}")
    return vec


def output_table(den, vec=None):
    """``{label: mass}`` of the output distribution at input ``vec`` (default uniform)."""
    vec = uniform_input(den) if vec is None else vec
    out = den.matrix() @ vec
    return dict(zip(leg_labels(den.cod), (float(x) for x in out)))


def distribution_doc(labels, coeffs, report=None, residual=None):
    """The structured output document shared by the command-line tools."""
    coeffs = [float(c) for c in coeffs]
    if residual is None:
        residual = max(0.0, 1.0 - float(sum(coeffs)))
    return {
        "space": list(labels),
        "coeffs": coeffs,
        "residual_mass": float(residual),
        "clamped_mass": float(report.clamped_mass) if report else 0.0,
    }


# -- positivity and norm checks --------------------------------------------------

@dataclass
class NormReport:
    passed: bool
    min_entry: float
    norm: float
    witness: object = None
    unchecked: str = ""

    def __bool__(self):
        return self.passed


class UnsupportedNorm(NotImplementedError):
    pass


def space_norm(vec, space):
    """Norm of a coefficient vector in ``space`` (moduli throughout)."""
    vec = np.abs(np.asarray(vec, dtype=float))
    if space.is_al:
        return float(vec.sum())
    if space.kind == "opspace":
        dom, cod = space.factors
        return op_norm(vec.reshape(cod.size, dom.size), dom, cod)
    if space.kind == "tensor":
        a, b = space.factors
        M = vec.reshape(a.size, b.size)
        if a.is_al:
            return float(sum(space_norm(row, b) for row in M))
        if b.is_al:
            return float(sum(space_norm(col, a) for col in M.T))
    raise UnsupportedNorm(f"no norm routine for {space.describe()}")


def op_norm(M, dom, cod, max_extreme=4096):
    """Regular norm of a matrix from ``dom`` to ``cod``."""
    M = np.abs(M)
    if M.size == 0:
        return 0.0
    if dom.is_al:
        return max(space_norm(M[:, j], cod) for j in range(dom.size))
    if dom.kind == "opspace":
        d1, c1 = dom.factors
        if not (d1.is_al and c1.is_al) or (c1.size + 1) ** d1.size > max_extreme:
            raise UnsupportedNorm("operator-space domain too large to enumerate")
        import itertools
        best = 0.0
        for choice in itertools.product(range(c1.size + 1), repeat=d1.size):
            Tm = np.zeros((c1.size, d1.size))
            for col, row in enumerate(choice):
                if row < c1.size:
                    Tm[row, col] = 1.0
            best = max(best, space_norm(M @ Tm.ravel(), cod))
        return best
    raise UnsupportedNorm(f"no norm routine for domain {dom.describe()}")


def verify_theorem11(den, atol_entry=1e-12, atol_norm=1e-9):
    """Positivity (entries >= -1e-12) and regular norm <= 1 + 1e-9, with witnesses."""
    if isinstance(den, ObserveDen):
        K = den.K
        mn = float(K.min()) if K.size else 0.0
        norms = K.max(axis=1) if K.size else np.zeros(0)
        norm = float(norms.max()) if norms.size else 0.0
        witness = None
        if mn < -atol_entry:
            witness = ("entry", np.unravel_index(int(K.argmin()), K.shape))
        elif norm > 1 + atol_norm:
            witness = ("input atom", den.dom[0][1].atoms[int(norms.argmax())])
        return NormReport(witness is None, mn, norm, witness)
    M = den.matrix()
    mn = float(M.min()) if M.size else 0.0
    cod, dom = den.cod_space, den.dom_space
    try:
        norm = op_norm(M, dom, cod)
    except UnsupportedNorm as exc:
        ok = mn >= -atol_entry
        return NormReport(ok, mn, float("nan"), None if ok else ("entry", np.unravel_index(int(M.argmin()), M.shape)),
                          unchecked=str(exc))
    witness = None
    if mn < -atol_entry:
        r, c = np.unravel_index(int(M.argmin()), M.shape)
        witness = ("entry", (cod.atoms[r] if r < cod.size else r, dom.atoms[c] if c < dom.size else c))
    elif norm > 1 + atol_norm:
        witness = ("norm", norm)
    return NormReport(witness is None, mn, norm, witness)
