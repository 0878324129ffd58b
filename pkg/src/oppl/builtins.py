"""Built-in operations: a data-driven signature table and the atom-level
functions that the semantics linearizes."""
from __future__ import annotations

import json
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

import numpy as np
from scipy.special import ndtr

from .types import TypingError, parse_type, show_type


@dataclass(frozen=True)
class Signature:
    args: tuple
    result: object

    def __str__(self):
        return "(" + ", ".join(show_type(a) for a in self.args) + f") -> {show_type(self.result)}"


class BuiltinTable:
    """Signatures keyed by operation name, each with one or more overloads."""

    def __init__(self, entries):
        self.entries = entries

    @classmethod
    def from_json(cls, text):
        return cls(json.loads(text))

    @classmethod
    def from_file(cls, path):
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(fh.read())

    def names(self):
        return sorted(self.entries)

    def signatures(self, name, param=None):
        if name not in self.entries:
            return None
        out = []
        for spec in self.entries[name]:
            wants_param = bool(spec.get("param"))
            if wants_param and (param is None or param < 1):
                raise TypingError(f"{name} needs a positive static parameter, as in {name}[3](...)",
                                  rule="builtin-param")
            if not wants_param and param is not None:
                raise TypingError(f"{name} takes no static parameter", rule="builtin-param")
            result = spec["result"].replace("{k}", str(param)) if wants_param else spec["result"]
            out.append(Signature(tuple(parse_type(a) for a in spec["args"]), parse_type(result)))
        return out


@lru_cache(maxsize=1)
def default_table():
    text = resources.files("oppl").joinpath("data/builtins.json").read_text(encoding="utf-8")
    return BuiltinTable.from_json(text)


# -- atom-level implementations ---------------------------------------------
#
# Ground-valued operations map argument atoms to a result atom value (the
# semantics snaps it to the output grid). Distribution-valued operations get
# the output space's atoms and return (masses, clamped_mass).

GROUND_IMPLS = {
    "or": lambda a, b: bool(a) or bool(b),
    "and": lambda a, b: bool(a) and bool(b),
    "xor": lambda a, b: bool(a) != bool(b),
    "not": lambda a: not a,
    "add": lambda a, b: a + b,
    "mul": lambda a, b: a * b,
    "neg": lambda a: -a,
    "eq": lambda a, b: a == b,
    "lt": lambda a, b: a < b,
}


def grid_masses(mean, sd, points):
    """Bin masses of N(mean, sd) on sorted grid points.

    Bins are bounded by midpoints between neighbours; the two edge bins
    absorb the tails. Returns (masses, clamped) where ``clamped`` is the
    tail mass beyond half a step outside the grid.
    """
    points = np.asarray(points, dtype=float)
    if sd <= 0:
        out = np.zeros(len(points))
        out[int(np.argmin(np.abs(points - mean)))] = 1.0
        h = points[1] - points[0] if len(points) > 1 else 0.0
        clamped = 1.0 if (mean < points[0] - h / 2 or mean > points[-1] + h / 2) else 0.0
        return out, clamped
    mid = (points[1:] + points[:-1]) / 2
    edges = np.concatenate([[-np.inf], mid, [np.inf]])
    z = (edges - mean) / sd
    # lower-tail differences left of the mean, upper-tail ones right of it, for precision
    lower = ndtr(z[1:]) - ndtr(z[:-1])
    upper = ndtr(-z[:-1]) - ndtr(-z[1:])
    centre = (points - mean)
    masses = np.where(centre < 0, lower, upper)
    masses = np.clip(masses, 0.0, None)
    h = points[1] - points[0] if len(points) > 1 else 1.0
    clamped = float(ndtr((points[0] - h / 2 - mean) / sd) + ndtr(-(points[-1] + h / 2 - mean) / sd))
    return masses, clamped


def _bernoulli(args, param, atoms):
    p = float(args[0])
    q = min(max(p, 0.0), 1.0)
    return np.array([1.0 - q if a is False else q for a in atoms]), abs(p - q)


def _normal(args, param, atoms):
    return grid_masses(float(args[0]), float(args[1]), atoms)


def _uniform_fin(args, param, atoms):
    return np.full(len(atoms), 1.0 / len(atoms)), 0.0


def _uniform_int(args, param, atoms):
    atoms = list(atoms)
    out = np.zeros(len(atoms))
    for v in range(param):
        out[atoms.index(min(v, atoms[-1]))] += 1.0 / param
    clamped = max(0, param - len(atoms)) / param
    return out, clamped


DIST_IMPLS = {
    "bernoulli": _bernoulli,
    "normal": _normal,
    "uniform_fin": _uniform_fin,
    "uniform_int": _uniform_int,
}


def implementation(name):
    if name in GROUND_IMPLS:
        return "ground", GROUND_IMPLS[name]
    if name in DIST_IMPLS:
        return "dist", DIST_IMPLS[name]
    raise KeyError(f"no implementation for built-in {name!r}")
