"""Command-line driver.

Exit codes: 0 success, 1 parse or type error, 2 evaluation error (including
a failed verification suite).
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import suites
from . import syntax as S
from . import types as T
from .denote import (DenotationError, DiscretizationConfig, Evaluator, atom_label,
                     distribution_doc, input_vector, leg_labels)
from .finspace import SpaceMismatch

EXIT_OK, EXIT_TYPE, EXIT_EVAL = 0, 1, 2


class EvalFailure(Exception):
    pass


def _emit(doc, out):
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _config(args):
    return DiscretizationConfig.from_file(args.config) if args.config else DiscretizationConfig()


def _derivation(args):
    text = Path(args.file).read_text(encoding="utf-8")
    term = S.parse(text)
    ctx = T.parse_context(args.ctx) if args.ctx else T.EMPTY
    return T.Checker().check(ctx, term)


def cmd_typecheck(args):
    d = _derivation(args)
    doc = {"context": str(d.ctx), "result": d.show_result()}
    if args.tree:
        doc["derivation"] = d.to_dict()
    _emit(doc, args.out)
    return EXIT_OK


def _load_input(spec):
    if spec is None:
        return None
    p = Path(spec)
    return json.loads(p.read_text(encoding="utf-8") if p.exists() else spec)


def cmd_run(args):
    d = _derivation(args)
    ev = Evaluator(_config(args))
    den = ev.denote(d)
    vec = input_vector(den, _load_input(args.input))
    if isinstance(d.result, T.Arrow):
        (_, op), = den.cod
        dom, cod = op.factors
        M = (den.matrix() @ vec).reshape(cod.size, dom.size)
        doc = {"kind": "operator",
               "dom": [atom_label(a) for a in dom.atoms],
               "cod": [atom_label(a) for a in cod.atoms],
               "matrix": M.tolist(),
               "clamped_mass": ev.report.clamped_mass}
    else:
        out = den.matrix() @ vec
        doc = distribution_doc(leg_labels(den.cod), out, ev.report,
                               residual=max(0.0, float(vec.sum() - out.sum())))
    _emit(doc, args.out)
    return EXIT_OK


def _parse_value(text):
    low = text.strip().lower()
    if low in ("true", "false"):
        return low == "true"
    try:
        return int(low)
    except ValueError:
        return float(low)


def cmd_posterior(args):
    d = _derivation(args)
    if not (isinstance(d.result, T.Arrow) and any(n.rule == "observe" for n in d.walk())):
        raise EvalFailure(f"posterior needs a program typed by observe, got {d.show_result()}")
    ev = Evaluator(_config(args))
    den = ev.denote(d)
    (_, op), = den.cod
    evidence, prior = op.factors
    G = (den.matrix() @ input_vector(den, _load_input(args.input))).reshape(prior.size, evidence.size)
    y = _parse_value(args.observe)
    ground = T.erase(d.result.dom)
    parent = evidence.root
    idx = ev.snap(y, ground, parent) if not isinstance(y, bool) else int(y)
    snapped = parent.atoms[idx]
    where = np.flatnonzero(evidence.root_index() == idx)
    if where.size == 0 or not G[:, where[0]].any():
        raise EvalFailure(f"observation {atom_label(snapped)} has zero marginal mass under the model")
    post = G[:, where[0]]
    doc = distribution_doc([atom_label(a) for a in prior.atoms], post, ev.report, residual=0.0)
    doc["observed"] = atom_label(snapped)
    doc["snap_distance"] = 0.0 if isinstance(y, bool) else float(np.max(np.abs(
        np.subtract(snapped, y))))
    _emit(doc, args.out)
    return EXIT_OK


def cmd_verify(args):
    if args.suite == "th11":
        rep = suites.th11_suite(n=args.n or 500, seed=args.seed)
    elif args.suite == "oracle":
        rep = suites.oracle_suite(n=args.n or 100, seed=args.seed, corpus=args.corpus)
    else:
        rep = suites.naturality_suite(n=args.n or 100, seed=args.seed)
    _emit(rep, args.out)
    return EXIT_OK if rep["passed"] else EXIT_EVAL


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON discretization config")
    common.add_argument("--out", help="write the JSON document here instead of stdout")
    p = argparse.ArgumentParser(prog="oppl", description="Typecheck and evaluate probabilistic programs.")
    sub = p.add_subparsers(dest="command", required=True)
    add = sub.add_parser

    def sub_parser(name, **kw):
        return add(name, parents=[common], **kw)

    sub.add_parser = sub_parser

    def with_file(sp):
        sp.add_argument("file")
        sp.add_argument("--ctx", default="", help='typing context, e.g. "x0: bool, x1: int"')
        return sp

    tc = with_file(sub.add_parser("typecheck", help="print the result type or store"))
    tc.add_argument("--tree", action="store_true", help="include the derivation tree")
    tc.set_defaults(func=cmd_typecheck)

    run = with_file(sub.add_parser("run", help="evaluate and print the output distribution"))
    run.add_argument("--input", help='input measure per slot as JSON or a file, e.g. {"x0": {"true": 1}}')
    run.set_defaults(func=cmd_run)

    post = with_file(sub.add_parser("posterior", help="condition an observe program on a value"))
    post.add_argument("--observe", required=True)
    post.add_argument("--input", help="input measure per slot, as for run")
    post.set_defaults(func=cmd_posterior)

    ver = sub.add_parser("verify", help="run a verification suite")
    ver.add_argument("--suite", choices=["th11", "oracle", "naturality"], default="th11")
    ver.add_argument("-n", type=int, default=None, help="number of random instances")
    ver.add_argument("--seed", type=int, default=0)
    ver.add_argument("--corpus", help="directory of .oppl programs with .json sidecars (oracle suite)")
    ver.set_defaults(func=cmd_verify)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (S.ParseError, S.Diagnostic) as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_TYPE
    except (DenotationError, SpaceMismatch, EvalFailure, ValueError) as exc:
        sys.stderr.write(f"evaluation error: {exc}\n")
        return EXIT_EVAL


if __name__ == "__main__":
    sys.exit(main())
