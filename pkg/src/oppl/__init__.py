"""A higher-order probabilistic language with conditioning, evaluated to
positive operators between finite ordered vector spaces."""
from .denote import DiscretizationConfig, Evaluator, denote, verify_theorem11
from .syntax import parse, pretty
from .types import Checker, typecheck

__all__ = ["Checker", "DiscretizationConfig", "Evaluator", "denote", "parse", "pretty",
           "typecheck", "verify_theorem11"]
__version__ = "0.1.0"
