import pytest

from oppl import syntax as S
from oppl import types as T

GAUSSIAN = "let x1 = sample(normal(0, 1)) in observe(sample(normal(x1, 1)))"
GAUSSIAN_TYPE = "(real, sample(normal(sample(normal(0, 1)), 1))) -> (real, sample(normal(0, 1)))"


def check(src, ctx=""):
    d = T.typecheck(ctx, src)
    assert T.validate(d) == []
    assert T.linearity_violations(d) == []
    return d


@pytest.mark.parametrize("src, ctx, result, context", [
    (GAUSSIAN, "", GAUSSIAN_TYPE, "[]"),
    ("x1 := 3.5 ; x2 := 7.3", "", "store [x1: (real, 3.5), x2: (real, 7.3)]", "[x1: real, x2: real]"),
    ("x0 := true ; while x0 do x0 := sample(bernoulli(0.5))", "", "store [x0: bool]", "[x0: bool]"),
    ("x0 := true ; while x0 do x0 := true", "", "store [x0: (bool, true)]", "[x0: bool]"),
    ("fn x0 . add(x0, 1)", "x0: int", "int -> int", "[]"),
    ("(fn x0 . add(x0, 1))(2)", "x0: int", "int", "[]"),
    ("sampler(sample(bernoulli(0.3)))", "", "M bool", "[]"),
    ("if x0 then 1 else 2", "x0: bool", "int", "[x0: bool]"),
    ("x0 := add(x0, 1)", "x0: int", "store [x0: int]", "[x0: int]"),
    ("3", "", "int", "[]"),
    ("3.5", "", "real", "[]"),
    ("true", "", "bool", "[]"),
    ("skip", "", "unit", "[]"),
    ("[[2.0]]", "", "posdef(1)", "[]"),
])
def test_golden_judgements(src, ctx, result, context):
    d = check(src, ctx)
    assert d.show_result() == result
    assert str(d.ctx) == context


def test_prior_threads_through_an_assignment_and_a_let():
    d = check("x1 := sample(normal(0, 1)) ; let x2 = x1 in observe(sample(normal(x2, 1)))")
    assert d.show_result() == GAUSSIAN_TYPE


def test_let_shadows_a_declared_slot():
    d = check("let x0 = 1 in add(x0, x1)", "x0: int, x1: int")
    assert str(d.ctx) == "[x1: int]"


def test_derivation_serialises_to_plain_data():
    doc = check(GAUSSIAN).to_dict()
    assert doc["rule"] == "let" and doc["result"] == GAUSSIAN_TYPE
    rules = set()
    stack = [doc]
    while stack:
        n = stack.pop()
        rules.add(n["rule"])
        stack.extend(n["premises"])
    assert {"observe", "sample", "var"} <= rules


@pytest.mark.parametrize("src, ctx, rule", [
    ("let x0 = 1 in add(x0, x0)", "", "builtin-disjoint"),
    ("add(x0, x0)", "x0: real", "builtin-disjoint"),
    ("x1 := x0 ; add(x0, x1)", "x0: real", "seq-linearity"),
    ("x5", "", "var-untyped"),
    ("foo(1)", "", "builtin-unknown"),
    ("add(true, 1)", "", "builtin-arg-type"),
    ("sample(1)", "", "sample-arg-M"),
    ("observe(1)", "", "observe-bayes-context"),
    ("let x0 = sample(bernoulli(0.5)) in observe(sample(bernoulli(0.5)))", "", "observe-bayes-context"),
    ("if 1 then 2 else 3", "", "if-test-bool"),
    ("if true then 1 else true", "", "if-branch-type"),
    ("let x1 = sample(normal(0, 1)) in if x0 then x1 else 2.0", "x0: bool", "if-order-complete"),
    ("while 1 do x0 := 1", "", "while-test-bool"),
    ("let x0 = 1 in 2", "", "let-unused"),
    ("(1)(2)", "", "app-not-function"),
    ("(fn x0 . add(x0, 1))(true)", "x0: real", "app-arg-type"),
    ("x0 := 1 ; x0 := true", "", "seq-compat-mid"),
    ("x0 := true", "x0: int", "context-mismatch"),
    ("1 ; 2", "", "seq-value"),
])
def test_rejections_name_the_rule_and_location(src, ctx, rule):
    with pytest.raises(T.TypingError) as exc:
        T.typecheck(ctx, src)
    err = exc.value
    assert err.rule == rule
    assert err.span is not None
    assert f"[{rule}]" in str(err)


def test_erase_drops_priors():
    d = check(GAUSSIAN)
    assert T.erase(d.result) == T.Arrow(T.RealV(), T.RealV())


def test_subtyping_forgets_priors():
    d = check("x1 := 3.5")
    bayes = d.result(1)
    assert T.subtype(bayes, T.RealV())
    assert not T.subtype(T.RealV(), bayes)


def test_context_parsing_round_trips():
    ctx = T.parse_context("x0: bool, x3: int")
    assert str(ctx) == "[x0: bool, x3: int]"
    assert T.parse_context(str(ctx)[1:-1]) == ctx


def test_validate_flags_a_tampered_derivation():
    x0 = T.Derivation("var", T.parse_context("x0: int"), S.Var(0), T.IntV(1))
    clash = T.Derivation("builtin", T.EMPTY, S.parse("add(x0, x0)"), T.IntV(1), (x0, x0),
                         {"op": "add"})
    assert T.validate(clash) == ["builtin at add(x0, x0): argument contexts overlap"]
    assert T.linearity_violations(clash) == [("builtin", "add(x0, x0)", [0])]
