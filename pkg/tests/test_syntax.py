import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oppl import syntax as S

GAUSSIAN = "let x1 = sample(normal(0, 1)) in observe(sample(normal(x1, 1)))"


def test_gaussian_program_ast():
    t = S.parse(GAUSSIAN)
    assert t == S.LetIn(
        1,
        S.Sample(S.BuiltinApp("normal", (S.ConstNat((0,)), S.ConstNat((1,))))),
        S.Observe(S.Sample(S.BuiltinApp("normal", (S.Var(1), S.ConstNat((1,)))))))


def test_literals():
    assert S.parse("3") == S.ConstNat((3,))
    assert S.parse("3.5") == S.ConstReal((3.5,))
    assert S.parse("(1, 2)") == S.ConstNat((1, 2))
    assert S.parse("true") == S.ConstFin(1, 2)
    assert S.parse("false") == S.ConstFin(0, 2)
    assert S.parse("skip") == S.ConstFin(0, 1)
    assert S.parse("2@5") == S.ConstFin(2, 5)
    assert S.parse("[[2.0]]") == S.ConstPosDef(((2.0,),))


def test_sequence_is_right_associative_and_looser_than_assignment():
    t = S.parse("x1 := 3.5 ; x2 := 7.3 ; x1")
    assert t == S.Seq(S.Assign(1, S.ConstReal((3.5,))),
                      S.Seq(S.Assign(2, S.ConstReal((7.3,))), S.Var(1)))


def test_application_and_parameterised_builtin():
    assert S.parse("(fn x0 . x0)(3)") == S.App(S.Fn(0, S.Var(0)), S.ConstNat((3,)))
    assert S.parse("uniform_int[3]()") == S.BuiltinApp("uniform_int", (), 3)


def test_while_body_is_a_single_assignment():
    t = S.parse("while x0 do x0 := false ; x0")
    assert isinstance(t, S.Seq) and isinstance(t.first, S.While)


def test_spans_record_line_and_column():
    t = S.parse("let x0 = 1 in\n  add(x0, 2)")
    assert t.body.span.line == 2 and t.body.span.col == 3


@pytest.mark.parametrize("text", ["", "let x0 = 1", "x0 := ", "(1, 2", "add(1,, 2)", "if true then 1",
                                  "x0 $ 1", "fn y . y"])
def test_syntax_errors_are_diagnostics_with_spans(text):
    with pytest.raises(S.ParseError) as exc:
        S.parse(text)
    assert exc.value.span is not None
    assert str(exc.value).startswith(f"{exc.value.span.line}:{exc.value.span.col}:")


def test_substitute_captures_nothing_and_requires_closed_terms():
    body = S.parse("sample(normal(x1, 1))")
    closed = S.parse("sample(normal(0, 1))")
    assert S.pretty(S.substitute(body, 1, closed)) == "sample(normal(sample(normal(0, 1)), 1))"
    assert S.substitute(S.parse("let x1 = 2 in x1"), 1, closed) == S.parse("let x1 = 2 in x1")
    with pytest.raises(ValueError):
        S.substitute(body, 1, S.Var(3))


def test_free_and_assigned_variables():
    t = S.parse("x1 := x2 ; add(x1, x3)")
    assert S.free_vars(t) == {2, 3}
    assert S.assigned(t) == {1}


# -- printer round-trip ----------------------------------------------------------

slot = st.integers(0, 5)
leaves = st.one_of(
    st.builds(lambda v: S.ConstNat((v,)), st.integers(0, 50)),
    st.builds(lambda v: S.ConstNat(tuple(v)), st.lists(st.integers(0, 9), min_size=2, max_size=3)),
    st.builds(lambda v: S.ConstReal((v,)), st.floats(0, 100, allow_nan=False).map(lambda x: round(x, 3))),
    st.builds(S.ConstFin, st.integers(0, 1), st.just(2)),
    st.builds(S.ConstFin, st.integers(0, 3), st.just(4)),
    st.builds(S.Var, slot),
)


def _extend(kids):
    return st.one_of(
        st.builds(lambda a, b: S.BuiltinApp("add", (a, b)), kids, kids),
        st.builds(lambda k: S.BuiltinApp("uniform_int", (), k), st.integers(1, 4)),
        st.builds(S.Assign, slot, kids),
        st.builds(S.Seq, kids, kids),
        st.builds(S.LetIn, slot, kids, kids),
        st.builds(S.Fn, slot, kids),
        st.builds(S.App, kids, kids),
        st.builds(S.If, kids, kids, kids),
        st.builds(S.While, kids, kids),
        st.builds(S.Sample, kids),
        st.builds(S.Sampler, kids),
        st.builds(S.Observe, kids),
    )


terms = st.recursive(leaves, _extend, max_leaves=12)


@settings(max_examples=300, deadline=None)
@given(terms)
def test_pretty_then_parse_is_identity(t):
    assert S.parse(S.pretty(t)) == t
