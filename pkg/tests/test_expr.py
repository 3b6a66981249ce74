import pytest
from hypothesis import given, strategies as st

from typed_synth.expr import (
    App, DSLSyntaxError, Hole, UnknownHole, UnknownOperator, Var, find_hole, holes, node_count, parse_expr,
    print_expr, renumber_holes, replace_hole, spine,
)
from typed_synth.types import BOOL, TVar, parse_type

OPS = ["just", "cons", "nil", "zero", "length", "compose", "unzip", "pair"]


@st.composite
def exprs(draw, depth=3):
    if depth == 0 or draw(st.booleans()):
        if draw(st.integers(0, 4)) == 0:
            return Hole(0, draw(st.sampled_from([TVar("a"), BOOL, parse_type("[Int]"), parse_type("a -> Maybe a")])))
        return Var(draw(st.sampled_from(OPS)))
    head = Var(draw(st.sampled_from(OPS)))
    for _ in range(draw(st.integers(1, 3))):
        head = App(head, draw(exprs(depth=depth - 1)))
    return head


@given(exprs())
def test_print_parse_roundtrip(e):
    e = renumber_holes(e)
    assert parse_expr(print_expr(e)) == e


@pytest.mark.parametrize(
    "text,expected",
    [
        ("false", Var("false")),
        ("(and (false) (false))", App(App(Var("and"), Var("false")), Var("false"))),
        ("undefined :: Bool", Hole(0, BOOL)),
    ],
)
def test_parse_examples(text, expected):
    assert parse_expr(text) == expected


def test_print_hole_application():
    e = App(Var("just"), Hole(0, TVar("a")))
    assert print_expr(e) == "(just (undefined :: a))"


def test_sample_task_canonical_text():
    e = parse_expr("(compose (just) (unzip))")
    assert print_expr(e) == "(compose (just) (unzip))"
    assert node_count(e) == 3


@pytest.mark.parametrize("text", ["(just", "just)", "()", "(just (zero)) x(", "undefined : Int"])
def test_syntax_errors_report_offset(text):
    with pytest.raises((DSLSyntaxError, UnknownOperator)) as info:
        parse_expr(text)
    if isinstance(info.value, DSLSyntaxError):
        assert 0 <= info.value.offset <= len(text)


def test_unknown_operator():
    with pytest.raises(UnknownOperator):
        parse_expr("(frobnicate zero)")


def test_hole_helpers():
    e = parse_expr("(cons (undefined :: a) (undefined :: [a]))")
    assert [h.id for h in holes(e)] == [0, 1]
    assert find_hole(e, 1).ann == parse_type("[a]")
    with pytest.raises(UnknownHole):
        find_hole(e, 7)
    filled = replace_hole(e, 0, Var("zero"))
    assert print_expr(filled) == "(cons (zero) (undefined :: [a]))"
    head, args = spine(filled)
    assert head == Var("cons") and len(args) == 2
    assert node_count(filled) == 2
