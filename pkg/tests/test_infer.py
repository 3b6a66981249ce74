import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_typechecks, print_tree, syntactic_trees, toy_instances, universe
from typed_synth.datagen import enumerate_programs
from typed_synth.expr import App, Hole, Var, holes, parse_expr, print_expr, renumber_holes
from typed_synth.infer import (
    DSLTypeError, UnsatisfiedConstraint, elaborate, infer_type, sane_type, type_checks,
)
from typed_synth.operators import EXPERIMENT_OPERATORS, fill_hole, operator_set, root_ppt, schemes, unroll_grammar
from typed_synth.types import TVar, parse_scheme, parse_type, show_type

TOY = ("just", "length", "nil")


def to_expr(tree):
    if tree[0] == "hole":
        return Hole(0, TVar("h"))
    e = Var(tree[1])
    for k in tree[2]:
        e = App(e, to_expr(k))
    return renumber_holes(e)


@pytest.mark.parametrize(
    "text,scheme",
    [
        ("false", "Bool"),
        ("(compose (just) (unzip))", "[(a, b)] -> Maybe ([a], [b])"),
        ("(length (nil))", "Int"),
        ("(fmap (fromEnum))", "(Functor a, Enum b) => a b -> a Int"),
        ("(foldMap (just))", "Foldable a => a b -> Maybe b"),
        ("(cons (zero))", "[Int] -> [Int]"),
    ],
)
def test_principal_types(text, scheme):
    assert str(infer_type(parse_expr(text))) == scheme


def test_sample_task_instance_is_an_instance():
    s = infer_type(parse_expr("(compose (just) (unzip))"))
    inst = parse_type("[(Int, Char)] -> Maybe ([Int], [Char])")
    from typed_synth.types import apply, unify

    sub = unify(s.body, inst)
    assert apply(sub, s.body) == inst


@pytest.mark.parametrize(
    "text,exc",
    [
        ("(fromEnum (just (undefined :: a)))", UnsatisfiedConstraint),
        ("(length (false))", DSLTypeError),
        ("(zero (zero))", DSLTypeError),
        ("mempty", UnsatisfiedConstraint),
        ("(length (length))", DSLTypeError),
    ],
)
def test_type_errors(text, exc):
    with pytest.raises(exc):
        infer_type(parse_expr(text))


def test_unsatisfied_constraint_names_the_class():
    with pytest.raises(UnsatisfiedConstraint, match="Enum"):
        infer_type(parse_expr("(fromEnum (just (undefined :: a)))"))


@pytest.mark.parametrize(
    "text,ok",
    [("(and (false) (undefined :: Bool))", True), ("(length (false))", False), ("undefined :: a", True),
     ("(mappend (mempty))", True), ("(elem (zero) (just (zero)))", True), ("(elem (nil) (zero))", False)],
)
def test_type_checks_examples(text, ok):
    assert type_checks(parse_expr(text)) is ok


def test_expected_type_pins_the_root():
    e = parse_expr("(just (undefined :: a))")
    assert type_checks(e, expected=parse_type("Maybe Int"))
    assert not type_checks(e, expected=parse_type("[Int]"))


@pytest.mark.parametrize(
    "scheme,ok",
    [("Int", True), ("[a -> b]", False), ("(a -> b) -> [a] -> [b]", True), ("Maybe (Int -> Int)", False),
     ("Enum a => a -> Int", True)],
)
def test_sane_type(scheme, ok):
    assert sane_type(parse_scheme(scheme)) is ok


def test_sane_type_rejects_compound_constraints():
    from typed_synth.types import Scheme

    s = Scheme(("a",), (("Enum", parse_type("a -> Bool")),), parse_type("a"))
    assert not sane_type(s)


def test_elaborate_gives_concrete_operator_types():
    tys = elaborate(parse_expr("(compose (just) (unzip))"), parse_type("[(Int, Char)] -> Maybe ([Int], [Char])"))
    assert [show_type(t) for t in tys] == [
        "(([Int], [Char]) -> Maybe ([Int], [Char])) -> ([(Int, Char)] -> ([Int], [Char])) -> [(Int, Char)] -> Maybe ([Int], [Char])",
        "([Int], [Char]) -> Maybe ([Int], [Char])",
        "[(Int, Char)] -> ([Int], [Char])",
    ]


# -- brute-force oracle on a toy grammar --------------------------------------

def test_toy_type_checks_matches_brute_force():
    inst = toy_instances(universe(2))
    env = schemes(operator_set(TOY))
    trees = syntactic_trees(TOY, 2, holes=True)
    assert len(trees) > 50
    bad = [print_tree(t) for t in trees if brute_typechecks(t, inst) != type_checks(to_expr(t), env)]
    assert bad == []


def test_toy_enumeration_matches_brute_force():
    inst = toy_instances(universe(2))
    rules = unroll_grammar(operator_set(TOY))
    got = {print_expr(p) for p in enumerate_programs(rules, 2)}
    want = {print_expr(to_expr(t)) for t in syntactic_trees(TOY, 2) if brute_typechecks(t, inst)}
    assert got == want


# -- properties ---------------------------------------------------------------

RULES = unroll_grammar(operator_set(EXPERIMENT_OPERATORS))


@st.composite
def partial_programs(draw, steps=3):
    e = root_ppt()
    for _ in range(draw(st.integers(1, steps))):
        hs = holes(e)
        if not hs:
            break
        h = draw(st.sampled_from(hs))
        e = fill_hole(e, h.id, draw(st.sampled_from(RULES)))
    return e


@settings(max_examples=200)
@given(partial_programs())
def test_inference_invariant_under_hole_renumbering(e):
    a = type_checks(e)
    b = type_checks(renumber_holes(e, start=40))
    assert a == b
    if a:
        assert str(infer_type(e)) == str(infer_type(renumber_holes(e, start=40)))


@settings(max_examples=200)
@given(partial_programs())
def test_filling_a_hole_never_rescues_a_failure(e):
    # pruning during enumeration relies on this monotonicity
    if type_checks(e):
        return
    for h in holes(e):
        for r in RULES[:10]:
            assert not type_checks(fill_hole(e, h.id, r))
