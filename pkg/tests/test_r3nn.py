import numpy as np
import pytest

from conftest import SMALL_OPS, finite_difference, rel_err
from typed_synth.expr import Hole
from typed_synth.operators import fill_hole, operator_set, root_ppt, rule_index, unroll_grammar
from typed_synth.r3nn import (
    HOLE_SYMBOL, MASK_VALUE, AllMasked, NoHoles, UnknownRule, build_tree, expansion_mask, init_r3nn,
    mask_illtyped, normalise, sample_expansion, score_tree, score_tree_backward,
)
from typed_synth.types import parse_type

RULES = unroll_grammar(operator_set(SMALL_OPS))
RIDX = rule_index(RULES)
SYMBOLS = list(SMALL_OPS) + [HOLE_SYMBOL]
SIDX = {s: i for i, s in enumerate(SYMBOLS)}


def rule(text):
    return next(r for r in RULES if str(r) == text)


def allowed(ppt, hole, expected=None):
    m = expansion_mask(ppt, RULES, [hole], expected=expected)[0]
    return {str(r) for r, ok in zip(RULES, m) if ok}


def test_build_tree_post_order():
    ppt = fill_hole(root_ppt(), 0, rule("(cons ? ?)"))
    ppt = fill_hole(ppt, 2, rule("(just ?)"))
    t = build_tree(ppt, RIDX, SIDX)
    assert t.root == len(t.nodes) - 1
    assert RULES[t.nodes[t.root].rule].name == "cons"
    assert len(t.leaves) == 2 and len(t.holes) == 2
    assert all(t.nodes[n].symbol == SIDX[HOLE_SYMBOL] for n in t.leaves)
    assert t.hole_positions() == [0, 1]
    for i, n in enumerate(t.nodes):
        assert all(c < i for c in n.children)


def test_build_tree_leaf_operator_and_unknown():
    t = build_tree(fill_hole(root_ppt(), 0, rule("zero")), RIDX, SIDX)
    assert len(t.nodes) == 1 and t.nodes[0].symbol == SIDX["zero"] and t.holes == []
    ppt = fill_hole(fill_hole(root_ppt(), 0, rule("(cons ?)")), 1, rule("zero"))
    only_cons = {k: v for k, v in RIDX.items() if k != ("cons", 1)}
    with pytest.raises(UnknownRule):
        build_tree(ppt, only_cons, SIDX)


# expected sets worked out by hand from the operator signatures
@pytest.mark.parametrize("ty, expected", [
    ("Int", {"(length ?)", "zero", "(fromEnum ?)"}),
    ("[Int]", {"nil", "(cons ? ?)"}),
    ("Maybe Int", {"(just ?)"}),
    ("Int -> Maybe Int", {"just"}),
    ("[Int] -> [Int]", {"(cons ?)"}),
])
def test_root_mask(ty, expected):
    assert allowed(root_ppt(), 0, parse_type(ty)) == expected


def test_nested_mask():
    target = parse_type("[Int]")
    ppt = fill_hole(root_ppt(target), 0, rule("(cons ? ?)"))
    first, second = build_tree(ppt, RIDX, SIDX).holes
    assert allowed(ppt, first, target) == {"(length ?)", "zero", "(fromEnum ?)"}
    assert allowed(ppt, second, target) == {"nil", "(cons ? ?)"}
    # without the target the element type is free
    assert "(just ?)" in allowed(ppt, first)


def test_mask_illtyped():
    z = np.array([[1.0, 2.0, 3.0]])
    m = np.array([[True, False, True]])
    out = mask_illtyped(z, m)
    assert out[0, 1] <= MASK_VALUE and out[0, 0] == 1.0 and out[0, 2] == 3.0
    assert normalise(out, "first")[0, 1] == 0.0
    with pytest.raises(AllMasked):
        mask_illtyped(z, np.zeros_like(m))


def test_normalise_policies():
    z = np.random.default_rng(0).normal(size=(3, 4))
    p = normalise(z, "first")
    assert np.isclose(p[0].sum(), 1) and not p[1:].any()
    np.testing.assert_allclose(p[0], np.exp(z[0]) / np.exp(z[0]).sum())
    q = normalise(z, "any")
    assert np.isclose(q.sum(), 1)
    np.testing.assert_allclose(q, np.exp(z) / np.exp(z).sum())
    with pytest.raises(ValueError):
        normalise(z, "best")


@pytest.mark.parametrize("policy", ["first", "any"])
def test_sampling_frequencies(policy):
    rng = np.random.default_rng(5)
    probs = normalise(rng.normal(size=(2, 3)), policy)
    n = 20000
    counts = np.zeros_like(probs)
    for _ in range(n):
        counts[sample_expansion(probs, rng, policy)] += 1
    sd = np.sqrt(n * probs * (1 - probs))
    assert (np.abs(counts - n * probs) <= 3 * sd + 1e-9).all()


def _setup(typed, seed=0, M=4, cond=6):
    # cond is the pooled conditioning vector, width M
    rng = np.random.default_rng(seed)
    p = {}
    init_r3nn(p, RULES, SYMBOLS, M, cond, rng, np.float64)
    c = rng.normal(size=M)
    ht = rt = None
    if typed:
        ht = rng.normal(size=(2, 5))
        rt = rng.normal(size=(len(RULES), 5))
    return p, c, ht, rt, rng


def test_score_tree_without_holes():
    p, c, *_ = _setup(False)
    with pytest.raises(NoHoles):
        score_tree(p, build_tree(fill_hole(root_ppt(), 0, rule("zero")), RIDX, SIDX), RULES, c)
    with pytest.raises(ValueError):
        init_r3nn({}, RULES, SYMBOLS, 3, 6, np.random.default_rng(0))


@pytest.mark.parametrize("typed", [False, True])
def test_score_gradients(typed):
    p, c, ht, rt, rng = _setup(typed)
    ppt = fill_hole(root_ppt(), 0, rule("(cons ? ?)"))
    ppt = fill_hole(ppt, 1, rule("(length ?)"))
    tree = build_tree(ppt, RIDX, SIDX)
    assert len(tree.holes) == 2
    w = rng.normal(size=(2, len(RULES)))

    def loss():
        return float((score_tree(p, tree, RULES, c, ht, rt)[0] * w).sum())

    z, cache = score_tree(p, tree, RULES, c, ht, rt)
    assert z.shape == (2, len(RULES))
    grads = {}
    d_cond, d_ht, d_rt = score_tree_backward(p, RULES, cache, w, grads, rt)
    worst = 0.0
    for k, v in p.items():
        if k not in grads:
            # branches for rules absent from the tree get no gradient
            continue
        idx = tuple(rng.integers(s) for s in v.shape)
        worst = max(worst, rel_err(finite_difference(loss, v, idx), grads[k][idx]))
    worst = max(worst, rel_err(finite_difference(loss, c, (2,)), d_cond[2]))
    if typed:
        worst = max(worst, rel_err(finite_difference(loss, ht, (1, 3)), d_ht[1, 3]))
        worst = max(worst, rel_err(finite_difference(loss, rt, (4, 0)), d_rt[4, 0]))
    # absolute discrepancies are ~1e-9, central-difference noise on gradients ~1e-4
    assert worst < 1e-4
