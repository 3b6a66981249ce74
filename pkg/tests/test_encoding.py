from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import finite_difference, rel_err
from typed_synth.encoding import (
    EmptyPool, Overlong, ShapeMismatch, UnknownChar, encode_pair, encode_pairs, encode_pairs_backward,
    encode_type_string, encode_type_strings, encode_type_strings_backward, fix_sample_count,
    init_pair_encoder, init_type_encoder, one_hot, pair_inputs,
)

CM = {c: i for i, c in enumerate("ab() ")}


def test_one_hot_layout():
    x = one_hot("ab", CM, 4)
    assert x.shape == (4, 6)
    assert x[0, CM["a"]] == 1 and x[1, CM["b"]] == 1
    np.testing.assert_array_equal(x[2:, 5], [1, 1])
    np.testing.assert_array_equal(x.sum(axis=1), 1)


def test_one_hot_errors():
    with pytest.raises(Overlong):
        one_hot("aaaaa", CM, 4)
    with pytest.raises(UnknownChar):
        one_hot("z", CM, 4)
    assert one_hot("", CM, 3)[:, 5].sum() == 3


@given(st.integers(1, 12), st.integers(1, 30), st.integers(0, 2**32 - 1))
def test_fix_sample_count(k, n, seed):
    pool = list(range(k))
    out = fix_sample_count(pool, n, np.random.default_rng(seed))
    assert len(out) == n
    counts = Counter(out)
    if k >= n:
        assert max(counts.values()) == 1
    else:
        # every item appears floor(n/k) or floor(n/k)+1 times
        assert set(counts) == set(pool)
        assert set(counts.values()) <= {n // k, n // k + 1}


def test_fix_sample_count_empty():
    with pytest.raises(EmptyPool):
        fix_sample_count([], 3, np.random.default_rng(0))


def test_pair_inputs_with_types():
    x_in, x_out = pair_inputs(["a", "b"], ["()", "ab"], CM, 4, type_texts=("a", "b"))
    assert x_in.shape == x_out.shape == (4, 2, 12)
    # the type half is identical across the batch
    np.testing.assert_array_equal(x_in[:, 0, 6:], x_in[:, 1, 6:])
    np.testing.assert_array_equal(x_out[:, 0, 6:], one_hot("b", CM, 4))


@pytest.mark.parametrize("typed", [False, True])
def test_pair_feature_width(typed):
    H, T, layers = 3, 5, 2
    D = 6 * (2 if typed else 1)
    p = {}
    init_pair_encoder(p, D, H, layers, np.random.default_rng(0))
    v = encode_pair("a", "b", p, CM, T, ("a", "b") if typed else None)
    # two strings, T steps, 2H per step from the bidirectional top layer
    assert v.shape == (2 * T * 2 * H,)


def test_encoder_width_mismatch():
    p = {}
    init_pair_encoder(p, 6, 2, 1, np.random.default_rng(0))
    x_in, x_out = pair_inputs(["a"], ["b"], CM, 3, type_texts=("a", "b"))
    with pytest.raises(ShapeMismatch):
        encode_pairs(p, x_in, x_out)
    with pytest.raises(ShapeMismatch):
        encode_pairs(p, x_in[:, :, :6], x_out[:2, :, :6])


def test_type_string_encoding():
    p = {}
    init_type_encoder(p, "ty", 6, 3, 4, 1, np.random.default_rng(0))
    v = encode_type_string("(a)", p, "ty", CM, 5)
    assert v.shape == (5 * 4,)
    batch, _ = encode_type_strings(p, "ty", ["(a)", "b"], CM, 5)
    np.testing.assert_allclose(batch[0], v, atol=1e-6)


def test_encoder_gradients():
    rng = np.random.default_rng(4)
    p = {}
    init_pair_encoder(p, 6, 2, 2, rng, np.float64)
    init_type_encoder(p, "ty", 6, 2, 3, 1, rng, np.float64)
    x_in, x_out = pair_inputs(["ab", "("], ["b", ")a"], CM, 3, dtype=np.float64)
    wf = rng.normal(size=(2, 2 * 3 * 4))
    wt = rng.normal(size=(2, 3 * 3))
    texts = ["a b", "()"]

    def loss():
        f, _ = encode_pairs(p, x_in, x_out)
        y, _ = encode_type_strings(p, "ty", texts, CM, 3)
        return float((f * wf).sum() + (y * wt).sum())

    grads = {}
    _, c1 = encode_pairs(p, x_in, x_out)
    encode_pairs_backward(p, c1, wf, grads)
    _, c2 = encode_type_strings(p, "ty", texts, CM, 3)
    encode_type_strings_backward(p, "ty", c2, wt, grads)
    worst = 0.0
    for k, v in p.items():
        idx = tuple(rng.integers(s) for s in v.shape)
        worst = max(worst, rel_err(finite_difference(loss, v, idx), grads[k][idx]))
    assert worst < 1e-5
