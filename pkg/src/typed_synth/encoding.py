"""Character one-hot encoding, recurrent string encoders and the io sampler."""
from __future__ import annotations

from typing import Dict, List, Optional, Sequence, Tuple, TypeVar

import numpy as np

from .nn.layers import (
    Params, init_linear, init_stack, linear_backward, linear_forward, stack_backward, stack_forward,
)

T_ = TypeVar("T_")


class UnknownChar(KeyError):
    pass


class Overlong(ValueError):
    pass


class EmptyPool(ValueError):
    pass


def one_hot(text: str, charmap: Dict[str, int], T: int, dtype=np.float32) -> np.ndarray:
    """``T x (len(charmap)+1)`` indicator rows; the last column marks padding."""
    if len(text) > T:
        raise Overlong(f"string of length {len(text)} exceeds T={T}")
    pad = len(charmap)
    out = np.zeros((T, pad + 1), dtype=dtype)
    for t, c in enumerate(text):
        if c not in charmap:
            raise UnknownChar(c)
        out[t, charmap[c]] = 1
    out[len(text):, pad] = 1
    return out


def fix_sample_count(pairs: Sequence[T_], n: int, rng: np.random.Generator) -> List[T_]:
    """Exactly ``n`` items: without replacement if enough, else whole repeats plus extras."""
    k = len(pairs)
    if k == 0:
        raise EmptyPool("cannot sample from an empty pool")
    if k >= n:
        return [pairs[i] for i in rng.choice(k, size=n, replace=False)]
    reps, extra = divmod(n, k)
    out = [p for _ in range(reps) for p in pairs]
    out += [pairs[i] for i in rng.choice(k, size=extra, replace=False)]
    return out


# -- recurrent encoders -----------------------------------------------------

class ShapeMismatch(ValueError):
    pass


def stack_one_hots(texts: Sequence[str], charmap: Dict[str, int], T: int, dtype=np.float32) -> np.ndarray:
    """Time-major ``[T, N, V]`` one-hot batch."""
    if not texts:
        return np.zeros((T, 0, len(charmap) + 1), dtype=dtype)
    return np.stack([one_hot(s, charmap, T, dtype) for s in texts], axis=1)


def pair_inputs(
    input_texts: Sequence[str],
    output_texts: Sequence[str],
    charmap: Dict[str, int],
    T: int,
    type_texts: Optional[Tuple[str, str]] = None,
    dtype=np.float32,
) -> Tuple[np.ndarray, np.ndarray]:
    """One-hot input/output batches; the typed variant appends the type one-hots per step."""
    x_in = stack_one_hots(input_texts, charmap, T, dtype)
    x_out = stack_one_hots(output_texts, charmap, T, dtype)
    if type_texts is not None:
        n = len(input_texts)
        t_in = np.repeat(one_hot(type_texts[0], charmap, T, dtype)[:, None, :], n, axis=1)
        t_out = np.repeat(one_hot(type_texts[1], charmap, T, dtype)[:, None, :], n, axis=1)
        x_in = np.concatenate([x_in, t_in], axis=2)
        x_out = np.concatenate([x_out, t_out], axis=2)
    return x_in, x_out


def init_pair_encoder(p: Params, D: int, H: int, layers: int, rng, dtype=np.float32) -> None:
    init_stack(p, "enc.in", D, H, layers, rng, dtype)
    init_stack(p, "enc.out", D, H, layers, rng, dtype)


def encode_pairs(p: Params, x_in: np.ndarray, x_out: np.ndarray):
    """``[N, 2*T*2H]`` features: top-layer states of every step, input then output."""
    if x_in.shape != x_out.shape:
        raise ShapeMismatch(f"input batch {x_in.shape} vs output batch {x_out.shape}")
    if x_in.shape[2] != p["enc.in.l0.fw.Wx"].shape[0]:
        raise ShapeMismatch(f"one-hot width {x_in.shape[2]} does not match the encoder")
    h_in, c_in = stack_forward(p, "enc.in", x_in)
    h_out, c_out = stack_forward(p, "enc.out", x_out)
    n = x_in.shape[1]
    feats = np.concatenate([h_in.transpose(1, 0, 2).reshape(n, -1), h_out.transpose(1, 0, 2).reshape(n, -1)], axis=1)
    return feats, (c_in, c_out, h_in.shape)


def encode_pairs_backward(p: Params, cache, dfeats: np.ndarray, grads: Params) -> None:
    c_in, c_out, shape = cache
    T, n, W = shape
    half = T * W
    d_in = dfeats[:, :half].reshape(n, T, W).transpose(1, 0, 2)
    d_out = dfeats[:, half:].reshape(n, T, W).transpose(1, 0, 2)
    stack_backward(p, "enc.in", c_in, d_in, grads)
    stack_backward(p, "enc.out", c_out, d_out, grads)


def encode_pair(
    input_text: str,
    output_text: str,
    p: Params,
    charmap: Dict[str, int],
    T: int,
    type_texts: Optional[Tuple[str, str]] = None,
) -> np.ndarray:
    """Feature vector of one io pair (``4HT`` plain, ``8HT`` with types at doubled width)."""
    dtype = p["enc.in.l0.fw.Wx"].dtype
    x_in, x_out = pair_inputs([input_text], [output_text], charmap, T, type_texts, dtype)
    feats, _ = encode_pairs(p, x_in, x_out)
    return feats[0]


def init_type_encoder(p: Params, name: str, V: int, H: int, M: int, layers: int, rng, dtype=np.float32) -> None:
    init_stack(p, name, V, H, layers, rng, dtype)
    init_linear(p, f"{name}.proj", 2 * H, M, rng, dtype)


def encode_type_strings(p: Params, name: str, texts: Sequence[str], charmap: Dict[str, int], T: int):
    """``[N, T*M]``: recurrent states projected to ``M`` per step, flattened."""
    dtype = p[f"{name}.proj.W"].dtype
    x = stack_one_hots(texts, charmap, T, dtype)
    h, caches = stack_forward(p, name, x)
    y = linear_forward(p, f"{name}.proj", h)
    n = len(texts)
    return y.transpose(1, 0, 2).reshape(n, -1), (caches, h)


def encode_type_strings_backward(p: Params, name: str, cache, dy: np.ndarray, grads: Params) -> None:
    caches, h = cache
    T, n, _ = h.shape
    dy = dy.reshape(n, T, -1).transpose(1, 0, 2)
    dh = linear_backward(p, f"{name}.proj", h, dy, grads)
    stack_backward(p, name, caches, dh, grads)


def encode_type_string(type_text: str, p: Params, name: str, charmap: Dict[str, int], T: int) -> np.ndarray:
    return encode_type_strings(p, name, [type_text], charmap, T)[0][0]
