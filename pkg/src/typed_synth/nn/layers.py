"""Parameterised layers as pairs of forward/backward functions.

Parameters live in a flat ``dict`` of named arrays; gradients go into a
dict with the same keys.  Sequences are time-major: ``[T, B, D]``.
"""
from __future__ import annotations

from typing import Dict, List, Tuple

import numpy as np

from .kernels import lstm_backward_loop, lstm_forward_loop

Params = Dict[str, np.ndarray]


def accumulate(grads: Params, key: str, value: np.ndarray) -> None:
    if key in grads:
        grads[key] += value
    else:
        grads[key] = np.array(value, copy=True)


def uniform(rng: np.random.Generator, shape, bound: float, dtype) -> np.ndarray:
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


# -- LSTM -------------------------------------------------------------------

def init_lstm(p: Params, name: str, D: int, H: int, rng, dtype=np.float32) -> None:
    bound = 1.0 / np.sqrt(H)
    p[f"{name}.Wx"] = uniform(rng, (D, 4 * H), bound, dtype)
    p[f"{name}.Wh"] = uniform(rng, (H, 4 * H), bound, dtype)
    b = np.zeros(4 * H, dtype=dtype)
    b[H:2 * H] = 1.0
    p[f"{name}.b"] = b


def lstm_forward(p: Params, name: str, x: np.ndarray):
    Wx, Wh, b = p[f"{name}.Wx"], p[f"{name}.Wh"], p[f"{name}.b"]
    T, B, _ = x.shape
    H = Wh.shape[0]
    xw = np.ascontiguousarray(x @ Wx + b)
    h = np.empty((T, B, H), dtype=xw.dtype)
    c = np.empty_like(h)
    gates = np.empty((T, B, 4 * H), dtype=xw.dtype)
    lstm_forward_loop(xw, np.ascontiguousarray(Wh), h, c, gates)
    return h, (x, h, c, gates)


def lstm_backward(p: Params, name: str, cache, dh: np.ndarray, grads: Params) -> np.ndarray:
    x, h, c, gates = cache
    Wx, Wh = p[f"{name}.Wx"], p[f"{name}.Wh"]
    dz = np.empty_like(gates)
    dWh = np.zeros_like(Wh)
    lstm_backward_loop(np.ascontiguousarray(Wh), h, c, gates, np.ascontiguousarray(dh, dtype=h.dtype), dz, dWh)
    T, B, G = dz.shape
    flat = dz.reshape(T * B, G)
    accumulate(grads, f"{name}.Wx", x.reshape(T * B, -1).T @ flat)
    accumulate(grads, f"{name}.Wh", dWh)
    accumulate(grads, f"{name}.b", flat.sum(axis=0))
    return (flat @ Wx.T).reshape(T, B, -1)


def init_bilstm(p: Params, name: str, D: int, H: int, rng, dtype=np.float32) -> None:
    init_lstm(p, f"{name}.fw", D, H, rng, dtype)
    init_lstm(p, f"{name}.bw", D, H, rng, dtype)


def bilstm_forward(p: Params, name: str, x: np.ndarray):
    """Concatenated forward and (time-realigned) backward hidden states."""
    hf, cf = lstm_forward(p, f"{name}.fw", x)
    hb, cb = lstm_forward(p, f"{name}.bw", np.ascontiguousarray(x[::-1]))
    return np.concatenate([hf, hb[::-1]], axis=2), (cf, cb, hf.shape[2])


def bilstm_backward(p: Params, name: str, cache, dout: np.ndarray, grads: Params) -> np.ndarray:
    cf, cb, H = cache
    dxf = lstm_backward(p, f"{name}.fw", cf, dout[:, :, :H], grads)
    dxb = lstm_backward(p, f"{name}.bw", cb, dout[::-1, :, H:], grads)
    return dxf + dxb[::-1]


def init_stack(p: Params, name: str, D: int, H: int, layers: int, rng, dtype=np.float32) -> None:
    for k in range(layers):
        init_bilstm(p, f"{name}.l{k}", D if k == 0 else 2 * H, H, rng, dtype)


def stack_layers(p: Params, name: str) -> int:
    k = 0
    while f"{name}.l{k}.fw.Wx" in p:
        k += 1
    return k


def stack_forward(p: Params, name: str, x: np.ndarray):
    caches: List = []
    for k in range(stack_layers(p, name)):
        x, cache = bilstm_forward(p, f"{name}.l{k}", x)
        caches.append(cache)
    return x, caches


def stack_backward(p: Params, name: str, caches, dout: np.ndarray, grads: Params) -> np.ndarray:
    for k in range(len(caches) - 1, -1, -1):
        dout = bilstm_backward(p, f"{name}.l{k}", caches[k], dout, grads)
    return dout


# -- dense ------------------------------------------------------------------

def init_linear(p: Params, name: str, D: int, K: int, rng, dtype=np.float32) -> None:
    bound = 1.0 / np.sqrt(D)
    p[f"{name}.W"] = uniform(rng, (D, K), bound, dtype)
    p[f"{name}.b"] = np.zeros(K, dtype=dtype)


def linear_forward(p: Params, name: str, x: np.ndarray) -> np.ndarray:
    return x @ p[f"{name}.W"] + p[f"{name}.b"]


def linear_backward(p: Params, name: str, x: np.ndarray, dy: np.ndarray, grads: Params) -> np.ndarray:
    x2 = x.reshape(-1, x.shape[-1])
    dy2 = dy.reshape(-1, dy.shape[-1])
    accumulate(grads, f"{name}.W", x2.T @ dy2)
    accumulate(grads, f"{name}.b", dy2.sum(axis=0))
    return dy @ p[f"{name}.W"].T


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def param_shapes(p: Params) -> Dict[str, Tuple[int, ...]]:
    return {k: tuple(v.shape) for k, v in p.items()}
