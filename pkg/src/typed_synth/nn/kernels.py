"""LSTM time loops, compiled with numba when available.

Set ``TYPED_SYNTH_NUMBA=0`` to force the pure-numpy implementation.  Both
paths compute the same recurrences in the same order; they agree to
rounding error.

Gate layout along the last axis is ``[input, forget, cell, output]``.
Inputs to the loops are pre-projected: ``xw[t] = x[t] @ Wx + b``.
"""
from __future__ import annotations

import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and os.environ.get("TYPED_SYNTH_NUMBA", "1") not in ("0", "false", "no")
# numba wins on small batches; past this, BLAS-backed numpy is as fast or faster
# (see benchmarks/bench_lstm.py)
NUMBA_MAX_BATCH = 12


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def lstm_forward_loop_np(xw, Wh, h, c, gates):
    T, B, G = xw.shape
    H = G // 4
    hprev = np.zeros((B, H), dtype=xw.dtype)
    cprev = np.zeros((B, H), dtype=xw.dtype)
    for t in range(T):
        z = xw[t] + hprev @ Wh
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H:2 * H])
        g = np.tanh(z[:, 2 * H:3 * H])
        o = _sigmoid(z[:, 3 * H:])
        cprev = f * cprev + i * g
        hprev = o * np.tanh(cprev)
        gates[t, :, :H] = i
        gates[t, :, H:2 * H] = f
        gates[t, :, 2 * H:3 * H] = g
        gates[t, :, 3 * H:] = o
        c[t] = cprev
        h[t] = hprev


def lstm_backward_loop_np(Wh, h, c, gates, dh, dz, dWh):
    T, B, H = h.shape
    dh_next = np.zeros((B, H), dtype=h.dtype)
    dc_next = np.zeros((B, H), dtype=h.dtype)
    for t in range(T - 1, -1, -1):
        i = gates[t, :, :H]
        f = gates[t, :, H:2 * H]
        g = gates[t, :, 2 * H:3 * H]
        o = gates[t, :, 3 * H:]
        tc = np.tanh(c[t])
        dht = dh[t] + dh_next
        dc = dc_next + dht * o * (1 - tc * tc)
        cprev = c[t - 1] if t > 0 else np.zeros_like(c[t])
        dz[t, :, :H] = dc * g * i * (1 - i)
        dz[t, :, H:2 * H] = dc * cprev * f * (1 - f)
        dz[t, :, 2 * H:3 * H] = dc * i * (1 - g * g)
        dz[t, :, 3 * H:] = dht * tc * o * (1 - o)
        dc_next = dc * f
        if t > 0:
            dWh += h[t - 1].T @ dz[t]
        dh_next = dz[t] @ Wh.T


if HAVE_NUMBA:

    @numba.njit(cache=True, fastmath=False)
    def lstm_forward_loop_nb(xw, Wh, h, c, gates):
        T, B, G = xw.shape
        H = G // 4
        hprev = np.zeros((B, H), dtype=xw.dtype)
        cprev = np.zeros((B, H), dtype=xw.dtype)
        for t in range(T):
            z = np.dot(hprev, Wh)
            for b in range(B):
                for k in range(H):
                    i = 1.0 / (1.0 + np.exp(-(z[b, k] + xw[t, b, k])))
                    f = 1.0 / (1.0 + np.exp(-(z[b, H + k] + xw[t, b, H + k])))
                    g = np.tanh(z[b, 2 * H + k] + xw[t, b, 2 * H + k])
                    o = 1.0 / (1.0 + np.exp(-(z[b, 3 * H + k] + xw[t, b, 3 * H + k])))
                    cc = f * cprev[b, k] + i * g
                    gates[t, b, k] = i
                    gates[t, b, H + k] = f
                    gates[t, b, 2 * H + k] = g
                    gates[t, b, 3 * H + k] = o
                    c[t, b, k] = cc
                    h[t, b, k] = o * np.tanh(cc)
            for b in range(B):
                for k in range(H):
                    hprev[b, k] = h[t, b, k]
                    cprev[b, k] = c[t, b, k]

    @numba.njit(cache=True, fastmath=False)
    def lstm_backward_loop_nb(Wh, h, c, gates, dh, dz, dWh):
        T, B, H = h.shape
        WhT = np.ascontiguousarray(Wh.T)
        dh_next = np.zeros((B, H), dtype=h.dtype)
        dc_next = np.zeros((B, H), dtype=h.dtype)
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for k in range(H):
                    i = gates[t, b, k]
                    f = gates[t, b, H + k]
                    g = gates[t, b, 2 * H + k]
                    o = gates[t, b, 3 * H + k]
                    tc = np.tanh(c[t, b, k])
                    dht = dh[t, b, k] + dh_next[b, k]
                    dc = dc_next[b, k] + dht * o * (1 - tc * tc)
                    cprev = c[t - 1, b, k] if t > 0 else 0.0
                    dz[t, b, k] = dc * g * i * (1 - i)
                    dz[t, b, H + k] = dc * cprev * f * (1 - f)
                    dz[t, b, 2 * H + k] = dc * i * (1 - g * g)
                    dz[t, b, 3 * H + k] = dht * tc * o * (1 - o)
                    dc_next[b, k] = dc * f
            if t > 0:
                dWh += np.dot(h[t - 1].T, dz[t])
            dh_next = np.dot(dz[t], WhT)


def lstm_forward_loop(xw, Wh, h, c, gates):
    if USE_NUMBA and xw.shape[1] <= NUMBA_MAX_BATCH:
        lstm_forward_loop_nb(xw, Wh, h, c, gates)
    else:
        lstm_forward_loop_np(xw, Wh, h, c, gates)


def lstm_backward_loop(Wh, h, c, gates, dh, dz, dWh):
    if USE_NUMBA and h.shape[1] <= NUMBA_MAX_BATCH:
        lstm_backward_loop_nb(Wh, h, c, gates, dh, dz, dWh)
    else:
        lstm_backward_loop_np(Wh, h, c, gates, dh, dz, dWh)
