"""Seeded parameter construction and tape-side layer application.

Parameters live in flat ``name -> float64 ndarray`` dicts; a training
step wraps them into tape Vars (``Tape.wrap``), applies the layers
below, and reads gradients back by name.  Dense weights are stored
``(n_in, n_out)`` so application is ``x @ W + b``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

__all__ = [
    "glorot_uniform", "dense_params", "lstm_params", "dense", "lstm_step",
    "n_params",
]


def glorot_uniform(rng, n_in, n_out):
    """Uniform init in ±sqrt(6 / (fan_in + fan_out))."""
    limit = np.sqrt(6.0 / (n_in + n_out))
    return rng.uniform(-limit, limit, size=(n_in, n_out))


def dense_params(rng, n_in, n_out, prefix):
    return {f"{prefix}.W": glorot_uniform(rng, n_in, n_out),
            f"{prefix}.b": np.zeros(n_out)}


def lstm_params(rng, n_in, hidden, prefix):
    """One recurrent cell: stacked gate weights (in+hidden, 4*hidden).

    Scaled-uniform init with the per-gate fan-out; the forget-gate bias
    starts at 1 so early training does not wipe the cell state.
    """
    limit = np.sqrt(6.0 / (n_in + hidden + hidden))
    W = rng.uniform(-limit, limit, size=(n_in + hidden, 4 * hidden))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0
    return {f"{prefix}.W": W, f"{prefix}.b": b}


def dense(p, prefix, x, act=None):
    """Apply ``act(x @ W + b)`` using Vars from a wrapped param dict."""
    y = ad.matmul(x, p[f"{prefix}.W"]) + p[f"{prefix}.b"]
    return y if act is None else act(y)


def lstm_step(p, prefix, x, h, c):
    """Advance one LSTM cell step on tape Vars; returns (h_next, c_next).

    Gate layout along the stacked weight's output axis is
    [input, forget, cell, output].
    """
    hidden = h.shape[-1]
    gates = ad.matmul(ad.concat([x, h], axis=-1), p[f"{prefix}.W"]) \
        + p[f"{prefix}.b"]
    i = ad.sigmoid(ad.narrow(gates, 0, hidden))
    f = ad.sigmoid(ad.narrow(gates, hidden, 2 * hidden))
    g = ad.tanh(ad.narrow(gates, 2 * hidden, 3 * hidden))
    o = ad.sigmoid(ad.narrow(gates, 3 * hidden, 4 * hidden))
    c_next = f * c + i * g
    h_next = o * ad.tanh(c_next)
    return h_next, c_next


def n_params(params: dict) -> int:
    return int(sum(v.size for v in params.values()))
