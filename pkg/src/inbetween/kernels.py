"""Inference kernel backends.

Two implementations of the same small kernel API:

* ``_kernels`` — compiled Cython extension (fused float32 loops),
* this module's numpy functions — pure-Python fallback.

:func:`load_backend` picks the compiled one when importable and falls
back to numpy; set ``INBETWEEN_BACKEND=numpy|compiled`` to force a
choice (forcing ``compiled`` raises if the extension is missing).

Kernel contract (all float32, single sample):

* ``dense(W, b, x, act, out)`` — ``out = act(W @ x + b)``, W ``(O, I)``.
* ``dense2(W, b, x1, x2, act, out)`` — same with an implicit concat.
* ``lstm_step(W, b, x, h, c, gates, h_out, c_out)`` — gate order
  (i, f, g, o), W ``(4H, I+H)``, ``gates`` a 4H scratch buffer.
* ``softmax_inplace(x)`` — vector softmax, in place.
"""

from __future__ import annotations

import os

import numpy as np

ACT_LINEAR = 0
ACT_ELU = 1
ACT_PLU = 2
ACT_TANH = 3
ACT_SIGMOID = 4

_F32 = np.float32


def _activate(v, act):
    if act == ACT_ELU:
        return np.where(v > 0, v, np.expm1(np.minimum(v, _F32(0.0))))
    if act == ACT_PLU:
        return np.maximum(_F32(0.1) * (v + _F32(1.0)) - _F32(1.0),
                          np.minimum(_F32(0.1) * (v - _F32(1.0)) + _F32(1.0),
                                     v))
    if act == ACT_TANH:
        return np.tanh(v)
    if act == ACT_SIGMOID:
        out = np.empty_like(v)
        pos = v >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
        e = np.exp(v[~pos])
        out[~pos] = e / (1.0 + e)
        return out
    return v


def dense(W, b, x, act, out):
    np.dot(W, x, out=out)
    out += b
    out[:] = _activate(out, act)


def dense2(W, b, x1, x2, act, out):
    np.dot(W[:, :x1.shape[0]], x1, out=out)
    out += W[:, x1.shape[0]:] @ x2
    out += b
    out[:] = _activate(out, act)


def lstm_step(W, b, x, h, c, gates, h_out, c_out):
    I = x.shape[0]
    H = h.shape[0]
    np.dot(W[:, :I], x, out=gates)
    gates += W[:, I:] @ h
    gates += b
    i = _activate(gates[0 * H:1 * H], ACT_SIGMOID)
    f = _activate(gates[1 * H:2 * H], ACT_SIGMOID)
    g = np.tanh(gates[2 * H:3 * H])
    o = _activate(gates[3 * H:4 * H], ACT_SIGMOID)
    np.multiply(f, c, out=c_out)
    c_out += i * g
    np.multiply(o, np.tanh(c_out), out=h_out)


def softmax_inplace(x):
    x -= x.max()
    np.exp(x, out=x)
    x /= x.sum()


class Backend:
    """A named bundle of the kernel callables."""

    def __init__(self, name, mod):
        self.name = name
        self.dense = mod.dense
        self.dense2 = mod.dense2
        self.lstm_step = mod.lstm_step
        self.softmax_inplace = mod.softmax_inplace


class _NumpyModule:
    dense = staticmethod(dense)
    dense2 = staticmethod(dense2)
    lstm_step = staticmethod(lstm_step)
    softmax_inplace = staticmethod(softmax_inplace)


def load_backend(name=None) -> Backend:
    """Resolve a kernel backend by name or by availability."""
    name = name or os.environ.get("INBETWEEN_BACKEND", "auto")
    if name not in ("auto", "numpy", "compiled"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numpy":
        return Backend("numpy", _NumpyModule)
    try:
        from inbetween import _kernels
        return Backend("compiled", _kernels)
    except ImportError:
        if name == "compiled":
            raise
        return Backend("numpy", _NumpyModule)
