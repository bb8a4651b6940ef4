"""Reverse-mode automatic differentiation over dense numpy tensors.

A :class:`Tape` records every primitive operation in execution order
(a Wengert list); :func:`Tape.backward` walks the list once in reverse,
accumulating gradients into each node.  Training runs in float64; the
inference path lives elsewhere and does not use the tape.

Broadcasting follows numpy semantics for elementwise binary ops, with
gradients reduced back onto the operand shapes.  Anything fancier
(convolution, general einsum) is deliberately out of scope.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Tape", "Var", "NonFiniteError",
    "exp", "log", "sqrt", "tanh", "sigmoid", "elu", "plu", "softmax",
    "absolute", "matmul", "concat", "narrow", "reshape", "transpose_last2",
    "vsum", "vmean", "lstm_cell", "mse", "l1", "gradcheck",
]

PLU_ALPHA = 0.1
PLU_C = 1.0


class NonFiniteError(FloatingPointError):
    """A forward value came out NaN/Inf."""


class Var:
    """One node of the computation graph: a value plus a gradient slot."""

    __slots__ = ("data", "grad", "tape", "trainable", "name")

    def __init__(self, data, tape, trainable=False, name=None):
        self.data = data
        self.grad = None
        self.tape = tape
        self.trainable = trainable
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def _lift(self, other):
        if isinstance(other, Var):
            return other
        return self.tape.constant(other)

    def __add__(self, other):
        return _binary(self, self._lift(other), np.add,
                       lambda g, a, b, o: (g, g))

    def __radd__(self, other):
        return self._lift(other).__add__(self)

    def __sub__(self, other):
        return _binary(self, self._lift(other), np.subtract,
                       lambda g, a, b, o: (g, -g))

    def __rsub__(self, other):
        return self._lift(other).__sub__(self)

    def __mul__(self, other):
        return _binary(self, self._lift(other), np.multiply,
                       lambda g, a, b, o: (g * b, g * a))

    def __rmul__(self, other):
        return self._lift(other).__mul__(self)

    def __truediv__(self, other):
        return _binary(self, self._lift(other), np.divide,
                       lambda g, a, b, o: (g / b, -g * a / (b * b)))

    def __rtruediv__(self, other):
        return self._lift(other).__truediv__(self)

    def __neg__(self):
        return _unary(self, np.negative, lambda g, a, o: -g)

    def __pow__(self, p):
        if not isinstance(p, (int, float)):
            raise TypeError("only constant exponents are supported")
        return _unary(self, lambda a: a ** p,
                      lambda g, a, o: g * p * a ** (p - 1))

    def __matmul__(self, other):
        return matmul(self, self._lift(other))


def _unbroadcast(grad, shape):
    """Reduce ``grad`` back to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tape:
    """Ordered record of primitive ops; inputs always precede outputs."""

    def __init__(self, check_finite=True):
        self.check_finite = check_finite
        self._nodes = []  # (out, parents, backward_fn)

    # -- construction -------------------------------------------------
    def var(self, data, name=None, trainable=True) -> Var:
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        return Var(arr, self, trainable=trainable, name=name)

    def constant(self, data) -> Var:
        return self.var(data, trainable=False)

    def wrap(self, params: dict) -> dict:
        """Wrap a name->array dict into leaf Vars (all trainable)."""
        return {k: self.var(v, name=k) for k, v in params.items()}

    # -- recording ----------------------------------------------------
    def record(self, out_data, parents, backward) -> Var:
        if self.check_finite and not np.all(np.isfinite(out_data)):
            raise NonFiniteError(
                f"non-finite forward value (op #{len(self._nodes)}, "
                f"shape {np.shape(out_data)})")
        out = Var(out_data, self)
        self._nodes.append((out, parents, backward))
        return out

    def __len__(self):
        return len(self._nodes)

    # -- reverse pass ---------------------------------------------------
    def backward(self, loss: Var) -> None:
        """Populate ``grad`` on every node reachable from ``loss``.

        ``loss`` must be scalar (a single element).  Leaves that do not
        influence the loss keep ``grad=None``; callers may treat that as
        zero.
        """
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape "
                             f"{loss.data.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, parents, backward in reversed(self._nodes):
            if out.grad is None:
                continue
            pgrads = backward(out.grad, *[p.data for p in parents],
                              out.data)
            for parent, pg in zip(parents, pgrads):
                if pg is None:
                    continue
                if parent.grad is None:
                    parent.grad = pg if pg.flags.owndata else pg.copy()
                else:
                    parent.grad += pg

    def grads(self, leaves: dict) -> dict:
        """name->grad for a dict of leaf Vars; unreachable leaves get 0."""
        return {k: (v.grad if v.grad is not None else np.zeros_like(v.data))
                for k, v in leaves.items()}


# ---------------------------------------------------------------------
# primitive helpers

def _unary(a: Var, fwd, bwd) -> Var:
    out = fwd(a.data)
    return a.tape.record(out, (a,), lambda g, ad, od: (bwd(g, ad, od),))


def _binary(a: Var, b: Var, fwd, bwd) -> Var:
    out = fwd(a.data, b.data)

    def backward(g, ad, bd, od):
        ga, gb = bwd(g, ad, bd, od)
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return a.tape.record(out, (a, b), backward)


# ---------------------------------------------------------------------
# elementwise ops

def exp(a: Var) -> Var:
    return _unary(a, np.exp, lambda g, ad, od: g * od)


def log(a: Var) -> Var:
    return _unary(a, np.log, lambda g, ad, od: g / ad)


def sqrt(a: Var) -> Var:
    return _unary(a, np.sqrt, lambda g, ad, od: g * 0.5 / od)


def tanh(a: Var) -> Var:
    return _unary(a, np.tanh, lambda g, ad, od: g * (1.0 - od * od))


def sigmoid(a: Var) -> Var:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out
    return _unary(a, fwd, lambda g, ad, od: g * od * (1.0 - od))


def elu(a: Var) -> Var:
    def fwd(x):
        return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))
    # for x <= 0 the output is e^x - 1, so the slope is out + 1
    return _unary(a, fwd,
                  lambda g, ad, od: g * np.where(ad > 0, 1.0, od + 1.0))


def plu(a: Var, alpha=PLU_ALPHA, c=PLU_C) -> Var:
    """Piecewise linear unit: identity on [-c, c], slope alpha outside."""
    def fwd(x):
        return np.maximum(alpha * (x + c) - c,
                          np.minimum(alpha * (x - c) + c, x))
    return _unary(a, fwd,
                  lambda g, ad, od: g * np.where(np.abs(ad) <= c, 1.0, alpha))


def absolute(a: Var) -> Var:
    return _unary(a, np.abs, lambda g, ad, od: g * np.sign(ad))


def softmax(a: Var) -> Var:
    """Softmax along the last axis."""
    def fwd(x):
        shifted = x - x.max(axis=-1, keepdims=True)
        e = np.exp(shifted)
        return e / e.sum(axis=-1, keepdims=True)

    def bwd(g, ad, od):
        dot = (g * od).sum(axis=-1, keepdims=True)
        return (od * (g - dot),)

    out = fwd(a.data)
    return a.tape.record(out, (a,), lambda g, ad, od: bwd(g, ad, od))


# ---------------------------------------------------------------------
# linear algebra / structure

def matmul(a: Var, b: Var) -> Var:
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul expects operands with ndim >= 2")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner dims differ: {ad.shape} @ {bd.shape}")

    def backward(g, ad, bd, od):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return (_unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape))

    return a.tape.record(np.matmul(ad, bd), (a, b), backward)


def concat(parts, axis=-1) -> Var:
    parts = list(parts)
    tape = parts[0].tape
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def backward(g, *args):
        return tuple(np.split(g, splits, axis=axis))

    out = np.concatenate([p.data for p in parts], axis=axis)
    return tape.record(out, tuple(parts), backward)


def narrow(a: Var, start, stop) -> Var:
    """Slice [start:stop] along the last axis."""
    idx = (Ellipsis, slice(start, stop))

    def backward(g, ad, od):
        full = np.zeros_like(ad)
        full[idx] = g
        return (full,)

    return a.tape.record(a.data[idx].copy(), (a,), backward)


def reshape(a: Var, shape) -> Var:
    def backward(g, ad, od):
        return (g.reshape(ad.shape),)
    return a.tape.record(a.data.reshape(shape), (a,), backward)


def transpose_last2(a: Var) -> Var:
    def backward(g, ad, od):
        return (np.swapaxes(g, -1, -2).copy(),)
    return a.tape.record(np.swapaxes(a.data, -1, -2).copy(), (a,), backward)


def vsum(a: Var, axis=None, keepdims=False) -> Var:
    def backward(g, ad, od):
        if axis is None:
            return (np.broadcast_to(g.reshape(()), ad.shape).copy()
                    if g.size == 1 else np.full_like(ad, g),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, ad.shape).copy(),)

    out = np.sum(a.data, axis=axis, keepdims=keepdims)
    if np.ndim(out) == 0:
        out = np.asarray(out).reshape(1)
    return a.tape.record(out, (a,), backward)


def vmean(a: Var, axis=None, keepdims=False) -> Var:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[i] for i in axis]))
    else:
        count = a.data.shape[axis]
    return vsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# ---------------------------------------------------------------------
# composites

def lstm_cell(x: Var, h: Var, c: Var, weight: Var, bias: Var):
    """One LSTM step.  Gate layout along the last axis is (i, f, g, o).

    ``weight`` has shape (in+hidden, 4*hidden); ``bias`` (4*hidden,).
    Returns (h', c').
    """
    hidden = h.data.shape[-1]
    gates = matmul(concat([x, h]), weight) + bias
    i = sigmoid(narrow(gates, 0, hidden))
    f = sigmoid(narrow(gates, hidden, 2 * hidden))
    g = tanh(narrow(gates, 2 * hidden, 3 * hidden))
    o = sigmoid(narrow(gates, 3 * hidden, 4 * hidden))
    c2 = f * c + i * g
    h2 = o * tanh(c2)
    return h2, c2


def mse(pred: Var, target) -> Var:
    d = pred - target
    return vmean(d * d)


def l1(pred: Var, target) -> Var:
    return vmean(absolute(pred - target))


# ---------------------------------------------------------------------
# numerical verification

def gradcheck(fn, params: dict, n_coords=100, h=1e-5, rng=None,
              check_finite=True):
    """Compare tape gradients of ``fn`` against central differences.

    ``fn(tape, leaves)`` must build and return a scalar Var from the
    name->Var dict ``leaves``.  ``n_coords`` coordinates are sampled
    across all parameters (all of them if the total is smaller) and
    perturbed by ``±h``.  Returns the maximum relative error

        |analytic - numeric| / max(|analytic|, |numeric|, 1.0)

    over the sampled coordinates.
    """
    rng = rng or np.random.default_rng(0)

    tape = Tape(check_finite=check_finite)
    leaves = tape.wrap(params)
    loss = fn(tape, leaves)
    tape.backward(loss)
    analytic = tape.grads(leaves)

    flat = [(name, idx) for name, arr in params.items()
            for idx in range(arr.size)]
    if len(flat) > n_coords:
        picks = rng.choice(len(flat), size=n_coords, replace=False)
        flat = [flat[i] for i in picks]

    def eval_loss(p):
        t = Tape(check_finite=check_finite)
        out = fn(t, t.wrap(p))
        return float(out.data.reshape(-1)[0])

    max_err = 0.0
    for name, idx in flat:
        base = params[name].reshape(-1)[idx]
        probe = {k: v.copy() for k, v in params.items()}
        probe[name].reshape(-1)[idx] = base + h
        up = eval_loss(probe)
        probe[name].reshape(-1)[idx] = base - h
        down = eval_loss(probe)
        numeric = (up - down) / (2.0 * h)
        a = float(analytic[name].reshape(-1)[idx])
        err = abs(a - numeric) / max(abs(a), abs(numeric), 1.0)
        max_err = max(max_err, err)
    return max_err
