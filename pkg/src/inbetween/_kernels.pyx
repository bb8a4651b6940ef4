# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Fused float32 kernels for the per-frame inference path.

Single-sample (vector) variants only: generation runs one pose at a
time, so every layer is a matrix-vector product.  Weights are stored
(out, in) row-major so each output element is one contiguous dot.
A numpy fallback with the same signatures lives in ``kernels.py``.
"""

from libc.math cimport expf, tanhf


cdef inline float _sigmoidf(float x) noexcept nogil:
    cdef float e
    if x >= 0:
        return 1.0 / (1.0 + expf(-x))
    e = expf(x)
    return e / (1.0 + e)


cdef inline float _activate(float v, int act) noexcept nogil:
    # 0 linear, 1 elu, 2 plu(alpha=0.1, c=1), 3 tanh, 4 sigmoid
    if act == 1:
        return v if v > 0 else expf(v) - 1.0
    elif act == 2:
        if v > 1.0:
            return 0.1 * (v - 1.0) + 1.0
        elif v < -1.0:
            return 0.1 * (v + 1.0) - 1.0
        return v
    elif act == 3:
        return tanhf(v)
    elif act == 4:
        return _sigmoidf(v)
    return v


def dense(float[:, ::1] W, float[::1] b, float[::1] x, int act,
          float[::1] out):
    """out = act(W @ x + b)."""
    cdef Py_ssize_t O = W.shape[0]
    cdef Py_ssize_t I = W.shape[1]
    cdef Py_ssize_t i, j
    cdef float acc
    with nogil:
        for j in range(O):
            acc = b[j]
            for i in range(I):
                acc += W[j, i] * x[i]
            out[j] = _activate(acc, act)


def dense2(float[:, ::1] W, float[::1] b, float[::1] x1, float[::1] x2,
           int act, float[::1] out):
    """out = act(W @ concat(x1, x2) + b) without materializing the concat."""
    cdef Py_ssize_t O = W.shape[0]
    cdef Py_ssize_t I1 = x1.shape[0]
    cdef Py_ssize_t I2 = x2.shape[0]
    cdef Py_ssize_t i, j
    cdef float acc
    with nogil:
        for j in range(O):
            acc = b[j]
            for i in range(I1):
                acc += W[j, i] * x1[i]
            for i in range(I2):
                acc += W[j, I1 + i] * x2[i]
            out[j] = _activate(acc, act)


def lstm_step(float[:, ::1] W, float[::1] b, float[::1] x, float[::1] h,
              float[::1] c, float[::1] gates, float[::1] h_out,
              float[::1] c_out):
    """One recurrent step; gate rows ordered (i, f, g, o).

    ``W`` is (4H, I+H) row-major, ``gates`` a (4H,) scratch buffer.
    ``h_out``/``c_out`` must not alias ``h``/``c``.
    """
    cdef Py_ssize_t H = h.shape[0]
    cdef Py_ssize_t I = x.shape[0]
    cdef Py_ssize_t G = 4 * H
    cdef Py_ssize_t i, j
    cdef float acc, ig, fg, gg, og, cj
    with nogil:
        for j in range(G):
            acc = b[j]
            for i in range(I):
                acc += W[j, i] * x[i]
            for i in range(H):
                acc += W[j, I + i] * h[i]
            gates[j] = acc
        for j in range(H):
            ig = _sigmoidf(gates[j])
            fg = _sigmoidf(gates[H + j])
            gg = tanhf(gates[2 * H + j])
            og = _sigmoidf(gates[3 * H + j])
            cj = fg * c[j] + ig * gg
            c_out[j] = cj
            h_out[j] = og * tanhf(cj)


def softmax_inplace(float[::1] x):
    """Softmax over a vector, in place."""
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i
    cdef float m = x[0]
    cdef float s = 0.0
    with nogil:
        for i in range(1, n):
            if x[i] > m:
                m = x[i]
        for i in range(n):
            x[i] = expf(x[i] - m)
            s += x[i]
        for i in range(n):
            x[i] /= s
