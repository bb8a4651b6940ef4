"""Differentiable (tape-recorded) rotation math and forward kinematics.

Mirrors the numpy routines in ``kinematics`` exactly — same axis
conventions, same Gram–Schmidt order — but operates on tape Vars so
training losses can differentiate through FK and 6D canonicalization.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad

__all__ = [
    "dot3", "cross3", "normalize3", "sixd_to_matrix_t", "rotate_offset",
    "rotmats_from_features", "fk_t",
]


def dot3(a, b):
    """Last-axis dot product, keepdims: (..., 3) x (..., 3) -> (..., 1)."""
    return ad.vsum(a * b, axis=-1, keepdims=True)


def cross3(a, b):
    ax, ay, az = (ad.narrow(a, i, i + 1) for i in range(3))
    bx, by, bz = (ad.narrow(b, i, i + 1) for i in range(3))
    return ad.concat([ay * bz - az * by,
                      az * bx - ax * bz,
                      ax * by - ay * bx], axis=-1)


def normalize3(v):
    return v / ad.sqrt(dot3(v, v))


def sixd_to_matrix_t(r):
    """(..., 6) [up, forward] Var -> (..., 3, 3) rotation Var.

    Same construction as ``kinematics.sixd_to_matrix``: normalize up,
    orthogonalize forward against it, right axis by cross product;
    columns (right, up, forward).
    """
    up = ad.narrow(r, 0, 3)
    fwd = ad.narrow(r, 3, 6)
    u = normalize3(up)
    f = normalize3(fwd - dot3(fwd, u) * u)
    s = cross3(u, f)
    rows = ad.concat([s, u, f], axis=-1)       # rows of R^T
    shape = tuple(r.data.shape[:-1]) + (3, 3)
    return ad.transpose_last2(ad.reshape(rows, shape))


def rotate_offset(R, offset):
    """R (..., 3, 3) Var times a constant 3-vector -> (..., 3) Var."""
    tape = R.tape
    col = tape.constant(np.asarray(offset, dtype=np.float64).reshape(3, 1))
    out = ad.matmul(R, col)
    return ad.reshape(out, tuple(R.data.shape[:-2]) + (3,))


def rotmats_from_features(skeleton, r_h, r_L, r_U):
    """Per-joint rotation matrices from flat 6D feature Vars.

    ``r_h``: (T, 6); ``r_L``: (T, 8*6); ``r_U``: (T, n_upper*6).
    Returns a list of J Vars shaped (T, 3, 3), indexed by joint.
    """
    mats = [None] * skeleton.n_joints
    mats[0] = sixd_to_matrix_t(r_h)
    for idx, j in enumerate(skeleton.lower):
        mats[j] = sixd_to_matrix_t(ad.narrow(r_L, idx * 6, idx * 6 + 6))
    for idx, j in enumerate(skeleton.upper):
        mats[j] = sixd_to_matrix_t(ad.narrow(r_U, idx * 6, idx * 6 + 6))
    return mats


def fk_t(skeleton, p_h, rotmats):
    """Differentiable FK: root positions + per-joint local rotations.

    ``p_h``: Var (T, 3); ``rotmats``: list of J Vars (T, 3, 3).
    Returns world (or window-frame) joint positions as a (T, J, 3) Var.
    """
    J = skeleton.n_joints
    glob = [None] * J
    pos = [None] * J
    glob[0] = rotmats[0]
    pos[0] = p_h
    for j in range(1, J):
        par = skeleton.parents[j]
        pos[j] = pos[par] + rotate_offset(glob[par], skeleton.offsets[j])
        glob[j] = ad.matmul(glob[par], rotmats[j])
    stacked = ad.concat(pos, axis=-1)          # (T, 3*J), joint-major
    return ad.reshape(stacked, (p_h.data.shape[0], J, 3))
