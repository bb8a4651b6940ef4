"""Rotation representation, skeleton model, and forward kinematics.

Conventions (fixed for every fixture and checkpoint in this project):

* Y-up, Z-forward, right-handed coordinates; lengths in centimeters.
* A rotation matrix's columns are (right, up, forward); the 6D rotation
  stores the up and forward columns, re-orthonormalized on conversion.
* Positive yaw turns +Z toward +X: yaw_matrix(90 deg) @ z_hat == x_hat.

Everything here is pure numpy over immutable inputs; the differentiable
(FK-on-tape) variants used in training live in ``diffkin``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DegenerateRotationError", "Skeleton", "skeleton_22", "skeleton_21",
    "sixd_to_matrix", "matrix_to_sixd", "add_rotation_delta",
    "fk", "integrate_root", "yaw_matrix", "yaw_of_matrix",
    "matrix_to_quat", "quat_to_matrix", "quat_slerp",
    "euler_to_matrix", "matrix_to_euler",
]


class DegenerateRotationError(ValueError):
    """6D rotation with near-zero or parallel axis vectors."""


# ---------------------------------------------------------------------
# 6D (2-axis) rotation representation

def sixd_to_matrix(r, strict=True):
    """Convert (..., 6) [up, forward] vectors to (..., 3, 3) matrices.

    Gram–Schmidt: normalize up, orthogonalize forward against it, right
    axis by cross product.  ``strict`` raises on degenerate input;
    otherwise degenerate rows produce NaN (caller beware).
    """
    r = np.asarray(r, dtype=np.float64)
    up = r[..., 0:3]
    fwd = r[..., 3:6]
    un = np.linalg.norm(up, axis=-1, keepdims=True)
    if strict and (un < 1e-6).any():
        raise DegenerateRotationError("up vector near zero")
    u = up / un
    f = fwd - (fwd * u).sum(axis=-1, keepdims=True) * u
    fn = np.linalg.norm(f, axis=-1, keepdims=True)
    if strict and (fn < 1e-6).any():
        raise DegenerateRotationError(
            "forward vector near zero or parallel to up")
    f = f / fn
    right = np.cross(u, f)
    return np.stack([right, u, f], axis=-1)


def matrix_to_sixd(R, check=True):
    """Extract the up (column 2) and forward (column 3) axes as (..., 6)."""
    R = np.asarray(R, dtype=np.float64)
    if check:
        eye = np.matmul(np.swapaxes(R, -1, -2), R)
        err = np.abs(eye - np.eye(3)).max()
        if err > 1e-6:
            raise DegenerateRotationError(
                f"matrix not orthonormal (max deviation {err:.2e})")
    return np.concatenate([R[..., :, 1], R[..., :, 2]], axis=-1)


def add_rotation_delta(r, dr):
    """Additive update in raw 6D space; canonicalized only on conversion."""
    return np.asarray(r, dtype=np.float64) + np.asarray(dr, dtype=np.float64)


# ---------------------------------------------------------------------
# skeleton

@dataclass(frozen=True)
class Skeleton:
    """Joint hierarchy with per-joint local offsets (cm).

    Joints are topologically ordered (parent index < joint index).  The
    body partition is fixed: hip = joint 0, lower = joints 1..8 (two
    legs), upper = the rest.  ``pos_joints`` are the lower joints whose
    positions/velocities are kept as explicit features (knees, ankles
    and toes; the up-leg joints are determined by the hip rotation).
    """

    names: tuple
    parents: tuple
    offsets: np.ndarray  # (J, 3) float64
    frame_rate: float
    lower: tuple = tuple(range(1, 9))
    pos_joints: tuple = (2, 3, 4, 6, 7, 8)
    foot_joints: tuple = (3, 4, 7, 8)
    toe_joints: tuple = (4, 8)
    upper: tuple = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "offsets",
                           np.asarray(self.offsets, dtype=np.float64))
        object.__setattr__(
            self, "upper",
            tuple(j for j in range(len(self.parents))
                  if j != 0 and j not in self.lower))
        self.validate()

    def validate(self):
        J = len(self.parents)
        if not (len(self.names) == J and self.offsets.shape == (J, 3)):
            raise ValueError("names/parents/offsets length mismatch")
        if self.parents[0] != -1:
            raise ValueError("joint 0 must be the root")
        for j, p in enumerate(self.parents[1:], start=1):
            if not 0 <= p < j:
                raise ValueError(f"joint {j} parent {p} not topological")
        lengths = np.linalg.norm(self.offsets[1:], axis=-1)
        if (lengths <= 0).any():
            raise ValueError("non-root joints need positive offsets")
        if len(self.lower) != 8:
            raise ValueError("lower-body set must have 8 joints")
        if self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        parts = {0} | set(self.lower) | set(self.upper)
        if parts != set(range(J)) or len(self.lower) + len(self.upper) + 1 != J:
            raise ValueError("hip/lower/upper must partition the joints")

    @property
    def n_joints(self):
        return len(self.parents)

    @property
    def dt(self):
        return 1.0 / self.frame_rate

    def rest_bone_lengths(self):
        """|offset_j| per joint (root entry 0)."""
        out = np.linalg.norm(self.offsets, axis=-1)
        out[0] = 0.0
        return out

    def children(self, j):
        return [k for k, p in enumerate(self.parents) if p == j]

    def to_dict(self):
        return {
            "names": list(self.names),
            "parents": list(self.parents),
            "offsets_cm": self.offsets.tolist(),
            "frame_rate": self.frame_rate,
        }

    @classmethod
    def from_dict(cls, d):
        return cls(names=tuple(d["names"]), parents=tuple(d["parents"]),
                   offsets=np.asarray(d["offsets_cm"], dtype=np.float64),
                   frame_rate=float(d["frame_rate"]))


def skeleton_22() -> Skeleton:
    """22-joint, 30 Hz biped rig (two 4-joint legs, 3-link spine, arms)."""
    spec = [
        # name, parent, offset (cm)
        ("Hips",          -1, (0.0, 0.0, 0.0)),
        ("LeftUpLeg",      0, (9.0, -2.0, 0.0)),
        ("LeftLeg",        1, (0.0, -44.0, 0.0)),
        ("LeftFoot",       2, (0.0, -40.0, 0.0)),
        ("LeftToe",        3, (0.0, -6.0, 14.0)),
        ("RightUpLeg",     0, (-9.0, -2.0, 0.0)),
        ("RightLeg",       5, (0.0, -44.0, 0.0)),
        ("RightFoot",      6, (0.0, -40.0, 0.0)),
        ("RightToe",       7, (0.0, -6.0, 14.0)),
        ("Spine",          0, (0.0, 10.0, 0.0)),
        ("Spine1",         9, (0.0, 11.0, 0.0)),
        ("Spine2",        10, (0.0, 11.0, 0.0)),
        ("Neck",          11, (0.0, 12.0, 0.0)),
        ("Head",          12, (0.0, 10.0, 0.0)),
        ("LeftShoulder",  11, (6.0, 8.0, 0.0)),
        ("LeftArm",       14, (11.0, 0.0, 0.0)),
        ("LeftForeArm",   15, (26.0, 0.0, 0.0)),
        ("LeftHand",      16, (24.0, 0.0, 0.0)),
        ("RightShoulder", 11, (-6.0, 8.0, 0.0)),
        ("RightArm",      18, (-11.0, 0.0, 0.0)),
        ("RightForeArm",  19, (-26.0, 0.0, 0.0)),
        ("RightHand",     20, (-24.0, 0.0, 0.0)),
    ]
    return Skeleton(names=tuple(s[0] for s in spec),
                    parents=tuple(s[1] for s in spec),
                    offsets=np.array([s[2] for s in spec]),
                    frame_rate=30.0)


def skeleton_21() -> Skeleton:
    """21-joint, 25 Hz variant (one fewer spine link)."""
    spec = [
        ("Hips",          -1, (0.0, 0.0, 0.0)),
        ("LeftUpLeg",      0, (9.0, -2.0, 0.0)),
        ("LeftLeg",        1, (0.0, -44.0, 0.0)),
        ("LeftFoot",       2, (0.0, -40.0, 0.0)),
        ("LeftToe",        3, (0.0, -6.0, 14.0)),
        ("RightUpLeg",     0, (-9.0, -2.0, 0.0)),
        ("RightLeg",       5, (0.0, -44.0, 0.0)),
        ("RightFoot",      6, (0.0, -40.0, 0.0)),
        ("RightToe",       7, (0.0, -6.0, 14.0)),
        ("Spine",          0, (0.0, 12.0, 0.0)),
        ("Spine1",         9, (0.0, 14.0, 0.0)),
        ("Neck",          10, (0.0, 14.0, 0.0)),
        ("Head",          11, (0.0, 10.0, 0.0)),
        ("LeftShoulder",  10, (6.0, 8.0, 0.0)),
        ("LeftArm",       13, (11.0, 0.0, 0.0)),
        ("LeftForeArm",   14, (26.0, 0.0, 0.0)),
        ("LeftHand",      15, (24.0, 0.0, 0.0)),
        ("RightShoulder", 10, (-6.0, 8.0, 0.0)),
        ("RightArm",      17, (-11.0, 0.0, 0.0)),
        ("RightForeArm",  18, (-26.0, 0.0, 0.0)),
        ("RightHand",     19, (-24.0, 0.0, 0.0)),
    ]
    return Skeleton(names=tuple(s[0] for s in spec),
                    parents=tuple(s[1] for s in spec),
                    offsets=np.array([s[2] for s in spec]),
                    frame_rate=25.0)


# ---------------------------------------------------------------------
# forward kinematics

def fk(skeleton: Skeleton, p_h, local_rotations, return_global_rot=False):
    """World joint positions from root position + per-joint local rotations.

    ``p_h``: (..., 3) root position; ``local_rotations``: (..., J, 3, 3).
    Accumulates R_global(j) = R_global(parent) @ R_local(j) and
    p(j) = p(parent) + R_global(parent) @ offset(j).
    """
    R = np.asarray(local_rotations, dtype=np.float64)
    p_h = np.asarray(p_h, dtype=np.float64)
    J = skeleton.n_joints
    lead = R.shape[:-3]
    pos = np.empty(lead + (J, 3))
    glob = np.empty_like(R)
    pos[..., 0, :] = p_h
    glob[..., 0, :, :] = R[..., 0, :, :]
    for j in range(1, J):
        par = skeleton.parents[j]
        gp = glob[..., par, :, :]
        pos[..., j, :] = pos[..., par, :] + np.einsum(
            "...ij,j->...i", gp, skeleton.offsets[j])
        glob[..., j, :, :] = np.matmul(gp, R[..., j, :, :])
    if return_global_rot:
        return pos, glob
    return pos


def integrate_root(p_h, v_h_next, dt):
    """p^{i+1} = p^i + v^{i+1} * dt."""
    return np.asarray(p_h, dtype=np.float64) + \
        np.asarray(v_h_next, dtype=np.float64) * dt


# ---------------------------------------------------------------------
# yaw helpers (heading about the vertical axis)

def yaw_matrix(theta):
    """Rotation by ``theta`` about +Y; yaw_matrix(pi/2) @ z_hat = x_hat."""
    theta = np.asarray(theta, dtype=np.float64)
    c, s = np.cos(theta), np.sin(theta)
    zeros = np.zeros_like(c)
    ones = np.ones_like(c)
    rows = [np.stack([c, zeros, s], axis=-1),
            np.stack([zeros, ones, zeros], axis=-1),
            np.stack([-s, zeros, c], axis=-1)]
    return np.stack(rows, axis=-2)


def yaw_of_matrix(R):
    """Heading angle of the rotation's forward (third) column."""
    R = np.asarray(R, dtype=np.float64)
    fwd = R[..., :, 2]
    return np.arctan2(fwd[..., 0], fwd[..., 2])


# ---------------------------------------------------------------------
# quaternions (for the interpolation baseline)

def matrix_to_quat(R):
    """(..., 3, 3) -> unit quaternion (..., 4) as (w, x, y, z)."""
    R = np.asarray(R, dtype=np.float64)
    lead = R.shape[:-2]
    q = np.empty(lead + (4,))
    m00, m11, m22 = R[..., 0, 0], R[..., 1, 1], R[..., 2, 2]
    tr = m00 + m11 + m22
    # branch per element on the largest diagonal term for stability
    flat_R = R.reshape(-1, 3, 3)
    flat_q = q.reshape(-1, 4)
    flat_tr = np.asarray(tr).reshape(-1)
    for i in range(flat_R.shape[0]):
        M = flat_R[i]
        t = flat_tr[i]
        if t > 0:
            s = np.sqrt(t + 1.0) * 2
            flat_q[i] = [0.25 * s,
                         (M[2, 1] - M[1, 2]) / s,
                         (M[0, 2] - M[2, 0]) / s,
                         (M[1, 0] - M[0, 1]) / s]
        elif M[0, 0] >= M[1, 1] and M[0, 0] >= M[2, 2]:
            s = np.sqrt(1.0 + M[0, 0] - M[1, 1] - M[2, 2]) * 2
            flat_q[i] = [(M[2, 1] - M[1, 2]) / s,
                         0.25 * s,
                         (M[0, 1] + M[1, 0]) / s,
                         (M[0, 2] + M[2, 0]) / s]
        elif M[1, 1] >= M[2, 2]:
            s = np.sqrt(1.0 + M[1, 1] - M[0, 0] - M[2, 2]) * 2
            flat_q[i] = [(M[0, 2] - M[2, 0]) / s,
                         (M[0, 1] + M[1, 0]) / s,
                         0.25 * s,
                         (M[1, 2] + M[2, 1]) / s]
        else:
            s = np.sqrt(1.0 + M[2, 2] - M[0, 0] - M[1, 1]) * 2
            flat_q[i] = [(M[1, 0] - M[0, 1]) / s,
                         (M[0, 2] + M[2, 0]) / s,
                         (M[1, 2] + M[2, 1]) / s,
                         0.25 * s]
    q /= np.linalg.norm(q, axis=-1, keepdims=True)
    return q


def quat_to_matrix(q):
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    rows = [
        np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z),
                  2 * (x * z + w * y)], axis=-1),
        np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z),
                  2 * (y * z - w * x)], axis=-1),
        np.stack([2 * (x * z - w * y), 2 * (y * z + w * x),
                  1 - 2 * (x * x + y * y)], axis=-1),
    ]
    return np.stack(rows, axis=-2)


def quat_slerp(q0, q1, t):
    """Spherical interpolation along the shorter arc; t in [0, 1]."""
    q0 = np.asarray(q0, dtype=np.float64)
    q1 = np.asarray(q1, dtype=np.float64).copy()
    dot = (q0 * q1).sum(axis=-1, keepdims=True)
    q1 = np.where(dot < 0, -q1, q1)
    dot = np.abs(dot)
    dot = np.clip(dot, -1.0, 1.0)
    theta = np.arccos(dot)
    sin_theta = np.sin(theta)
    small = sin_theta < 1e-8
    w0 = np.where(small, 1.0 - t, np.sin((1.0 - t) * theta)
                  / np.where(small, 1.0, sin_theta))
    w1 = np.where(small, t, np.sin(t * theta)
                  / np.where(small, 1.0, sin_theta))
    out = w0 * q0 + w1 * q1
    return out / np.linalg.norm(out, axis=-1, keepdims=True)


# ---------------------------------------------------------------------
# Euler angles (BVH channel orders)

def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]])


_AXIS_FN = {"X": _rx, "Y": _ry, "Z": _rz}


def euler_to_matrix(angles_deg, order):
    """Compose per-axis rotations; ``order`` like "ZYX" applies Rz@Ry@Rx.

    ``angles_deg`` are listed in the same order as the letters.
    """
    a = np.deg2rad(np.asarray(angles_deg, dtype=np.float64))
    R = np.eye(3)
    for axis, ang in zip(order, a):
        R = R @ _AXIS_FN[axis](ang)
    return R


def matrix_to_euler(R, order):
    """Inverse of euler_to_matrix for the two BVH orders (degrees)."""
    R = np.asarray(R, dtype=np.float64)
    if order == "ZYX":
        sy = -R[2, 0]
        sy = np.clip(sy, -1.0, 1.0)
        beta = np.arcsin(sy)
        if abs(sy) < 1.0 - 1e-9:
            gamma = np.arctan2(R[1, 0], R[0, 0])
            alpha = np.arctan2(R[2, 1], R[2, 2])
        else:  # gimbal lock: fold the X rotation into Z
            gamma = np.arctan2(-R[0, 1], R[1, 1])
            alpha = 0.0
        return np.rad2deg(np.array([gamma, beta, alpha]))
    if order == "ZXY":
        sx = np.clip(R[2, 1], -1.0, 1.0)
        alpha = np.arcsin(sx)
        if abs(sx) < 1.0 - 1e-9:
            gamma = np.arctan2(-R[0, 1], R[1, 1])
            beta = np.arctan2(-R[2, 0], R[2, 2])
        else:
            gamma = np.arctan2(R[1, 0], R[0, 0])
            beta = 0.0
        return np.rad2deg(np.array([gamma, alpha, beta]))
    raise ValueError(f"unsupported Euler order {order!r}")
