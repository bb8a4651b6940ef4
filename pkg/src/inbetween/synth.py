"""Procedural walking-motion corpus for the bundled desk-scale dataset.

Fully analytic (no RNG): hip follows a parametric path, feet alternate
between world-fixed plants and smooth-step swing arcs, legs solve a
two-bone IK so planted toes have exactly zero world velocity, and the
upper body adds arm swing and torso roll.  Regeneration is
deterministic, which the corpus tests rely on.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from inbetween import kinematics as kin
from inbetween.bvh import MotionClip, write_bvh

__all__ = ["generate_clip", "generate_corpus", "CLIP_SPECS"]

DUTY = 0.6          # stance fraction of a gait cycle
SWING_HEIGHT = 7.0  # cm toe lift during swing
HIP_BASE = 85.0     # cm nominal hip height
HIP_BOUNCE = 1.5    # cm vertical bob amplitude
HIP_SWAY = 1.2      # cm lateral sway amplitude
ARM_SWING = 0.35    # rad
TORSO_ROLL = 0.03   # rad


# ---------------------------------------------------------------------
# paths: arc length -> (point on ground plane, heading angle)

@dataclass(frozen=True)
class _Straight:
    def point(self, s):
        return np.array([0.0, 0.0, s])

    def heading(self, s):
        return 0.0


@dataclass(frozen=True)
class _Arc:
    radius: float
    sign: float   # +1 turns toward +X, -1 toward -X

    def point(self, s):
        a = s / self.radius
        return np.array([self.sign * self.radius * (1.0 - math.cos(a)),
                         0.0, self.radius * math.sin(a)])

    def heading(self, s):
        return self.sign * s / self.radius


@dataclass(frozen=True)
class _Weave:
    amplitude: float
    wavelength: float

    def point(self, s):
        return np.array([
            self.amplitude * math.sin(2 * math.pi * s / self.wavelength),
            0.0, s])

    def heading(self, s):
        slope = (self.amplitude * 2 * math.pi / self.wavelength
                 * math.cos(2 * math.pi * s / self.wavelength))
        return math.atan2(slope, 1.0)


def _smoothstep(u):
    return u * u * (3.0 - 2.0 * u)


def _lateral(heading):
    """Unit vector pointing to the character's +X side of the path."""
    return np.array([math.cos(heading), 0.0, -math.sin(heading)])


def _rodrigues(v, axis, angle):
    c, s = math.cos(angle), math.sin(angle)
    return v * c + np.cross(axis, v) * s + \
        axis * np.dot(axis, v) * (1.0 - c)


def _frame_from(up, forward):
    """Rotation matrix with the given (non-unit) up/forward directions."""
    return kin.sixd_to_matrix(np.concatenate([up, forward]))


def _rx(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def _ry(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def _rz(a):
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


# ---------------------------------------------------------------------
# gait

def _toe_anchor(path, cycle, step_len, side):
    """World toe-plant point and heading for a foot's stance `cycle`."""
    # mid-stance arc positions: left at (2c+0.6)L, right at (2c+1.6)L
    s = (2.0 * cycle + (0.6 if side > 0 else 1.6)) * step_len
    heading = path.heading(s)
    point = path.point(s) + 9.0 * side * _lateral(heading)
    return point, heading


def _toe_state(path, t_cycles, step_len, side):
    """Toe world position + foot heading at gait time ``t_cycles``."""
    shift = 0.0 if side > 0 else 0.5
    g = t_cycles - shift
    c = math.floor(g)
    phase = g - c
    if phase < DUTY:   # stance: world-fixed plant
        point, heading = _toe_anchor(path, c, step_len, side)
        return point, heading
    u = (phase - DUTY) / (1.0 - DUTY)
    e = _smoothstep(u)
    p0, h0 = _toe_anchor(path, c, step_len, side)
    p1, h1 = _toe_anchor(path, c + 1, step_len, side)
    point = p0 + (p1 - p0) * e
    point = point + np.array([0.0, SWING_HEIGHT * 4.0 * e * (1.0 - e), 0.0])
    heading = h0 + (h1 - h0) * e
    return point, heading


def _leg_rotations(sk, hip_pos, hip_rot, upleg_idx, toe_world, foot_heading):
    """Two-bone IK: local rotations for (upleg, leg, foot, toe)."""
    l1 = abs(sk.offsets[upleg_idx + 1][1])   # thigh
    l2 = abs(sk.offsets[upleg_idx + 2][1])   # shin
    toe_off = sk.offsets[upleg_idx + 3]      # ankle->toe in foot frame

    foot_rot = _ry(foot_heading)             # flat foot
    ankle = toe_world - foot_rot @ toe_off
    upleg = hip_pos + hip_rot @ sk.offsets[upleg_idx]

    g = ankle - upleg
    d = np.linalg.norm(g)
    d = min(d, 0.999 * (l1 + l2))
    g_hat = g / np.linalg.norm(g)
    fwd = np.array([math.sin(foot_heading), 0.0, math.cos(foot_heading)])
    bend_axis = np.cross(g_hat, fwd)
    bend_axis /= np.linalg.norm(bend_axis)
    cos_a = np.clip((l1 * l1 + d * d - l2 * l2) / (2.0 * l1 * d), -1.0, 1.0)
    thigh_dir = _rodrigues(g_hat, bend_axis, math.acos(cos_a))
    knee = upleg + l1 * thigh_dir
    shin_dir = ankle - knee
    shin_dir /= np.linalg.norm(shin_dir)

    upleg_glob = _frame_from(-thigh_dir, fwd)
    leg_glob = _frame_from(-shin_dir, fwd)
    return (hip_rot.T @ upleg_glob,
            upleg_glob.T @ leg_glob,
            leg_glob.T @ foot_rot,
            np.eye(3))


def generate_clip(path, speed, step_frames, n_frames, name="",
                  subject="") -> MotionClip:
    """Synthesize one walking clip along ``path`` at ``speed`` cm/s."""
    sk = kin.skeleton_22()
    rate = sk.frame_rate
    cycle_time = 2.0 * step_frames / rate          # seconds per full cycle
    step_len = speed * step_frames / rate          # cm per single step

    spine, spine1, spine2, neck = 9, 10, 11, 12
    l_sh, l_arm, l_fore = 14, 15, 16
    r_sh, r_arm, r_fore = 18, 19, 20

    root_pos = np.empty((n_frames, 3))
    rot = np.empty((n_frames, 22, 3, 3))
    for f in range(n_frames):
        t = f / rate
        t_cycles = t / cycle_time
        phase = 2.0 * math.pi * t_cycles
        s_hip = speed * t

        heading = path.heading(s_hip)
        sway = HIP_SWAY * math.sin(phase)
        bounce = -HIP_BOUNCE * math.cos(2.0 * phase)
        hip = path.point(s_hip) + sway * _lateral(heading)
        hip[1] = HIP_BASE + bounce
        roll = TORSO_ROLL * math.sin(phase)
        hip_rot = _ry(heading) @ _rz(roll)

        R = np.broadcast_to(np.eye(3), (22, 3, 3)).copy()
        R[0] = hip_rot
        for side, upleg_idx in ((1.0, 1), (-1.0, 5)):
            toe, foot_heading = _toe_state(path, t_cycles, step_len, side)
            R[upleg_idx], R[upleg_idx + 1], R[upleg_idx + 2], \
                R[upleg_idx + 3] = _leg_rotations(
                    sk, hip, hip_rot, upleg_idx, toe, foot_heading)

        swing = ARM_SWING * math.sin(phase)
        R[spine] = _rz(-0.6 * roll)
        R[spine1] = _rz(-0.3 * roll)
        R[spine2] = np.eye(3)
        R[neck] = _rz(0.2 * roll)
        R[l_sh] = np.eye(3)
        R[l_arm] = _rx(swing) @ _rz(math.radians(-75.0))
        R[l_fore] = _ry(math.radians(-20.0))
        R[r_sh] = np.eye(3)
        R[r_arm] = _rx(-swing) @ _rz(math.radians(75.0))
        R[r_fore] = _ry(math.radians(20.0))

        root_pos[f] = hip
        rot[f] = R

    return MotionClip(skeleton=sk, root_pos=root_pos, rotations=rot,
                      frame_rate=rate, subject=subject, name=name)


CLIP_SPECS = [
    # name, path, speed cm/s, frames per step, total frames, subject
    ("walk_slow", _Straight(), 55.0, 16, 360, "s1"),
    ("walk_fast", _Straight(), 80.0, 11, 330, "s2"),
    ("turn_left", _Arc(radius=150.0, sign=1.0), 65.0, 13, 330, "s3"),
    ("turn_right", _Arc(radius=150.0, sign=-1.0), 65.0, 13, 330, "s3"),
    ("walk_weave", _Weave(amplitude=40.0, wavelength=300.0), 65.0, 13,
     290, "s4"),
]


def generate_corpus(out_dir):
    """Write the bundled corpus (BVH files + manifest) into ``out_dir``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for name, path, speed, step_frames, n_frames, subject in CLIP_SPECS:
        clip = generate_clip(path, speed, step_frames, n_frames,
                             name=name, subject=subject)
        fname = f"{name}.bvh"
        (out_dir / fname).write_text(write_bvh(clip), encoding="utf-8")
        entries.append({"file": fname, "subject": subject,
                        "frames": n_frames})
    manifest = {"format": 1, "skeleton": "biped22",
                "frame_rate": 30.0, "units": "cm", "clips": entries}
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return out_dir / "manifest.json"


if __name__ == "__main__":
    import sys
    target = sys.argv[1] if len(sys.argv) > 1 else "corpus"
    print(generate_corpus(target))
