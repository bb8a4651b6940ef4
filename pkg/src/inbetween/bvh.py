"""BVH motion-capture file reading and writing.

Supported subset: single ROOT with 6 channels (XYZ position + 3
rotations), 3 rotation channels on every other joint, rotation orders
ZYX and ZXY, offsets in centimeters.  Hierarchies whose leg chains match
the canonical biped layout are promoted to a full :class:`Skeleton`
(with the hip/lower/upper partition); anything else parses into a plain
:class:`BvhRig`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from inbetween import kinematics as kin

__all__ = ["BvhError", "BvhRig", "MotionClip", "parse_bvh", "write_bvh",
           "load_bvh_file"]

_ROT_CHANNELS = {
    ("Zrotation", "Yrotation", "Xrotation"): "ZYX",
    ("Zrotation", "Xrotation", "Yrotation"): "ZXY",
}
_CHANNEL_NAMES = {"ZYX": ("Zrotation", "Yrotation", "Xrotation"),
                  "ZXY": ("Zrotation", "Xrotation", "Yrotation")}


class BvhError(ValueError):
    """Malformed BVH content; carries the 1-based source line."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line else message)


@dataclass(frozen=True)
class BvhRig:
    """Bare joint hierarchy as read from a file (no body partition)."""

    names: tuple
    parents: tuple
    offsets: np.ndarray
    frame_rate: float

    @property
    def n_joints(self):
        return len(self.parents)


@dataclass
class MotionClip:
    """A motion sequence: root trajectory + per-joint local rotations."""

    skeleton: object            # Skeleton or BvhRig
    root_pos: np.ndarray        # (T, 3) cm
    rotations: np.ndarray       # (T, J, 3, 3)
    frame_rate: float
    subject: str = ""
    name: str = ""

    def __post_init__(self):
        self.root_pos = np.asarray(self.root_pos, dtype=np.float64)
        self.rotations = np.asarray(self.rotations, dtype=np.float64)
        if self.n_frames < 2:
            raise ValueError("a motion clip needs at least 2 frames")
        if self.frame_rate <= 0:
            raise ValueError("frame rate must be positive")
        J = self.skeleton.n_joints
        if self.rotations.shape[1:] != (J, 3, 3):
            raise ValueError(
                f"rotations shaped {self.rotations.shape}, expected "
                f"(T, {J}, 3, 3)")

    @property
    def n_frames(self):
        return self.root_pos.shape[0]

    def positions(self):
        """World joint positions per frame via FK, (T, J, 3)."""
        return kin.fk(self.skeleton, self.root_pos, self.rotations)

    def sixd(self):
        """Local rotations as (T, J, 6)."""
        return kin.matrix_to_sixd(self.rotations, check=False)


# ---------------------------------------------------------------------
# parsing

class _Tokens:
    def __init__(self, text):
        self.items = []     # (line_no, token)
        for ln, line in enumerate(text.splitlines(), start=1):
            for tok in line.split():
                self.items.append((ln, tok))
        self.pos = 0

    def peek(self):
        if self.pos >= len(self.items):
            raise BvhError("unexpected end of file",
                           self.items[-1][0] if self.items else 0)
        return self.items[self.pos]

    def next(self, expect=None):
        ln, tok = self.peek()
        self.pos += 1
        if expect is not None and tok != expect:
            raise BvhError(f"expected {expect!r}, found {tok!r}", ln)
        return ln, tok

    def next_floats(self, n):
        out = np.empty(n)
        for i in range(n):
            ln, tok = self.next()
            try:
                out[i] = float(tok)
            except ValueError:
                raise BvhError(f"expected a number, found {tok!r}", ln)
        return out

    @property
    def exhausted(self):
        return self.pos >= len(self.items)


def _parse_joint(toks, parent_idx, names, parents, offsets, orders,
                 root=False):
    ln, name = toks.next()
    idx = len(names)
    names.append(name)
    parents.append(parent_idx)
    toks.next(expect="{")
    toks.next(expect="OFFSET")
    offsets.append(toks.next_floats(3))

    ln, tok = toks.next(expect="CHANNELS")
    ln, count = toks.next()
    try:
        count = int(count)
    except ValueError:
        raise BvhError(f"bad channel count {count!r}", ln)
    chans = tuple(toks.next()[1] for _ in range(count))
    if root:
        if count != 6 or chans[:3] != ("Xposition", "Yposition",
                                       "Zposition"):
            raise BvhError("root must declare Xposition Yposition "
                           "Zposition + 3 rotations", ln)
        rot = chans[3:]
    else:
        if count != 3:
            raise BvhError(f"joint {name!r}: only 3 rotation channels "
                           "are supported", ln)
        rot = chans
    order = _ROT_CHANNELS.get(rot)
    if order is None:
        raise BvhError(f"unsupported rotation channel order {rot}", ln)
    orders.append(order)

    while True:
        ln, tok = toks.peek()
        if tok == "JOINT":
            toks.next()
            _parse_joint(toks, idx, names, parents, offsets, orders)
        elif tok == "End":
            toks.next()
            toks.next(expect="Site")
            toks.next(expect="{")
            toks.next(expect="OFFSET")
            toks.next_floats(3)
            toks.next(expect="}")
        elif tok == "}":
            toks.next()
            return
        else:
            raise BvhError(f"unexpected token {tok!r} in joint block", ln)


def _promote_skeleton(names, parents, offsets, frame_rate):
    """Return a partitioned Skeleton when the rig fits the biped layout."""
    J = len(names)
    if J >= 9 and tuple(parents[1:9]) == (0, 1, 2, 3, 0, 5, 6, 7):
        try:
            return kin.Skeleton(names=tuple(names), parents=tuple(parents),
                                offsets=np.asarray(offsets),
                                frame_rate=frame_rate)
        except ValueError:
            pass
    return BvhRig(names=tuple(names), parents=tuple(parents),
                  offsets=np.asarray(offsets), frame_rate=frame_rate)


def parse_bvh(text, subject="", name=""):
    """Parse BVH text into (skeleton-or-rig, MotionClip)."""
    toks = _Tokens(text)
    toks.next(expect="HIERARCHY")
    toks.next(expect="ROOT")
    names, parents, offsets, orders = [], [], [], []
    _parse_joint(toks, -1, names, parents, offsets, orders, root=True)

    toks.next(expect="MOTION")
    ln, tok = toks.next(expect="Frames:")
    ln, tok = toks.next()
    try:
        n_frames = int(tok)
    except ValueError:
        raise BvhError(f"bad frame count {tok!r}", ln)
    ln, tok = toks.next(expect="Frame")
    toks.next(expect="Time:")
    ln, tok = toks.next()
    try:
        frame_time = float(tok)
    except ValueError:
        raise BvhError(f"bad frame time {tok!r}", ln)
    if frame_time <= 0:
        raise BvhError("frame time must be positive", ln)

    J = len(names)
    per_frame = 6 + 3 * (J - 1)
    values = np.empty((n_frames, per_frame))
    for f in range(n_frames):
        if toks.exhausted:
            raise BvhError(
                f"motion data ends after {f} of {n_frames} frames",
                toks.items[-1][0] if toks.items else 0)
        values[f] = toks.next_floats(per_frame)
    if not toks.exhausted:
        ln, tok = toks.peek()
        raise BvhError(
            f"trailing data after {n_frames} declared frames", ln)

    skeleton = _promote_skeleton(names, parents, offsets, 1.0 / frame_time)
    root_pos = values[:, :3]
    rotations = np.empty((n_frames, J, 3, 3))
    for j in range(J):
        cols = slice(3 + 3 * j, 6 + 3 * j)
        order = orders[j]
        for f in range(n_frames):
            rotations[f, j] = kin.euler_to_matrix(values[f, cols], order)
    clip = MotionClip(skeleton=skeleton, root_pos=root_pos,
                      rotations=rotations, frame_rate=1.0 / frame_time,
                      subject=subject, name=name)
    return skeleton, clip


def load_bvh_file(path, subject="", name=""):
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_bvh(text, subject=subject, name=name or str(path))


# ---------------------------------------------------------------------
# writing

def write_bvh(clip: MotionClip, order="ZYX"):
    """Serialize a clip to BVH text (offsets %.6f, angles %.6f deg)."""
    sk = clip.skeleton
    J = sk.n_joints
    channel_names = _CHANNEL_NAMES[order]
    children = [[] for _ in range(J)]
    for j in range(1, J):
        children[sk.parents[j]].append(j)

    lines = ["HIERARCHY"]

    def fmt3(v):
        return "%.6f %.6f %.6f" % tuple(v)

    def emit(j, depth):
        pad = "  " * depth
        kw = "ROOT" if j == 0 else "JOINT"
        lines.append(f"{pad}{kw} {sk.names[j]}")
        lines.append(pad + "{")
        lines.append(f"{pad}  OFFSET {fmt3(sk.offsets[j])}")
        if j == 0:
            lines.append(f"{pad}  CHANNELS 6 Xposition Yposition Zposition "
                         + " ".join(channel_names))
        else:
            lines.append(f"{pad}  CHANNELS 3 " + " ".join(channel_names))
        if children[j]:
            for ch in children[j]:
                emit(ch, depth + 1)
        else:
            lines.append(f"{pad}  End Site")
            lines.append(pad + "  {")
            lines.append(f"{pad}    OFFSET 0.000000 0.000000 0.000000")
            lines.append(pad + "  }")
        lines.append(pad + "}")

    emit(0, 0)
    lines.append("MOTION")
    lines.append(f"Frames: {clip.n_frames}")
    lines.append(f"Frame Time: {1.0 / clip.frame_rate!r}")
    for f in range(clip.n_frames):
        vals = list(clip.root_pos[f])
        for j in range(J):
            vals.extend(kin.matrix_to_euler(clip.rotations[f, j], order))
        lines.append(" ".join("%.6f" % v for v in vals))
    return "\n".join(lines) + "\n"
