"""Feature extraction, windowing, normalization, and corpus loading.

Every training/evaluation window is expressed in its own canonical
frame: the horizontal hip position of the window's first frame is the
origin and that frame's hip heading faces +Z.  This makes learned
dynamics translation- and yaw-invariant; a stored
:class:`FrameTransform` recovers world coordinates.

Per-frame features (the 22-joint rig):

* ``v_h`` (3): hip velocity, cm/s.
* ``r_h`` (6): hip rotation.
* ``p_L`` (6, 3): hip-relative positions of the 6 retained lower joints
  (knees/ankles/toes; up-leg joints are fixed by the hip rotation).
* ``v_L`` (6, 3): finite-difference velocities of ``p_L``, so a foot's
  world velocity is ``v_h + v_L[foot]``.
* ``r_L`` (8, 6), ``r_U`` (13, 6): lower/upper joint rotations.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from inbetween import kinematics as kin
from inbetween.bvh import MotionClip, load_bvh_file

__all__ = [
    "FrameTransform", "MotionFeatures", "FrameState", "Window",
    "NormStats", "extract_features", "make_windows", "split_by_subject",
    "load_corpus", "CONTACT_THRESHOLD",
]

CONTACT_THRESHOLD = 0.2   # cm/s ground-truth toe speed counts as contact


# ---------------------------------------------------------------------
# canonical frame

@dataclass(frozen=True)
class FrameTransform:
    """Rigid horizontal transform: world = yaw_matrix(yaw) @ p + origin."""

    yaw: float
    origin: np.ndarray   # (3,), origin[1] == 0

    def rotation(self):
        return kin.yaw_matrix(self.yaw)

    def apply_points(self, p):
        return np.einsum("ij,...j->...i", self.rotation(), p) + self.origin

    def apply_dirs(self, v):
        return np.einsum("ij,...j->...i", self.rotation(), v)

    def apply_matrices(self, R):
        return np.einsum("ij,...jk->...ik", self.rotation(), R)

    def invert_points(self, p):
        return np.einsum("ji,...j->...i", self.rotation(), p - self.origin)

    def invert_dirs(self, v):
        return np.einsum("ji,...j->...i", self.rotation(), v)

    def invert_matrices(self, R):
        return np.einsum("ji,...jk->...ik", self.rotation(), R)

    def compose(self, inner: "FrameTransform") -> "FrameTransform":
        """self ∘ inner: first apply ``inner``, then ``self``."""
        return FrameTransform(
            yaw=self.yaw + inner.yaw,
            origin=self.origin + self.rotation() @ inner.origin)

    @staticmethod
    def identity():
        return FrameTransform(yaw=0.0, origin=np.zeros(3))

    @staticmethod
    def from_hip(p_h_world, R_h_world):
        """Canonical frame anchored at a hip pose (horizontal part only)."""
        yaw = float(kin.yaw_of_matrix(R_h_world))
        origin = np.array([p_h_world[0], 0.0, p_h_world[2]])
        return FrameTransform(yaw=yaw, origin=origin)


# ---------------------------------------------------------------------
# features

@dataclass
class FrameState:
    """One frame's pose/dynamics in the canonical window frame."""

    p_h: np.ndarray    # (3,)
    v_h: np.ndarray    # (3,)
    r_h: np.ndarray    # (6,)
    p_L: np.ndarray    # (6, 3)
    v_L: np.ndarray    # (6, 3)
    r_L: np.ndarray    # (8, 6)
    r_U: np.ndarray    # (n_upper, 6)

    def copy(self):
        return FrameState(**{k: getattr(self, k).copy()
                             for k in ("p_h", "v_h", "r_h", "p_L", "v_L",
                                       "r_L", "r_U")})


@dataclass
class MotionFeatures:
    """Feature arrays for T consecutive frames plus the frame transform."""

    skeleton: object
    p_h: np.ndarray        # (T, 3)
    v_h: np.ndarray        # (T, 3)
    r_h: np.ndarray        # (T, 6)
    p_L: np.ndarray        # (T, 6, 3)
    v_L: np.ndarray        # (T, 6, 3)
    r_L: np.ndarray        # (T, 8, 6)
    r_U: np.ndarray        # (T, n_upper, 6)
    contacts: np.ndarray   # (T, n_toes) bool, ground-truth toe contact
    transform: FrameTransform
    positions_world: np.ndarray = None   # (T, J, 3) FK ground truth

    @property
    def n_frames(self):
        return self.p_h.shape[0]

    def condition(self):
        """(T, 75) decoder/encoder condition rows [v_h, v_L, r_h, r_L]."""
        T = self.n_frames
        return np.concatenate(
            [self.v_h, self.v_L.reshape(T, -1), self.r_h,
             self.r_L.reshape(T, -1)], axis=1)

    def state_input(self):
        """(T, 99) sampler state-encoder rows [v_h, v_L, r_U]."""
        T = self.n_frames
        return np.concatenate(
            [self.v_h, self.v_L.reshape(T, -1),
             self.r_U.reshape(T, -1)], axis=1)

    def abs_p_L(self):
        """(T, 6, 3) lower-joint positions in the canonical frame."""
        return self.p_h[:, None, :] + self.p_L

    def frame(self, i) -> FrameState:
        return FrameState(p_h=self.p_h[i].copy(), v_h=self.v_h[i].copy(),
                          r_h=self.r_h[i].copy(), p_L=self.p_L[i].copy(),
                          v_L=self.v_L[i].copy(), r_L=self.r_L[i].copy(),
                          r_U=self.r_U[i].copy())


def extract_features(clip: MotionClip, start=0, length=None,
                     contact_threshold=CONTACT_THRESHOLD) -> MotionFeatures:
    """Features for ``clip[start:start+length]`` in that span's canonical
    frame (anchored at the span's first frame)."""
    sk = clip.skeleton
    T_total = clip.n_frames
    if length is None:
        length = T_total - start
    if length < 2:
        raise ValueError("need at least 2 frames for velocities")
    if start < 0 or start + length > T_total:
        raise ValueError("window out of clip bounds")
    sl = slice(start, start + length)

    world_pos, world_rot = kin.fk(sk, clip.root_pos[sl],
                                  clip.rotations[sl],
                                  return_global_rot=True)
    tf = FrameTransform.from_hip(clip.root_pos[start],
                                 clip.rotations[start, 0])
    pos = tf.invert_points(world_pos)          # (T, J, 3) canonical
    hip_rot = tf.invert_matrices(clip.rotations[sl, 0])

    rate = clip.frame_rate
    p_h = pos[:, 0, :]
    v_h = np.empty_like(p_h)
    v_h[1:] = (p_h[1:] - p_h[:-1]) * rate
    v_h[0] = v_h[1]

    pj = list(sk.pos_joints)
    p_L = pos[:, pj, :] - p_h[:, None, :]
    v_L = np.empty_like(p_L)
    v_L[1:] = (p_L[1:] - p_L[:-1]) * rate
    v_L[0] = v_L[1]

    r_h = kin.matrix_to_sixd(hip_rot, check=False)
    r_L = kin.matrix_to_sixd(clip.rotations[sl][:, list(sk.lower)],
                             check=False)
    r_U = kin.matrix_to_sixd(clip.rotations[sl][:, list(sk.upper)],
                             check=False)

    toe_pos = pos[:, list(sk.toe_joints), :]
    toe_vel = np.empty_like(toe_pos)
    toe_vel[1:] = (toe_pos[1:] - toe_pos[:-1]) * rate
    toe_vel[0] = toe_vel[1]
    contacts = np.linalg.norm(toe_vel, axis=-1) < contact_threshold

    return MotionFeatures(skeleton=sk, p_h=p_h, v_h=v_h, r_h=r_h,
                          p_L=p_L, v_L=v_L, r_L=r_L, r_U=r_U,
                          contacts=contacts, transform=tf,
                          positions_world=world_pos)


# ---------------------------------------------------------------------
# windows

@dataclass
class Window:
    clip_name: str
    start: int
    features: MotionFeatures

    @property
    def length(self):
        return self.features.n_frames


def make_windows(clip: MotionClip, length, overlap,
                 contact_threshold=CONTACT_THRESHOLD):
    """Windows at starts 0, (length-overlap), 2(length-overlap), …;
    a trailing remainder shorter than ``length`` is dropped."""
    if not length > overlap >= 0:
        raise ValueError("need length > overlap >= 0")
    stride = length - overlap
    out = []
    start = 0
    while start + length <= clip.n_frames:
        out.append(Window(clip_name=clip.name, start=start,
                          features=extract_features(
                              clip, start, length,
                              contact_threshold=contact_threshold)))
        start += stride
    return out


def split_by_subject(clips, test_subject):
    """Hold out one subject's clips as the test set."""
    subjects = {c.subject for c in clips}
    if test_subject not in subjects:
        raise ValueError(f"unknown subject {test_subject!r}; "
                         f"corpus has {sorted(subjects)}")
    train = [c for c in clips if c.subject != test_subject]
    test = [c for c in clips if c.subject == test_subject]
    return train, test


# ---------------------------------------------------------------------
# normalization

class NormStats:
    """Per-dimension z-score statistics of canonical lower-joint
    positions (the offset-encoder input space)."""

    def __init__(self, mean, std):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    @classmethod
    def from_windows(cls, windows):
        rows = np.concatenate(
            [w.features.abs_p_L().reshape(w.features.n_frames, -1)
             for w in windows], axis=0)
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        bad = std < 1e-8
        if bad.any():
            warnings.warn(f"{int(bad.sum())} degenerate feature dims; "
                          "using std=1 for those")
            std = np.where(bad, 1.0, std)
        return cls(mean, std)

    def z(self, x):
        return (x - self.mean) / self.std

    def unz(self, x):
        return x * self.std + self.mean

    def z_diff(self, diff):
        """z-score a difference of two position rows (mean cancels)."""
        return diff / self.std

    def to_dict(self):
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]))


# ---------------------------------------------------------------------
# corpus manifest

def bundled_corpus_path() -> Path:
    """Manifest of the corpus shipped inside the package."""
    return Path(__file__).parent / "assets" / "corpus" / "manifest.json"


def load_corpus(manifest_path):
    """Load all clips listed in a corpus manifest JSON.

    Format: {"format": 1, "clips": [{"file": ..., "subject": ...}, ...]};
    file paths are relative to the manifest.
    """
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != 1:
        raise ValueError("unsupported corpus manifest format")
    clips = []
    for entry in manifest["clips"]:
        path = manifest_path.parent / entry["file"]
        _, clip = load_bvh_file(path, subject=entry.get("subject", ""),
                                name=entry["file"])
        if not isinstance(clip.skeleton, kin.Skeleton):
            raise ValueError(f"{entry['file']}: rig lacks the expected "
                             "biped layout")
        clips.append(clip)
    if not clips:
        raise ValueError("corpus manifest lists no clips")
    return clips
