"""Evaluation metrics and the windowed evaluation protocol.

Conventions, stated here once and carried into report headers: lengths
in centimeters, speeds in centimeters per frame, foot-skate heights
against the world ground plane y=0 with horizontal meaning the XZ
plane.  The skate weight vanishes at heights >= H (default 2.5 cm).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .data import make_windows
from .sampler import rollout

__all__ = [
    "l2_global", "npss", "foot_skate", "bone_length_error",
    "joint_positions", "EvalRow", "EvalReport", "evaluate",
    "SKATE_HEIGHT_CM",
]

SKATE_HEIGHT_CM = 2.5


def joint_positions(clip):
    """(T, J, 3) world joint positions of a MotionClip via FK."""
    return kin.fk(clip.skeleton, clip.root_pos, clip.rotations)


def l2_global(pred, gt):
    """Mean per-joint Euclidean distance (cm) between two clips.

    Both clips are converted to positions through forward kinematics,
    so the comparison happens in global position space regardless of
    how the predictions were produced.
    """
    if pred.n_frames != gt.n_frames:
        raise ValueError("clip length mismatch")
    if pred.skeleton.n_joints != gt.skeleton.n_joints:
        raise ValueError("skeleton mismatch")
    d = joint_positions(pred) - joint_positions(gt)
    return float(np.linalg.norm(d, axis=-1).mean())


def npss(pred, gt):
    """Normalized power spectrum similarity of two angle sequences.

    ``pred``/``gt``: (T, D) arrays.  Per dimension the squared-
    magnitude DFT is normalized to a unit-sum spectrum; the two
    spectra are compared by 1-D earth mover's distance (L1 distance
    of cumulative sums); dimensions are averaged weighted by the
    ground truth's total spectral power.  0 iff the magnitude spectra
    agree, so a pure phase shift scores 0.
    """
    pred = np.atleast_2d(np.asarray(pred, dtype=np.float64))
    gt = np.atleast_2d(np.asarray(gt, dtype=np.float64))
    if pred.shape != gt.shape:
        raise ValueError("shape mismatch")
    if gt.shape[0] == 0:
        raise ValueError("zero-length input")
    if gt.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    p_pow = np.abs(np.fft.fft(pred, axis=0)) ** 2
    g_pow = np.abs(np.fft.fft(gt, axis=0)) ** 2
    p_tot = p_pow.sum(axis=0)
    g_tot = g_pow.sum(axis=0)
    p_norm = np.divide(p_pow, p_tot, out=np.zeros_like(p_pow),
                       where=p_tot > 0)
    g_norm = np.divide(g_pow, g_tot, out=np.zeros_like(g_pow),
                       where=g_tot > 0)
    emd = np.abs(np.cumsum(p_norm - g_norm, axis=0)).sum(axis=0)
    if g_tot.sum() == 0:
        return 0.0
    return float((emd * g_tot).sum() / g_tot.sum())


def _positions_of(motion, skeleton):
    if hasattr(motion, "rotations"):
        return joint_positions(motion), motion.skeleton
    if skeleton is None:
        raise ValueError("positions array needs an explicit skeleton")
    return np.asarray(motion, dtype=np.float64), skeleton


def foot_skate(motion, skeleton=None, H=SKATE_HEIGHT_CM):
    """Mean per-frame foot skate: sum over the four foot joints of
    horizontal speed (cm/frame) weighted by clamp(2 - 2^(h/H), 0, 1).

    ``motion``: MotionClip or (T, J, 3) world positions.  Speeds and
    heights are taken at the arrival frame of each displacement, so a
    T-frame motion contributes T-1 terms.
    """
    pos, skeleton = _positions_of(motion, skeleton)
    feet = list(getattr(skeleton, "foot_joints", ()) or ())
    if not feet:
        raise ValueError("skeleton defines no foot joints")
    fp = pos[:, feet]                        # (T, F, 3)
    if fp.shape[0] < 2:
        raise ValueError("need at least 2 frames")
    disp = fp[1:] - fp[:-1]
    v = np.hypot(disp[..., 0], disp[..., 2])  # horizontal, cm/frame
    h = fp[1:, :, 1]
    w = np.clip(2.0 - 2.0 ** (h / H), 0.0, 1.0)
    return float((v * w).sum(axis=1).mean())


def bone_length_error(motion, skeleton=None):
    """Mean |bone length - rest length| in cm over frames and bones."""
    pos, skeleton = _positions_of(motion, skeleton)
    errs = []
    for j in range(1, skeleton.n_joints):
        par = skeleton.parents[j]
        lengths = np.linalg.norm(pos[:, j] - pos[:, par], axis=-1)
        rest = np.linalg.norm(skeleton.offsets[j])
        errs.append(np.abs(lengths - rest))
    return float(np.stack(errs).mean())


# ---------------------------------------------------------------------
# evaluation protocol

@dataclass
class EvalRow:
    l2: float
    npss: float
    skate: float
    bone_cm: float
    windows: int

    def values(self):
        return {"l2": self.l2, "npss": self.npss, "skate": self.skate,
                "bone_cm": self.bone_cm, "windows": self.windows}


@dataclass
class EvalReport:
    """Per-length metric rows for the model, the interpolation
    baseline, and the ground truth (skate/bone reference)."""

    lengths: tuple
    rows: dict                                 # source -> {n: EvalRow}
    latency_ms: dict = field(default_factory=dict)
    window_len: int = 65
    overlap: int = 25

    UNITS = {"l2": "cm", "npss": "", "skate": "cm/frame",
             "bone_cm": "cm", "windows": ""}

    def to_text(self):
        """Machine-parseable key=value lines, deterministic order."""
        lines = [f"window_len={self.window_len}",
                 f"overlap={self.overlap}",
                 "units.l2=cm units.skate=cm/frame units.bone=cm "
                 "(horizontal=XZ, heights vs y=0)"]
        for src in sorted(self.rows):
            for n in self.lengths:
                row = self.rows[src][n]
                for k, v in row.values().items():
                    if isinstance(v, float):
                        lines.append(f"{src}.{k}.{n}={v:.10e}")
                    else:
                        lines.append(f"{src}.{k}.{n}={v}")
        for k in sorted(self.latency_ms):
            lines.append(f"latency_ms.{k}={self.latency_ms[k]:.6f}")
        return "\n".join(lines) + "\n"

    def to_table(self):
        """Human-readable layout: metric blocks x transition lengths."""
        out = [f"evaluation windows: {self.window_len} frames, "
               f"{self.overlap} overlapped"]
        header = "  ".join(f"{n:>10d}" for n in self.lengths)
        for metric, label in (("l2", "L2 position (cm)"),
                              ("npss", "NPSS"),
                              ("skate", "foot skate (cm/frame)"),
                              ("bone_cm", "bone error (cm)")):
            out.append(f"{label}  [frames: {header.strip()}]")
            for src in sorted(self.rows):
                vals = "  ".join(
                    f"{self.rows[src][n].values()[metric]:10.4f}"
                    for n in self.lengths)
                out.append(f"  {src:<14s}{vals}")
        if self.latency_ms:
            stats = ", ".join(f"{k}={v:.3f}" for k, v in
                              sorted(self.latency_ms.items()))
            out.append(f"per-frame latency (ms): {stats}")
        counts = {n: self.rows["model"][n].windows for n in self.lengths}
        out.append("windows evaluated: " + ", ".join(
            f"{n}: {c}" for n, c in counts.items()))
        return "\n".join(out) + "\n"


def _angle_rows(r_h, r_L, r_U):
    return np.concatenate([r_h, r_L, r_U], axis=-1)


def evaluate(bundle, clips, lengths=(5, 15, 30), seed=0,
             window_len=65, overlap=25, include_baseline=True):
    """Windowed protocol: for every window and transition length n,
    generate n frames from the window's first frame toward the ground
    truth at frame n+1, then score against ground truth frames 1..n."""
    from .engine import interpolate_baseline
    from .bvh import MotionClip

    if not clips:
        raise ValueError("empty test corpus")
    windows = []
    for clip in clips:
        for w in make_windows(clip, window_len, overlap):
            windows.append((clip, w))
    if not windows:
        raise ValueError(f"no {window_len}-frame windows in the corpus")
    sk = bundle.manifold.skeleton
    sums = {src: {n: dict.fromkeys(("l2", "npss", "skate", "bone_cm"),
                                   0.0)
                  for n in lengths}
            for src in (("model", "baseline", "gt") if include_baseline
                        else ("model", "gt"))}
    counts = {n: 0 for n in lengths}
    frame_times = []
    for widx, (clip, w) in enumerate(windows):
        feats = w.features
        tf = feats.transform
        gt_pos_all = feats.positions_world
        for n in lengths:
            target = n + 1
            if target > feats.n_frames - 1:
                continue
            gt_clip = MotionClip(
                skeleton=sk,
                root_pos=clip.root_pos[w.start + 1:w.start + n + 1],
                rotations=clip.rotations[w.start + 1:w.start + n + 1],
                frame_rate=clip.frame_rate, name="gt")
            gt_rows = _angle_rows(
                feats.r_h[1:n + 1],
                feats.r_L[1:n + 1].reshape(n, -1),
                feats.r_U[1:n + 1].reshape(n, -1))
            t0 = time.perf_counter()
            res = rollout(feats.frame(0), feats.frame(target), n + 1,
                          bundle.manifold, bundle.sampler,
                          seed=[seed, widx, n],
                          norm_stats=bundle.norm_stats)
            frame_times.append((time.perf_counter() - t0) / n * 1e3)
            outputs = {"model": res}
            if include_baseline:
                outputs["baseline"] = interpolate_baseline(
                    feats.frame(0), feats.frame(target), n + 1, sk)
            for src, r in outputs.items():
                acc = sums[src][n]
                acc["l2"] += l2_global(r.to_clip(transform=tf), gt_clip)
                acc["npss"] += npss(
                    _angle_rows(r.frames["r_h"],
                                r.frames["r_L"], r.frames["r_U"]),
                    gt_rows)
                hyb = tf.apply_points(r.hybrid_positions())
                acc["skate"] += foot_skate(hyb, sk)
                acc["bone_cm"] += bone_length_error(hyb, sk)
            gt_acc = sums["gt"][n]
            gt_acc["skate"] += foot_skate(gt_pos_all[1:n + 1], sk)
            gt_acc["bone_cm"] += bone_length_error(gt_pos_all[1:n + 1],
                                                   sk)
            counts[n] += 1
    rows = {}
    for src, by_n in sums.items():
        rows[src] = {}
        for n, acc in by_n.items():
            c = max(counts[n], 1)
            rows[src][n] = EvalRow(
                l2=acc["l2"] / c, npss=acc["npss"] / c,
                skate=acc["skate"] / c, bone_cm=acc["bone_cm"] / c,
                windows=counts[n])
    times = np.asarray(frame_times)
    latency = {}
    if times.size:
        latency = {"mean": float(times.mean()),
                   "median": float(np.median(times)),
                   "p99": float(np.percentile(times, 99))}
    return EvalReport(lengths=tuple(lengths), rows=rows,
                      latency_ms=latency, window_len=window_len,
                      overlap=overlap)
