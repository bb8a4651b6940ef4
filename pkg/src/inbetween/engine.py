"""Generation façade over trained checkpoints: world-space transition
synthesis, an interpolation baseline, target chaining, and the latency
benchmark.

World/canonical boundary: ``generate`` and ``chain`` accept world-space
FrameStates, anchor a canonical frame at the start pose's hip (its yaw
and horizontal position), roll the models out there, and map the result
back — so inference always sees the coordinate distribution the models
trained on.

Returned clips include the start frame, exclude the target frame, and
carry two extra attributes: ``per_frame_ms`` (wall time per generated
frame) and ``extrapolation`` (True when any requested transition length
falls outside the trained range).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import kinematics as kin
from .bvh import MotionClip
from .data import FrameState, FrameTransform, NormStats
from .manifold import Manifold, ManifoldConfig
from .sampler import RolloutResult, Sampler, SamplerConfig, rollout

__all__ = [
    "DURATION_MIN", "DURATION_MAX", "ModelBundle", "ChainSession",
    "generate", "interpolate_baseline", "chain", "bench_latency",
    "frame_state_from_pose", "rest_state", "canonicalize_state",
    "decanonicalize_state",
]

DURATION_MIN = 2
DURATION_MAX = 1000


# ---------------------------------------------------------------------
# bundle

@dataclass
class ModelBundle:
    """Everything one generation session needs, trained together."""

    skeleton: object
    manifold: Manifold
    sampler: Sampler
    norm_stats: NormStats
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.manifold.config.d_z != self.sampler.config.d_z:
            raise ValueError("manifold/sampler latent size mismatch")
        for model in (self.manifold, self.sampler):
            if not _same_skeleton(model.skeleton, self.skeleton):
                raise ValueError(
                    "bundle components trained against different "
                    "skeletons")

    @classmethod
    def load(cls, manifold_path, sampler_path):
        """Assemble a bundle from the two checkpoint files."""
        from .checkpoint import load_checkpoint
        mck = load_checkpoint(manifold_path, expect_kind="manifold")
        sck = load_checkpoint(sampler_path, expect_kind="sampler")
        if mck.meta["skeleton"] != sck.meta["skeleton"]:
            raise ValueError(
                "checkpoints trained against different skeletons")
        skeleton = mck.skeleton
        manifold = Manifold(skeleton,
                            ManifoldConfig.from_dict(mck.config),
                            params=mck.params)
        sampler = Sampler(skeleton, SamplerConfig.from_dict(sck.config),
                          params=sck.params)
        ns = sck.meta.get("norm_stats") or mck.meta.get("norm_stats")
        if not ns:
            raise ValueError("checkpoints carry no normalization stats")
        meta = {
            "format_version": mck.meta.get("format_version"),
            "manifold": {k: mck.meta.get(k)
                         for k in ("seed", "iteration", "stage")},
            "sampler": {k: sck.meta.get(k)
                        for k in ("seed", "iteration")},
        }
        return cls(skeleton=skeleton, manifold=manifold, sampler=sampler,
                   norm_stats=NormStats.from_dict(ns), meta=meta)


def _same_skeleton(a, b):
    return (a.names == b.names and a.parents == b.parents
            and np.array_equal(a.offsets, b.offsets)
            and a.frame_rate == b.frame_rate)


# ---------------------------------------------------------------------
# pose/state plumbing

def frame_state_from_pose(skeleton, hip_pos, rotations):
    """FrameState for a static pose: world hip position (3,) plus local
    rotation matrices (J, 3, 3); velocities are zero."""
    hip_pos = np.asarray(hip_pos, dtype=np.float64)
    rotations = np.asarray(rotations, dtype=np.float64)
    J = skeleton.n_joints
    if hip_pos.shape != (3,) or rotations.shape != (J, 3, 3):
        raise ValueError(f"pose must be a (3,) hip position and "
                         f"({J}, 3, 3) rotations")
    pos = kin.fk(skeleton, hip_pos[None], rotations[None])[0]
    p_L = pos[list(skeleton.pos_joints)] - hip_pos
    return FrameState(
        p_h=hip_pos.copy(), v_h=np.zeros(3),
        r_h=kin.matrix_to_sixd(rotations[0]),
        p_L=p_L, v_L=np.zeros_like(p_L),
        r_L=kin.matrix_to_sixd(rotations[list(skeleton.lower)]),
        r_U=kin.matrix_to_sixd(rotations[list(skeleton.upper)]))


def rest_state(skeleton):
    """The rig's rest pose, grounded so its lowest joint sits at y=0."""
    J = skeleton.n_joints
    R = np.tile(np.eye(3), (J, 1, 1))
    pos = kin.fk(skeleton, np.zeros((1, 3)), R[None])[0]
    hip = np.array([0.0, -pos[:, 1].min(), 0.0])
    return frame_state_from_pose(skeleton, hip, R)


def state_rotations(skeleton, fs: FrameState):
    """(J, 3, 3) local rotation matrices of a FrameState's pose."""
    R = np.empty((skeleton.n_joints, 3, 3))
    R[0] = kin.sixd_to_matrix(fs.r_h)
    R[list(skeleton.lower)] = kin.sixd_to_matrix(fs.r_L)
    R[list(skeleton.upper)] = kin.sixd_to_matrix(fs.r_U)
    return R


def canonicalize_state(fs: FrameState, tf: FrameTransform) -> FrameState:
    """Map a world-space FrameState into ``tf``'s canonical frame."""
    return FrameState(
        p_h=tf.invert_points(fs.p_h), v_h=tf.invert_dirs(fs.v_h),
        r_h=kin.matrix_to_sixd(
            tf.invert_matrices(kin.sixd_to_matrix(fs.r_h))),
        p_L=tf.invert_dirs(fs.p_L), v_L=tf.invert_dirs(fs.v_L),
        r_L=fs.r_L.copy(), r_U=fs.r_U.copy())


def decanonicalize_state(fs: FrameState, tf: FrameTransform) -> FrameState:
    """Map a canonical-frame FrameState back to world space."""
    return FrameState(
        p_h=tf.apply_points(fs.p_h), v_h=tf.apply_dirs(fs.v_h),
        r_h=kin.matrix_to_sixd(
            tf.apply_matrices(kin.sixd_to_matrix(fs.r_h))),
        p_L=tf.apply_dirs(fs.p_L), v_L=tf.apply_dirs(fs.v_L),
        r_L=fs.r_L.copy(), r_U=fs.r_U.copy())


def _validate_state(skeleton, fs, name):
    shapes = {
        "p_h": (3,), "v_h": (3,), "r_h": (6,),
        "p_L": (len(skeleton.pos_joints), 3),
        "v_L": (len(skeleton.pos_joints), 3),
        "r_L": (len(skeleton.lower), 6),
        "r_U": (len(skeleton.upper), 6),
    }
    for key, want in shapes.items():
        got = np.asarray(getattr(fs, key)).shape
        if got != want:
            raise ValueError(
                f"{name} pose does not match the "
                f"{skeleton.n_joints}-joint skeleton: field {key} is "
                f"shaped {got}, expected {want}")


def _validate_duration(duration):
    if not (isinstance(duration, (int, np.integer))
            and DURATION_MIN <= duration <= DURATION_MAX):
        raise ValueError(f"duration must be an integer in "
                         f"[{DURATION_MIN}, {DURATION_MAX}], got "
                         f"{duration!r}")


def _is_extrapolation(cfg: SamplerConfig, duration):
    return not (cfg.len_min <= duration - 1 <= cfg.len_max)


def _clip_with_start(skeleton, start: FrameState, results, name):
    """World clip: the start frame followed by each (result, transform)
    segment's generated frames."""
    roots = [start.p_h[None]]
    rots = [state_rotations(skeleton, start)[None]]
    for res, tf in results:
        root, R = res.world_arrays(transform=tf)
        roots.append(root)
        rots.append(R)
    return MotionClip(skeleton=skeleton,
                      root_pos=np.concatenate(roots, axis=0),
                      rotations=np.concatenate(rots, axis=0),
                      frame_rate=skeleton.frame_rate, name=name)


# ---------------------------------------------------------------------
# generation

def generate(bundle: ModelBundle, start: FrameState, target: FrameState,
             duration, seed=0) -> MotionClip:
    """World-space transition clip of ``duration`` frames: the start
    frame plus ``duration - 1`` generated frames approaching (but
    excluding) the target."""
    _validate_duration(duration)
    sk = bundle.skeleton
    _validate_state(sk, start, "start")
    _validate_state(sk, target, "target")
    tf = FrameTransform.from_hip(start.p_h, kin.sixd_to_matrix(start.r_h))
    t0 = time.perf_counter()
    res = rollout(canonicalize_state(start, tf),
                  canonicalize_state(target, tf), duration,
                  bundle.manifold, bundle.sampler, seed=seed,
                  norm_stats=bundle.norm_stats)
    elapsed = time.perf_counter() - t0
    clip = _clip_with_start(sk, start, [(res, tf)], name="generated")
    clip.per_frame_ms = elapsed / res.n_frames * 1e3
    clip.extrapolation = _is_extrapolation(bundle.sampler.config,
                                           duration)
    return clip


def chain(bundle: ModelBundle, start: FrameState, segments,
          seed=0) -> MotionClip:
    """Chained session through ``segments`` = [(target, duration), ...].

    Each segment starts from the previous segment's final generated
    frame, re-anchoring the canonical frame there while the recurrent
    state carries over; total length is sum(durations - 1) + 1 with no
    duplicated junction frames.
    """
    segments = list(segments)
    if not segments:
        raise ValueError("chain needs at least one segment")
    sk = bundle.skeleton
    _validate_state(sk, start, "start")
    for target, duration in segments:
        _validate_duration(duration)
        _validate_state(sk, target, "target")
    cur, h, c = start, None, None
    results = []
    n_generated = 0
    t0 = time.perf_counter()
    for k, (target, duration) in enumerate(segments):
        tf = FrameTransform.from_hip(cur.p_h,
                                     kin.sixd_to_matrix(cur.r_h))
        res = rollout(canonicalize_state(cur, tf),
                      canonicalize_state(target, tf), duration,
                      bundle.manifold, bundle.sampler, seed=[seed, k],
                      norm_stats=bundle.norm_stats, h0=h, c0=c)
        h, c = res.h, res.c
        results.append((res, tf))
        n_generated += res.n_frames
        cur = decanonicalize_state(res.final_state(), tf)
    elapsed = time.perf_counter() - t0
    clip = _clip_with_start(sk, start, results, name="chained")
    clip.per_frame_ms = elapsed / n_generated * 1e3
    clip.extrapolation = any(
        _is_extrapolation(bundle.sampler.config, d) for _, d in segments)
    return clip


class ChainSession:
    """Incremental form of :func:`chain`: one segment per call.

    Carries the recurrent state and the last generated world frame
    between calls, so ``extend(t1, d1); extend(t2, d2)`` produces
    exactly the generated frames of ``chain(bundle, start,
    [(t1, d1), (t2, d2)], seed)``.
    """

    def __init__(self, bundle: ModelBundle, start: FrameState, seed=0):
        _validate_state(bundle.skeleton, start, "start")
        self.bundle = bundle
        self.seed = int(seed)
        self.state = start.copy()
        self.h = None
        self.c = None
        self.segments = 0

    def extend(self, target: FrameState, duration):
        """Generate the next segment; returns (root_pos, rotations,
        extrapolation, per_frame_ms) for the ``duration - 1`` new world
        frames, shaped (duration-1, 3) and (duration-1, J, 3, 3)."""
        b = self.bundle
        _validate_duration(duration)
        _validate_state(b.skeleton, target, "target")
        tf = FrameTransform.from_hip(self.state.p_h,
                                     kin.sixd_to_matrix(self.state.r_h))
        t0 = time.perf_counter()
        res = rollout(canonicalize_state(self.state, tf),
                      canonicalize_state(target, tf), duration,
                      b.manifold, b.sampler,
                      seed=[self.seed, self.segments],
                      norm_stats=b.norm_stats, h0=self.h, c0=self.c)
        elapsed = time.perf_counter() - t0
        self.h, self.c = res.h, res.c
        self.state = decanonicalize_state(res.final_state(), tf)
        self.segments += 1
        root, R = res.world_arrays(transform=tf)
        extrap = _is_extrapolation(b.sampler.config, duration)
        return root, R, extrap, elapsed / res.n_frames * 1e3


# ---------------------------------------------------------------------
# interpolation baseline

def interpolate_baseline(start: FrameState, target: FrameState,
                         duration, skeleton) -> RolloutResult:
    """Linear-position / spherical-rotation interpolation from start to
    target with per-frame parameter t = i/duration; returns the
    generated frames i = 1..duration-1 shaped like a model rollout."""
    if duration < 2:
        raise ValueError("duration must be >= 2")
    t = (np.arange(1, duration) / duration)[:, None]
    F = duration - 1

    p_h = start.p_h + (target.p_h - start.p_h) * t
    abs0 = start.p_h + start.p_L
    abs1 = target.p_h + target.p_L
    abs_t = abs0 + (abs1 - abs0) * t[:, None]
    p_L = abs_t - p_h[:, None, :]

    def slerp_group(r0, r1, t_shaped):
        q0 = kin.matrix_to_quat(kin.sixd_to_matrix(r0))
        q1 = kin.matrix_to_quat(kin.sixd_to_matrix(r1))
        q = kin.quat_slerp(q0, q1, t_shaped)
        return kin.matrix_to_sixd(kin.quat_to_matrix(q))

    r_h = slerp_group(start.r_h, target.r_h, t)
    r_L = slerp_group(start.r_L, target.r_L, t[:, None])
    r_U = slerp_group(start.r_U, target.r_U, t[:, None])

    v_h = np.diff(p_h, axis=0, prepend=start.p_h[None])
    v_L = np.diff(p_L, axis=0, prepend=start.p_L[None])

    frames = {"p_h": p_h, "v_h": v_h, "r_h": r_h,
              "p_L": p_L.reshape(F, -1), "v_L": v_L.reshape(F, -1),
              "r_L": r_L.reshape(F, -1), "r_U": r_U.reshape(F, -1)}
    return RolloutResult(skeleton, skeleton.frame_rate, frames,
                         h=None, c=None)


# ---------------------------------------------------------------------
# latency benchmark

def bench_latency(bundle: ModelBundle, iterations=200, seed=0,
                  warmup=5, backend=None):
    """Wall-time statistics (ms) of the per-frame inference work — one
    sampler step, one decoder evaluation, and the state assembly around
    them — on the float32 inference path, single-threaded.

    ``backend`` picks the kernel implementation ("compiled", "numpy",
    or None for best available).
    """
    if iterations < 1:
        raise ValueError("latency benchmark needs at least 1 iteration")
    from .inference import InferenceSession

    sk = bundle.skeleton
    session = InferenceSession(bundle, backend=backend)
    start = rest_state(sk)
    target = rest_state(sk)
    target.p_h = target.p_h + np.array([0.0, 0.0, 40.0])

    span = bundle.sampler.config.len_max
    times = []
    done = 0
    while done < warmup + iterations:
        # fresh sub-session so dt sweeps the trained range; the restart
        # bookkeeping stays outside the timed region
        session.begin(start, target, span + 1, seed=[seed, done])
        while session.frames_remaining and done < warmup + iterations:
            t0 = time.perf_counter()
            session.step()
            elapsed = time.perf_counter() - t0
            if done >= warmup:
                times.append(elapsed * 1e3)
            done += 1
    arr = np.asarray(times)
    return {"mean": float(arr.mean()), "median": float(np.median(arr)),
            "p99": float(np.percentile(arr, 99)),
            "iterations": iterations, "backend": session.backend_name}
