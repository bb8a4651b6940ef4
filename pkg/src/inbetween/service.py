"""Local HTTP service exposing generation to the viewer and scripts.

Wire format (JSON, explicit units in every payload):

* Poses are world hip position + per-joint 6D rotations::

      {"hip_position_cm": [x, y, z], "rotations_6d": [[6 floats] x J]}

  A 6D rotation is the matrix's up and forward columns; identity is
  ``[0, 1, 0, 0, 0, 1]``.
* Generated frames are returned with world joint positions and local
  6D rotations; ``positions_cm[0]`` is the hip.
* ``POST /generate`` body: ``start_pose``, ``target_pose``,
  ``duration_frames`` (start included, target excluded), optional
  ``seed`` (default 0) and ``timing`` (default false; per_frame_ms is
  null unless requested, keeping seeded responses byte-identical).
* ``POST /session/chain``: pass ``start_pose`` (plus optional
  ``seed``) to open a session, then ``session`` + ``target_pose`` to
  extend it; every call returns ``duration_frames`` records, a
  continuation's first record repeating the junction frame verbatim.

Errors: 400 malformed body or dimension mismatch, 422 duration outside
[2, 1000], 503 bundle not loaded.  Sessions are single-writer, keyed
by token; responses are pure functions of (bundle, request, seed) —
session endpoints of the session's request history.
"""

from __future__ import annotations

import itertools
import threading
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Request

from . import __version__
from . import kinematics as kin
from .engine import (DURATION_MAX, DURATION_MIN, ChainSession,
                     frame_state_from_pose, generate, rest_state,
                     state_rotations)

__all__ = ["create_app", "UNITS"]

UNITS = {"positions": "cm", "rotations": "6d-two-axis",
         "duration": "frames"}


# ---------------------------------------------------------------------
# request parsing (manual, so malformed bodies map to 400, not 422)

async def _json_object(request: Request) -> dict:
    try:
        body = await request.json()
    except Exception:
        raise HTTPException(400, "request body is not valid JSON")
    if not isinstance(body, dict):
        raise HTTPException(400, "request body must be a JSON object")
    return body


def _check_keys(body, allowed):
    unknown = sorted(set(body) - allowed)
    if unknown:
        raise HTTPException(400, "unknown request keys: "
                            + ", ".join(unknown))


def _duration_frames(body):
    if "duration_frames" not in body:
        raise HTTPException(400, "missing duration_frames")
    d = body["duration_frames"]
    if isinstance(d, bool) or not isinstance(d, int):
        raise HTTPException(400, "duration_frames must be an integer")
    if not DURATION_MIN <= d <= DURATION_MAX:
        raise HTTPException(
            422, f"duration_frames must be within [{DURATION_MIN}, "
                 f"{DURATION_MAX}], got {d}")
    return d


def _seed_of(body):
    seed = body.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) \
            or not 0 <= seed < 2 ** 64:
        raise HTTPException(400, "seed must be an unsigned 64-bit "
                            "integer")
    return seed


def _timing_of(body):
    timing = body.get("timing", False)
    if not isinstance(timing, bool):
        raise HTTPException(400, "timing must be a boolean")
    return timing


def _pose_state(skeleton, pose, name):
    if pose is None:
        raise HTTPException(400, f"missing {name}")
    if not isinstance(pose, dict):
        raise HTTPException(400, f"{name} must be an object")
    _check_keys(pose, {"hip_position_cm", "rotations_6d"})
    try:
        hip = np.asarray(pose["hip_position_cm"], dtype=np.float64)
        rot6 = np.asarray(pose["rotations_6d"], dtype=np.float64)
    except (KeyError, TypeError, ValueError):
        raise HTTPException(400, f"{name} needs numeric "
                            "hip_position_cm and rotations_6d")
    J = skeleton.n_joints
    if hip.shape != (3,):
        raise HTTPException(400, f"{name}.hip_position_cm must have 3 "
                            f"components, got shape {list(hip.shape)}")
    if rot6.shape != (J, 6):
        raise HTTPException(400, f"{name}.rotations_6d must be shaped "
                            f"[{J}, 6] for this skeleton, got "
                            f"{list(rot6.shape)}")
    if not (np.isfinite(hip).all() and np.isfinite(rot6).all()):
        raise HTTPException(400, f"{name} contains non-finite values")
    try:
        R = kin.sixd_to_matrix(rot6)
    except kin.DegenerateRotationError as exc:
        raise HTTPException(400, f"{name}: {exc}")
    return frame_state_from_pose(skeleton, hip, R)


# ---------------------------------------------------------------------
# responses

def _frame_records(skeleton, root_pos, rotations):
    pos = kin.fk(skeleton, root_pos, rotations)
    r6 = kin.matrix_to_sixd(rotations, check=False)
    return [{"positions_cm": p.tolist(), "rotations_6d": r.tolist()}
            for p, r in zip(pos, r6)]


def _state_record(skeleton, fs):
    R = state_rotations(skeleton, fs)
    return _frame_records(skeleton, fs.p_h[None], R[None])[0]


class _Session:
    """Single-writer chain state behind one token."""

    def __init__(self, chain: ChainSession, first_record):
        self.chain = chain
        self.lock = threading.Lock()
        self.last_record = first_record


# ---------------------------------------------------------------------
# app factory

def create_app(bundle=None, viewer_dir: Path | None = None) -> FastAPI:
    """The service app; ``bundle`` may be None (endpoints answer 503).

    ``viewer_dir``, when given, is served statically at ``/viewer``.
    """
    app = FastAPI(title="inbetween", version=__version__)
    app.state.bundle = bundle
    app.state.sessions = {}
    app.state.sessions_lock = threading.Lock()
    app.state.session_ids = itertools.count(1)

    def _bundle():
        if app.state.bundle is None:
            raise HTTPException(503, "model bundle not loaded")
        return app.state.bundle

    @app.get("/health")
    def health():
        return {"status": "ok", "version": __version__,
                "bundle_loaded": app.state.bundle is not None}

    @app.get("/skeleton")
    def skeleton():
        sk = _bundle().skeleton
        rest = rest_state(sk)
        R = state_rotations(sk, rest)
        rest_pos = kin.fk(sk, rest.p_h[None], R[None])[0]
        return {
            "units": {"offsets": "cm", "positions": "cm",
                      "rotations": "6d-two-axis"},
            "joint_count": sk.n_joints,
            "names": list(sk.names),
            "parents": list(sk.parents),
            "offsets_cm": sk.offsets.tolist(),
            "frame_rate_hz": sk.frame_rate,
            "rest_pose": {
                "hip_position_cm": rest.p_h.tolist(),
                "rotations_6d": kin.matrix_to_sixd(R).tolist(),
            },
            "rest_positions_cm": rest_pos.tolist(),
        }

    @app.post("/generate")
    async def post_generate(request: Request):
        b = _bundle()
        body = await _json_object(request)
        _check_keys(body, {"start_pose", "target_pose",
                           "duration_frames", "seed", "timing"})
        duration = _duration_frames(body)
        seed = _seed_of(body)
        timing = _timing_of(body)
        sk = b.skeleton
        start = _pose_state(sk, body.get("start_pose"), "start_pose")
        target = _pose_state(sk, body.get("target_pose"), "target_pose")
        clip = generate(b, start, target, duration, seed=seed)
        frames = _frame_records(sk, clip.root_pos, clip.rotations)
        return {
            "units": UNITS,
            "frame_rate_hz": sk.frame_rate,
            "frame_count": len(frames),
            "extrapolation_flag": clip.extrapolation,
            "per_frame_ms": clip.per_frame_ms if timing else None,
            "frames": frames,
        }

    @app.post("/session/chain")
    async def post_chain(request: Request):
        b = _bundle()
        body = await _json_object(request)
        _check_keys(body, {"session", "start_pose", "target_pose",
                           "duration_frames", "seed", "timing"})
        duration = _duration_frames(body)
        timing = _timing_of(body)
        sk = b.skeleton
        target = _pose_state(sk, body.get("target_pose"), "target_pose")
        token = body.get("session")

        if token is None:
            start = _pose_state(sk, body.get("start_pose"),
                                "start_pose")
            chain = ChainSession(b, start, seed=_seed_of(body))
            sess = _Session(chain, _state_record(sk, start))
            with app.state.sessions_lock:
                token = f"s{next(app.state.session_ids):06d}"
                app.state.sessions[token] = sess
        else:
            if not isinstance(token, str):
                raise HTTPException(400, "session must be a string "
                                    "token")
            if "start_pose" in body:
                raise HTTPException(400, "pass either start_pose (new "
                                    "session) or session (continue), "
                                    "not both")
            if "seed" in body:
                raise HTTPException(400, "seed is fixed when the "
                                    "session is created")
            with app.state.sessions_lock:
                sess = app.state.sessions.get(token)
            if sess is None:
                raise HTTPException(400, f"unknown session {token!r}")

        with sess.lock:
            junction = sess.last_record
            segment_index = sess.chain.segments
            root, R, extrap, ms = sess.chain.extend(target, duration)
            frames = [junction] + _frame_records(sk, root, R)
            sess.last_record = frames[-1]
        return {
            "units": UNITS,
            "frame_rate_hz": sk.frame_rate,
            "session": token,
            "segment_index": segment_index,
            "frame_count": len(frames),
            "extrapolation_flag": extrap,
            "per_frame_ms": ms if timing else None,
            "frames": frames,
        }

    @app.get("/")
    def root():
        return {
            "service": "inbetween",
            "version": __version__,
            "endpoints": ["/health", "/skeleton", "/generate",
                          "/session/chain"]
            + (["/viewer/"] if viewer_dir else []),
        }

    if viewer_dir is not None:
        from fastapi.staticfiles import StaticFiles
        viewer_dir = Path(viewer_dir)
        if not viewer_dir.is_dir():
            raise ValueError(f"viewer asset directory not found: "
                             f"{viewer_dir}")
        app.mount("/viewer", StaticFiles(directory=viewer_dir,
                                         html=True), name="viewer")
    return app
