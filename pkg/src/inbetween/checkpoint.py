"""Single-file ``.npz`` checkpoints.

Layout: float64 parameter arrays under ``param/<name>``, optimizer
moments under ``opt/{m,v,vhat}/<name>``, and a ``__meta__`` JSON string
holding everything non-array — format version, checkpoint kind, config,
normalization stats, skeleton, seed, iteration counter, optimizer
hyperparameters, and the training RNG state.  float64 arrays round-trip
bit-exactly through ``np.savez``.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .kinematics import Skeleton

FORMAT_VERSION = 1

__all__ = ["FORMAT_VERSION", "Checkpoint", "save_checkpoint",
           "load_checkpoint", "rng_state_to_json", "rng_state_from_json"]


class CheckpointError(ValueError):
    pass


def rng_state_to_json(rng: np.random.Generator) -> dict:
    """PCG64 state with 128-bit integers stringified for JSON."""
    st = rng.bit_generator.state
    return {
        "bit_generator": st["bit_generator"],
        "state": str(st["state"]["state"]),
        "inc": str(st["state"]["inc"]),
        "has_uint32": int(st["has_uint32"]),
        "uinteger": int(st["uinteger"]),
    }


def rng_state_from_json(d: dict) -> np.random.Generator:
    if d["bit_generator"] != "PCG64":
        raise CheckpointError(f"unsupported generator "
                              f"{d['bit_generator']!r}")
    rng = np.random.default_rng(0)
    rng.bit_generator.state = {
        "bit_generator": "PCG64",
        "state": {"state": int(d["state"]), "inc": int(d["inc"])},
        "has_uint32": int(d["has_uint32"]),
        "uinteger": int(d["uinteger"]),
    }
    return rng


def skeleton_to_dict(sk: Skeleton) -> dict:
    return {
        "names": list(sk.names),
        "parents": list(sk.parents),
        "offsets": np.asarray(sk.offsets).tolist(),
        "frame_rate": sk.frame_rate,
    }


def skeleton_from_dict(d: dict) -> Skeleton:
    return Skeleton(names=tuple(d["names"]),
                    parents=tuple(d["parents"]),
                    offsets=tuple(tuple(row) for row in d["offsets"]),
                    frame_rate=d["frame_rate"])


class Checkpoint:
    """In-memory image of one checkpoint file."""

    def __init__(self, kind, params, meta, opt_state=None):
        self.kind = kind
        self.params = params          # name -> float64 ndarray
        self.meta = meta              # JSON-compatible dict
        self.opt_state = opt_state    # optimizer state_dict or None

    @property
    def skeleton(self) -> Skeleton:
        return skeleton_from_dict(self.meta["skeleton"])

    @property
    def config(self) -> dict:
        return self.meta["config"]


def save_checkpoint(path, kind, params, meta, optimizer=None,
                    rng=None) -> Path:
    """Write one checkpoint; ``meta`` must be JSON-serializable."""
    path = Path(path)
    meta = dict(meta)
    meta["format_version"] = FORMAT_VERSION
    meta["kind"] = kind
    if rng is not None:
        meta["rng_state"] = rng_state_to_json(rng)
    arrays = {}
    for name, arr in params.items():
        arrays[f"param/{name}"] = np.asarray(arr, dtype=np.float64)
    if optimizer is not None:
        st = optimizer.state_dict()
        meta["optimizer"] = {k: st[k] for k in
                             ("lr", "beta1", "beta2", "eps")}
        for moment in ("m", "v", "vhat"):
            for name, arr in st[moment].items():
                arrays[f"opt/{moment}/{name}"] = arr
    arrays["__meta__"] = np.asarray(json.dumps(meta, sort_keys=True))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path, expect_kind=None) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    with np.load(path, allow_pickle=False) as data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path} has no metadata block")
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"format version {meta.get('format_version')} "
                f"(supported: {FORMAT_VERSION})")
        kind = meta.get("kind")
        if expect_kind is not None and kind != expect_kind:
            raise CheckpointError(
                f"expected a {expect_kind!r} checkpoint, found {kind!r}")
        params = {}
        moments = {"m": {}, "v": {}, "vhat": {}}
        for key in data.files:
            if key.startswith("param/"):
                params[key[len("param/"):]] = data[key]
            elif key.startswith("opt/"):
                _, moment, name = key.split("/", 2)
                moments[moment][name] = data[key]
    opt_state = None
    if "optimizer" in meta:
        opt_state = dict(meta["optimizer"])
        opt_state.update(moments)
    return Checkpoint(kind=kind, params=params, meta=meta,
                      opt_state=opt_state)
