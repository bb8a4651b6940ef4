"""Float32 per-frame inference sessions.

Packs a trained bundle's float64 parameters once into row-major float32
``(out, in)`` matrices and runs the per-frame work — sampler step,
mixture-of-experts decode, state integration — through the kernel
backend (compiled Cython when available, numpy otherwise) with
preallocated buffers, so a steady-state step allocates nothing beyond
the noise draw.

This is the latency path.  ``sampler.rollout`` stays the float64
reference: a seeded session here consumes its generator exactly like
the reference (noise always drawn, order target/offset[/state]) and
tracks it to float32 roundoff.
"""

from __future__ import annotations

import numpy as np

from .data import FrameState
from .kernels import (ACT_ELU, ACT_LINEAR, ACT_PLU, Backend,
                      load_backend)
from .sampler import (RolloutResult, SessionComplete, noise_amplitude,
                      time_embedding)

__all__ = ["InferenceSession", "rollout_f32"]

_F32 = np.float32


def _pack_dense(params, prefix):
    """(W_T, b) float32 copies of one ``x @ W + b`` layer, W_T (out, in)."""
    W = np.ascontiguousarray(params[f"{prefix}.W"].T, dtype=_F32)
    b = np.ascontiguousarray(params[f"{prefix}.b"], dtype=_F32)
    return W, b


class InferenceSession:
    """Reusable single-pose generation session.

    ``begin`` resets it onto a (start, target, duration) triple in the
    canonical frame; each ``step`` advances one frame; ``run`` collects
    a full :class:`RolloutResult`.  One session is single-writer — use
    one per concurrent caller; the packed weights are read-only.
    """

    def __init__(self, bundle, backend: Backend | str | None = None):
        if not isinstance(backend, Backend):
            backend = load_backend(backend)
        self.kernels = backend
        self.bundle = bundle
        sampler, manifold = bundle.sampler, bundle.manifold
        scfg, mcfg = sampler.config, manifold.config
        self.scfg, self.mcfg = scfg, mcfg
        self.rate = bundle.skeleton.frame_rate
        self.n_pos = sampler.n_pos

        sp, mp = sampler.params, manifold.params
        self.w = {}
        for enc in ("state", "offset", "target"):
            for layer in ("l0", "l1"):
                self.w[f"{enc}.{layer}"] = _pack_dense(sp,
                                                       f"{enc}.{layer}")
        self.w["lstm"] = _pack_dense(sp, "lstm")
        for layer in ("l0", "l1", "l2"):
            self.w[f"dec.{layer}"] = _pack_dense(sp, f"dec.{layer}")
            self.w[f"gate.{layer}"] = _pack_dense(mp, f"gate.{layer}")
        for e in range(mcfg.n_experts):
            for layer in ("l0", "l1", "l2"):
                self.w[f"expert{e}.{layer}"] = _pack_dense(
                    mp, f"expert{e}.{layer}")

        d_pose = 3 * self.n_pos
        d_rL = 6 * len(bundle.skeleton.lower)
        d_rU = 6 * len(bundle.skeleton.upper)
        self.dims = (d_pose, d_rL, d_rU)
        z = lambda n: np.zeros(n, dtype=_F32)
        self.cur = {"p_h": z(3), "v_h": z(3), "r_h": z(6),
                    "p_L": z(d_pose), "v_L": z(d_pose), "r_L": z(d_rL),
                    "r_U": z(d_rU)}
        self.h, self.c = z(scfg.lstm_hidden), z(scfg.lstm_hidden)
        self._h2, self._c2 = z(scfg.lstm_hidden), z(scfg.lstm_hidden)
        b = self._buf = {
            "state_x": z(sampler.state_dim),
            "offset_x": z(d_pose), "abs_now": z(d_pose),
            "enc_h": z(scfg.enc_hidden),
            "e_state": z(scfg.enc_out), "e_offset": z(scfg.enc_out),
            "e_target": z(scfg.enc_out),
            "noise": np.zeros((1, scfg.enc_out)),     # float64 draw
            "lstm_x": z(3 * scfg.enc_out),
            "gates": z(4 * scfg.lstm_hidden),
            "d0": z(scfg.dec_hidden), "d1": z(scfg.dec_hidden2),
            "dec_out": z(sampler.out_dim), "z": z(scfg.d_z),
            "c_i": z(manifold.cond_dim), "inj": z(manifold.inj_dim),
            "g0": z(mcfg.gating_hidden), "g1": z(mcfg.gating_hidden),
            "gate_w": z(mcfg.n_experts),
            "eh0": z(mcfg.expert_hidden), "eh1": z(mcfg.expert_hidden),
            "e_out": z(manifold.out_dim), "blend": z(manifold.out_dim),
        }
        self._emb_cache = {}
        self.target_row = z(sampler.state_dim)
        self.target_abs = z(d_pose)
        self.inv_std = np.ascontiguousarray(1.0 / bundle.norm_stats.std,
                                            dtype=_F32)
        self.dt = 0
        self.rng = None
        self._frames = []

    @property
    def backend_name(self):
        return self.kernels.name

    def _emb(self, dt):
        emb = self._emb_cache.get(dt)
        if emb is None:
            emb = time_embedding(dt, self.scfg.enc_out).astype(_F32)
            self._emb_cache[dt] = emb
        return emb

    def begin(self, start: FrameState, target: FrameState, duration,
              seed=0, h=None, c=None):
        """Arm the session for one transition (canonical FrameStates,
        data-layer cm/s velocities)."""
        if duration < 2:
            raise ValueError("duration must be >= 2")
        rate = self.rate
        cur = self.cur
        cur["p_h"][:] = start.p_h
        cur["v_h"][:] = start.v_h / rate
        cur["r_h"][:] = start.r_h
        cur["p_L"][:] = start.p_L.ravel()
        cur["v_L"][:] = start.v_L.ravel() / rate
        cur["r_L"][:] = start.r_L.ravel()
        cur["r_U"][:] = start.r_U.ravel()
        d_pose = self.dims[0]
        self.target_row[:3] = target.v_h / rate
        self.target_row[3:3 + d_pose] = target.v_L.ravel() / rate
        self.target_row[3 + d_pose:] = target.r_U.ravel()
        self.target_abs[:] = (target.p_L + target.p_h).ravel()
        self.h[:] = 0.0 if h is None else h.ravel()
        self.c[:] = 0.0 if c is None else c.ravel()
        self.dt = duration - 1
        self.rng = np.random.default_rng(seed)
        self._frames = []
        return self

    @property
    def frames_remaining(self):
        return self.dt

    def _encode(self, prefix, x, out):
        k, w, b = self.kernels, self.w, self._buf
        k.dense(*w[f"{prefix}.l0"], x, ACT_PLU, b["enc_h"])
        k.dense(*w[f"{prefix}.l1"], b["enc_h"], ACT_PLU, out)
        out += self._emb(self.dt)

    def _add_noise(self, out, lam, std):
        noise = self._buf["noise"]
        self.rng.standard_normal(out=noise)
        out += (lam * std * noise[0]).astype(_F32)

    def step(self):
        """Advance one frame; raises SessionComplete when exhausted."""
        if self.dt < 1:
            raise SessionComplete("no frames remaining (dt=0)")
        k, w, b, cur = self.kernels, self.w, self._buf, self.cur
        scfg, mcfg = self.scfg, self.mcfg
        d_pose = self.dims[0]

        sx = b["state_x"]
        sx[:3] = cur["v_h"]
        sx[3:3 + d_pose] = cur["v_L"]
        sx[3 + d_pose:] = cur["r_U"]
        np.add(cur["p_L"].reshape(-1, 3), cur["p_h"],
               out=b["abs_now"].reshape(-1, 3))
        np.subtract(self.target_abs, b["abs_now"], out=b["offset_x"])
        b["offset_x"] *= self.inv_std

        lam = _F32(noise_amplitude(self.dt, scfg.t_zero, scfg.t_period))
        std = _F32(np.sqrt(scfg.noise_var))
        self._encode("state", sx, b["e_state"])
        self._encode("offset", b["offset_x"], b["e_offset"])
        self._encode("target", self.target_row, b["e_target"])
        self._add_noise(b["e_target"], lam, std)
        self._add_noise(b["e_offset"], lam, std)
        if scfg.noise_on_state:
            self._add_noise(b["e_state"], lam, std)

        lx = b["lstm_x"]
        n = scfg.enc_out
        lx[:n], lx[n:2 * n], lx[2 * n:] = (b["e_state"], b["e_offset"],
                                           b["e_target"])
        k.lstm_step(*w["lstm"], lx, self.h, self.c, b["gates"],
                    self._h2, self._c2)
        self.h, self._h2 = self._h2, self.h
        self.c, self._c2 = self._c2, self.c

        k.dense(*w["dec.l0"], self.h, ACT_ELU, b["d0"])
        k.dense(*w["dec.l1"], b["d0"], ACT_ELU, b["d1"])
        k.dense(*w["dec.l2"], b["d1"], ACT_LINEAR, b["dec_out"])
        d_z = scfg.d_z
        np.tanh(b["dec_out"][:d_z], out=b["z"])
        b["z"] *= _F32(scfg.z_scale)
        v_h_next = b["dec_out"][d_z:d_z + 3]
        dr_U = b["dec_out"][d_z + 3:]

        ci = b["c_i"]
        ci[:3] = cur["v_h"]
        ci[3:3 + d_pose] = cur["v_L"]
        ci[3 + d_pose:9 + d_pose] = cur["r_h"]
        ci[9 + d_pose:] = cur["r_L"]
        inj = b["inj"]
        inj[:3] = v_h_next
        inj[3:] = b["z"]
        k.dense2(*w["gate.l0"], ci, inj, ACT_ELU, b["g0"])
        k.dense(*w["gate.l1"], b["g0"], ACT_ELU, b["g1"])
        k.dense(*w["gate.l2"], b["g1"], ACT_LINEAR, b["gate_w"])
        k.softmax_inplace(b["gate_w"])
        blend = b["blend"]
        blend[:] = 0.0
        for e in range(mcfg.n_experts):
            k.dense2(*w[f"expert{e}.l0"], ci, inj, ACT_ELU, b["eh0"])
            k.dense2(*w[f"expert{e}.l1"], b["eh0"], inj, ACT_ELU,
                     b["eh1"])
            k.dense2(*w[f"expert{e}.l2"], b["eh1"], inj, ACT_LINEAR,
                     b["e_out"])
            b["e_out"] *= b["gate_w"][e]
            blend += b["e_out"]
        a = d_pose
        bb = a + self.dims[1]
        v_L_next, dr_L, dr_h = blend[:a], blend[a:bb], blend[bb:]

        cur["p_h"] += v_h_next
        cur["v_h"][:] = v_h_next
        cur["r_h"] += dr_h
        cur["p_L"] += v_L_next
        cur["v_L"][:] = v_L_next
        cur["r_L"] += dr_L
        cur["r_U"] += dr_U
        self.dt -= 1
        return cur

    def run(self) -> RolloutResult:
        """Step to completion and collect the generated frames."""
        while self.dt >= 1:
            self.step()
            self._frames.append({key: val.astype(np.float64)
                                 for key, val in self.cur.items()})
        frames = {key: np.stack([f[key] for f in self._frames])
                  for key in self.cur}
        return RolloutResult(self.bundle.skeleton, self.rate, frames,
                             h=self.h.astype(np.float64)[None],
                             c=self.c.astype(np.float64)[None])


def rollout_f32(bundle, start: FrameState, target: FrameState, duration,
                seed=0, backend=None) -> RolloutResult:
    """One-shot float32 rollout mirroring ``sampler.rollout``."""
    session = InferenceSession(bundle, backend=backend)
    return session.begin(start, target, duration, seed=seed).run()
