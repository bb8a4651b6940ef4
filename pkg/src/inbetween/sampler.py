"""Recurrent transition sampler over the frozen motion manifold.

Three condition encoders (state, offset, target) feed an LSTM whose
state is parsed into the manifold's next-frame inputs: a bounded latent
``z``, the next hip velocity, and upper-body rotation deltas.  A
sinusoidal time embedding of the frames-remaining counter ``dt`` is
added to every encoder output, and a decaying Gaussian noise perturbs
the target-conditioning encodings so far-from-target steps explore
while near-target steps commit.

Row layouts (model units, cm/frame):
  state/target rows: [v_h (3), v_L (18), r_U (78)] = 99
  offset row:        z-scored (target - current) absolute lower-joint
                     positions = 18
  parse output:      [z (d_z), v_h_next (3), dr_U (78)]
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import diffkin as dk
from . import kinematics as kin
from . import nn
from .data import FrameState, NormStats, extract_features, make_windows
from .manifold import SequenceSet, bone_loss, foot_loss
from .optim import AmsGrad

__all__ = [
    "SamplerConfig", "Sampler", "SessionComplete", "time_embedding",
    "noise_amplitude", "sampler_sequences", "sampler_losses", "rollout",
    "RolloutResult", "SamplerTrainer", "final_frame_error_cm",
]


class SessionComplete(RuntimeError):
    """A step was requested from a session with no frames remaining."""


def time_embedding(dt, d):
    """Sinusoidal embedding of the frames-remaining counter.

    Component 2i is sin(dt / 10000^(2i/d)) and component 2i+1 the
    matching cosine, so dt=0 embeds as alternating (0, 1, 0, 1, ...).
    """
    if dt < 0:
        raise ValueError("dt must be >= 0")
    even = np.arange(0, d, 2, dtype=np.float64)
    denom = np.power(10000.0, even / d)
    emb = np.empty(d)
    emb[0::2] = np.sin(dt / denom)
    emb[1::2] = np.cos(dt / denom[: emb[1::2].size])
    return emb


def noise_amplitude(dt, t_zero=5, t_period=30):
    """lambda = clamp((dt - t_zero) / (t_period - t_zero), 0, 1)."""
    return float(np.clip((dt - t_zero) / float(t_period - t_zero),
                         0.0, 1.0))


@dataclass
class SamplerConfig:
    d_z: int = 32                 # must match the manifold's latent size
    enc_hidden: int = 512
    enc_out: int = 256            # also the time-embedding dimension
    lstm_hidden: int = 1024
    dec_hidden: int = 512
    dec_hidden2: int = 256
    t_zero: int = 5
    t_period: int = 30
    noise_var: float = 0.5
    z_scale: float = 4.5
    noise_on_state: bool = False  # also perturb the state encoding
    batch_size: int = 16
    lr: float = 1e-3
    len_min: int = 5              # transition lengths sampled per step
    len_max: int = 30
    iterations: int = 4000        # desk-scale default; config overrides
    stop_target_cm: float = 4.0   # early stop once the final-frame
    eval_every: int = 250         # ... error beats this, probed here

    def __post_init__(self):
        if not self.t_period > self.t_zero >= 0:
            raise ValueError("need t_period > t_zero >= 0")
        if not 2 <= self.len_min <= self.len_max:
            raise ValueError("need 2 <= len_min <= len_max")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------
# numpy activation twins (evaluation path)

def _np_plu(x, alpha=ad.PLU_ALPHA, c=ad.PLU_C):
    return np.maximum(alpha * (x + c) - c, np.minimum(alpha * (x - c) + c, x))


def _np_elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _np_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _np_lstm_step(p, prefix, x, h, c):
    hidden = h.shape[-1]
    gates = np.concatenate([x, h], axis=-1) @ p[f"{prefix}.W"] \
        + p[f"{prefix}.b"]
    i = _np_sigmoid(gates[..., :hidden])
    f = _np_sigmoid(gates[..., hidden:2 * hidden])
    g = np.tanh(gates[..., 2 * hidden:3 * hidden])
    o = _np_sigmoid(gates[..., 3 * hidden:])
    c_next = f * c + i * g
    h_next = o * np.tanh(c_next)
    return h_next, c_next


# ---------------------------------------------------------------------
# model

class Sampler:
    """Parameter container + forward passes (tape and numpy)."""

    kind = "sampler"

    def __init__(self, skeleton, config: SamplerConfig | None = None,
                 seed: int = 0, params: dict | None = None):
        self.skeleton = skeleton
        self.config = config or SamplerConfig()
        cfg = self.config
        self.n_pos = len(skeleton.pos_joints)
        self.n_upper = len(skeleton.upper)
        self.state_dim = 3 + 3 * self.n_pos + 6 * self.n_upper
        self.offset_dim = 3 * self.n_pos
        self.out_dim = cfg.d_z + 3 + 6 * self.n_upper
        if params is not None:
            self.params = params
            return
        rng = np.random.default_rng(seed)
        p = {}
        for name, n_in in (("state", self.state_dim),
                           ("offset", self.offset_dim),
                           ("target", self.state_dim)):
            p.update(nn.dense_params(rng, n_in, cfg.enc_hidden,
                                     f"{name}.l0"))
            p.update(nn.dense_params(rng, cfg.enc_hidden, cfg.enc_out,
                                     f"{name}.l1"))
        p.update(nn.lstm_params(rng, 3 * cfg.enc_out, cfg.lstm_hidden,
                                "lstm"))
        p.update(nn.dense_params(rng, cfg.lstm_hidden, cfg.dec_hidden,
                                 "dec.l0"))
        p.update(nn.dense_params(rng, cfg.dec_hidden, cfg.dec_hidden2,
                                 "dec.l1"))
        p.update(nn.dense_params(rng, cfg.dec_hidden2, self.out_dim,
                                 "dec.l2"))
        self.params = p

    # -- tape forward ---------------------------------------------------
    def encode(self, P, prefix, x):
        h = nn.dense(P, f"{prefix}.l0", x, ad.plu)
        return nn.dense(P, f"{prefix}.l1", h, ad.plu)

    def step(self, P, tape, state_x, offset_x, target_x, dt, h, c, rng):
        """One sampler step on the tape; returns (z, v_h_next, dr_U, h, c).

        Noise is always drawn (in the fixed order target, offset[,
        state]) and scaled by the decayed amplitude, so a seeded run
        consumes the generator identically whatever lambda is.
        """
        if dt < 1:
            raise SessionComplete("no frames remaining (dt=0)")
        cfg = self.config
        emb = tape.constant(time_embedding(dt, cfg.enc_out))
        lam = noise_amplitude(dt, cfg.t_zero, cfg.t_period)
        std = math.sqrt(cfg.noise_var)
        B = state_x.shape[0]
        e_state = self.encode(P, "state", state_x) + emb
        e_offset = self.encode(P, "offset", offset_x) + emb
        e_target = self.encode(P, "target", target_x) + emb
        e_target = e_target + tape.constant(
            lam * rng.normal(0.0, std, (B, cfg.enc_out)))
        e_offset = e_offset + tape.constant(
            lam * rng.normal(0.0, std, (B, cfg.enc_out)))
        if cfg.noise_on_state:
            e_state = e_state + tape.constant(
                lam * rng.normal(0.0, std, (B, cfg.enc_out)))
        x = ad.concat([e_state, e_offset, e_target], axis=-1)
        h, c = nn.lstm_step(P, "lstm", x, h, c)
        d = nn.dense(P, "dec.l0", h, ad.elu)
        d = nn.dense(P, "dec.l1", d, ad.elu)
        out = nn.dense(P, "dec.l2", d)
        d_z = cfg.d_z
        z = ad.tanh(ad.narrow(out, 0, d_z)) * cfg.z_scale
        v_h_next = ad.narrow(out, d_z, d_z + 3)
        dr_U = ad.narrow(out, d_z + 3, self.out_dim)
        return z, v_h_next, dr_U, h, c

    # -- numpy forward (float64, evaluation only) -----------------------
    def encode_np(self, prefix, x):
        p = self.params
        h = _np_plu(x @ p[f"{prefix}.l0.W"] + p[f"{prefix}.l0.b"])
        return _np_plu(h @ p[f"{prefix}.l1.W"] + p[f"{prefix}.l1.b"])

    def step_np(self, state_x, offset_x, target_x, dt, h, c, rng):
        if dt < 1:
            raise SessionComplete("no frames remaining (dt=0)")
        cfg = self.config
        p = self.params
        emb = time_embedding(dt, cfg.enc_out)
        lam = noise_amplitude(dt, cfg.t_zero, cfg.t_period)
        std = math.sqrt(cfg.noise_var)
        B = state_x.shape[0]
        e_state = self.encode_np("state", state_x) + emb
        e_offset = self.encode_np("offset", offset_x) + emb
        e_target = self.encode_np("target", target_x) + emb
        e_target = e_target + lam * rng.normal(0.0, std, (B, cfg.enc_out))
        e_offset = e_offset + lam * rng.normal(0.0, std, (B, cfg.enc_out))
        if cfg.noise_on_state:
            e_state = e_state + lam * rng.normal(0.0, std,
                                                 (B, cfg.enc_out))
        x = np.concatenate([e_state, e_offset, e_target], axis=-1)
        h, c = _np_lstm_step(p, "lstm", x, h, c)
        d = _np_elu(h @ p["dec.l0.W"] + p["dec.l0.b"])
        d = _np_elu(d @ p["dec.l1.W"] + p["dec.l1.b"])
        out = d @ p["dec.l2.W"] + p["dec.l2.b"]
        d_z = cfg.d_z
        z = np.tanh(out[..., :d_z]) * cfg.z_scale
        return (z, out[..., d_z:d_z + 3], out[..., d_z + 3:], h, c)


# ---------------------------------------------------------------------
# training data

def sampler_sequences(clips, window_len=50, overlap=25):
    """Full-length training windows, each in its own canonical frame."""
    feats = []
    for clip in clips:
        for w in make_windows(clip, window_len, overlap):
            feats.append(extract_features(clip, w.start, window_len))
    if not feats:
        raise ValueError("no windows; clips shorter than window_len?")
    return SequenceSet(feats, clips[0].frame_rate)


# ---------------------------------------------------------------------
# losses

def sampler_losses(skeleton, pred, gt):
    """Loss dict over a stacked batch of generated frames.

    ``pred`` maps names to (N, dim) Vars, ``gt`` to matching numpy
    arrays: r_L (48), r_U (78), r_h (6), p_h (3), p_L (18, hip
    relative), abs_p_L (18), v_L (18), v_h (3); ``gt`` additionally
    holds pos (N, J, 3) canonical joint positions and contacts (N,
    n_toes).  Terms: rot and leg weighted 1, forward-kinematics
    position, bone length, and foot contact weighted 0.5.
    """
    for k, v in pred.items():
        if v.shape[0] != gt[k].shape[0]:
            raise ValueError(f"pred/gt length mismatch for {k}")
    r_hat = ad.concat([pred["r_L"], pred["r_U"]], axis=-1)
    r_gt = np.concatenate([gt["r_L"], gt["r_U"]], axis=-1)
    losses = {}
    losses["rot"] = ad.vmean(ad.absolute(r_hat - r_gt))
    losses["leg"] = ad.vmean(ad.absolute(pred["abs_p_L"]
                                         - gt["abs_p_L"]))
    rotmats = dk.rotmats_from_features(skeleton, pred["r_h"],
                                       pred["r_L"], pred["r_U"])
    pos_hat = dk.fk_t(skeleton, pred["p_h"], rotmats)
    losses["posrot"] = ad.vmean(ad.absolute(pos_hat - gt["pos"]))
    losses["bone"] = bone_loss(skeleton, pred["p_L"], pred["r_h"])
    fs, fc = foot_loss(skeleton, pred["v_L"], pred["v_h"],
                       gt["contacts"])
    losses["foot"] = None if fc == 0 else fs * (1.0 / fc)
    total = losses["rot"] + losses["leg"] \
        + (losses["posrot"] + losses["bone"]) * 0.5
    if losses["foot"] is not None:
        total = total + losses["foot"] * 0.5
    losses["total"] = total
    return losses


# ---------------------------------------------------------------------
# inference rollout (numpy)

def _tile_rows(x, k):
    return np.concatenate([x] * k, axis=-1)


def _rollout_core(manifold, sampler, norm_stats, state0, target_row,
                  target_abs, duration, rng, h=None, c=None,
                  context=None):
    """Batched numpy rollout in model units (cm/frame).

    ``state0``: dict of (B, dim) arrays for keys p_h, v_h, r_h, p_L,
    v_L, r_L, r_U; ``target_row``: (B, 99); ``target_abs``: (B, 18);
    ``context``: optional warm-up dict with keys state (B, m, 99) and
    abs (B, m, 18) for frames preceding the start — they advance the
    recurrent state without emitting output.  Returns a dict of
    stacked per-step predictions plus the final recurrent state.
    """
    if duration < 2:
        raise ValueError("duration must be >= 2")
    if sampler.config.d_z != manifold.config.d_z:
        raise ValueError("sampler/manifold latent size mismatch")
    cfg = sampler.config
    B = state0["p_h"].shape[0]
    if h is None:
        h = np.zeros((B, cfg.lstm_hidden))
    if c is None:
        c = np.zeros((B, cfg.lstm_hidden))
    inv_std = 1.0 / norm_stats.std
    if context is not None:
        m = context["state"].shape[1]
        for i in range(m):
            dt = (duration - 1) + (m - i)
            offset_x = (target_abs - context["abs"][:, i]) * inv_std
            _, _, _, h, c = sampler.step_np(context["state"][:, i],
                                            offset_x, target_row, dt,
                                            h, c, rng)
    cur = {k: v.copy() for k, v in state0.items()}
    frames = {k: [] for k in cur}
    for j in range(1, duration):
        dt = duration - j
        state_x = np.concatenate([cur["v_h"], cur["v_L"], cur["r_U"]],
                                 axis=-1)
        abs_now = cur["p_L"] + _tile_rows(cur["p_h"], sampler.n_pos)
        offset_x = (target_abs - abs_now) * inv_std
        z, v_h_next, dr_U, h, c = sampler.step_np(
            state_x, offset_x, target_row, dt, h, c, rng)
        c_i = np.concatenate([cur["v_h"], cur["v_L"], cur["r_h"],
                              cur["r_L"]], axis=-1)
        out, _, _ = manifold.decode_np(c_i, v_h_next, z)
        v_L, dr_L, dr_h = manifold.split_output_np(out)
        cur = {"p_h": cur["p_h"] + v_h_next, "v_h": v_h_next,
               "r_h": cur["r_h"] + dr_h, "p_L": cur["p_L"] + v_L,
               "v_L": v_L, "r_L": cur["r_L"] + dr_L,
               "r_U": cur["r_U"] + dr_U}
        for k in frames:
            frames[k].append(cur[k])
    stacked = {k: np.stack(v, axis=1) for k, v in frames.items()}
    stacked["h"], stacked["c"] = h, c
    return stacked


def _frame_state_rows(fs: FrameState, rate):
    """Model-unit 1-row arrays from a data-layer FrameState (cm/s)."""
    return {"p_h": fs.p_h[None], "v_h": fs.v_h[None] / rate,
            "r_h": fs.r_h[None], "p_L": fs.p_L.reshape(1, -1),
            "v_L": fs.v_L.reshape(1, -1) / rate,
            "r_L": fs.r_L.reshape(1, -1), "r_U": fs.r_U.reshape(1, -1)}


class RolloutResult:
    """Generated frames in the rollout's canonical coordinates.

    ``frames`` maps p_h/v_h/r_h/p_L/v_L/r_L/r_U to (n-1, dim) arrays
    (model units); ``h``/``c`` are the final recurrent state.
    """

    def __init__(self, skeleton, frame_rate, frames, h, c):
        self.skeleton = skeleton
        self.frame_rate = frame_rate
        self.frames = frames
        self.h, self.c = h, c

    @property
    def n_frames(self):
        return self.frames["p_h"].shape[0]

    def final_state(self) -> FrameState:
        """Last generated frame as a data-layer FrameState (cm/s)."""
        f = self.frames
        i = self.n_frames - 1
        rate = self.frame_rate
        return FrameState(
            p_h=f["p_h"][i].copy(), v_h=f["v_h"][i] * rate,
            r_h=f["r_h"][i].copy(),
            p_L=f["p_L"][i].reshape(-1, 3).copy(),
            v_L=f["v_L"][i].reshape(-1, 3) * rate,
            r_L=f["r_L"][i].reshape(-1, 6).copy(),
            r_U=f["r_U"][i].reshape(-1, 6).copy())

    def rotation_matrices(self):
        """(n-1, J, 3, 3) local rotations; degenerate 6D rows raise
        with the offending frame index."""
        sk = self.skeleton
        F = self.n_frames
        R = np.tile(np.eye(3), (F, sk.n_joints, 1, 1))
        for i in range(F):
            try:
                R[i, 0] = kin.sixd_to_matrix(self.frames["r_h"][i])
                R[i, list(sk.lower)] = kin.sixd_to_matrix(
                    self.frames["r_L"][i].reshape(-1, 6))
                R[i, list(sk.upper)] = kin.sixd_to_matrix(
                    self.frames["r_U"][i].reshape(-1, 6))
            except kin.DegenerateRotationError as exc:
                raise kin.DegenerateRotationError(
                    f"generated frame {i}: {exc}") from exc
        return R

    def hybrid_positions(self):
        """Canonical joint positions as the engine outputs them: forward
        kinematics everywhere, with the tracked lower joints replaced by
        their integrated absolute positions."""
        sk = self.skeleton
        pos = kin.fk(sk, self.frames["p_h"], self.rotation_matrices())
        F = self.n_frames
        pos[:, list(sk.pos_joints)] = (
            self.frames["p_L"].reshape(F, -1, 3)
            + self.frames["p_h"][:, None, :])
        return pos

    def world_arrays(self, transform=None):
        """(root_pos, rotations) arrays of the generated frames,
        mapped through ``transform`` when one is given."""
        R = self.rotation_matrices()
        root = self.frames["p_h"].copy()
        if transform is not None:
            root = transform.apply_points(root)
            R[:, 0] = transform.apply_matrices(R[:, 0])
        return root, R

    def to_clip(self, transform=None, name="generated"):
        """MotionClip of the generated frames (needs >= 2 of them);
        ``transform`` maps canonical coordinates back to world."""
        root, R = self.world_arrays(transform)
        from .bvh import MotionClip
        return MotionClip(skeleton=self.skeleton, root_pos=root,
                          rotations=R, frame_rate=self.frame_rate,
                          name=name)

    @property
    def clip(self):
        return self.to_clip()


def rollout(start: FrameState, target: FrameState, duration, manifold,
            sampler, seed=0, *, norm_stats, context=None, h0=None,
            c0=None):
    """Generate ``duration - 1`` frames from start toward (excluding)
    the target; both FrameStates live in the same canonical frame.
    ``h0``/``c0`` seed the recurrent state (e.g. carried over from a
    previous chained segment)."""
    rate = manifold.skeleton.frame_rate
    state0 = _frame_state_rows(start, rate)
    t_rows = _frame_state_rows(target, rate)
    target_row = np.concatenate([t_rows["v_h"], t_rows["v_L"],
                                 t_rows["r_U"]], axis=-1)
    target_abs = t_rows["p_L"] + _tile_rows(t_rows["p_h"],
                                            sampler.n_pos)
    ctx = None
    if context:
        rows = [_frame_state_rows(f, rate) for f in context]
        ctx = {"state": np.stack(
                   [np.concatenate([r["v_h"], r["v_L"], r["r_U"]],
                                   axis=-1)[0] for r in rows])[None],
               "abs": np.stack(
                   [(r["p_L"] + _tile_rows(r["p_h"], sampler.n_pos))[0]
                    for r in rows])[None]}
    rng = np.random.default_rng(seed)
    out = _rollout_core(manifold, sampler, norm_stats, state0,
                        target_row, target_abs, duration, rng,
                        h=h0, c=c0, context=ctx)
    h, c = out.pop("h"), out.pop("c")
    frames = {k: v[0] for k, v in out.items()}
    return RolloutResult(manifold.skeleton, rate, frames, h, c)


# ---------------------------------------------------------------------
# training

class SamplerTrainer:
    """Trains the sampler against a frozen manifold decoder.

    Each iteration draws one transition length in [len_min, len_max]
    and one start offset, shared by the whole batch, rolls the sampler
    out fully autoregressively, and updates only sampler parameters —
    gradients flow through the frozen decoder but never into it.
    """

    def __init__(self, sampler: Sampler, manifold, seqs: SequenceSet,
                 norm_stats: NormStats, seed: int = 0):
        if sampler.config.d_z != manifold.config.d_z:
            raise ValueError("sampler/manifold latent size mismatch")
        if seqs.T < sampler.config.len_max + 2:
            raise ValueError(
                f"sequences of {seqs.T} frames cannot hold a "
                f"{sampler.config.len_max}-frame transition plus its "
                "start and target")
        self.s = sampler
        self.m = manifold
        self.seqs = seqs
        self.norm = norm_stats
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.opt = AmsGrad(sampler.params, lr=sampler.config.lr)
        self.iteration = 0
        self.log_lines = []

    # -- one forward/backward over a batch of transitions ----------------
    def _transition_losses(self, tape, P, idx, length, start, rng):
        s = self.seqs
        cfg = self.s.config
        B = len(idx)
        D = {k: tape.constant(v) for k, v in self.m.params.items()}
        tau = start + length + 1
        target_row = tape.constant(s.state[idx, tau])
        target_abs = s.abs_p_L[idx, tau]
        inv_std = tape.constant(1.0 / self.norm.std)
        h = tape.constant(np.zeros((B, cfg.lstm_hidden)))
        c = tape.constant(np.zeros((B, cfg.lstm_hidden)))
        cur = {"p_h": tape.constant(s.p_h[idx, start]),
               "v_h": tape.constant(s.v_h[idx, start]),
               "r_h": tape.constant(s.r_h[idx, start]),
               "p_L": tape.constant(s.p_L[idx, start]),
               "v_L": tape.constant(s.v_L[idx, start]),
               "r_L": tape.constant(s.r_L[idx, start]),
               "r_U": tape.constant(s.r_U[idx, start])}
        keys = ("r_L", "r_U", "r_h", "p_h", "p_L", "v_L", "v_h")
        steps = {k: [] for k in keys + ("abs_p_L",)}
        for j in range(1, length + 1):
            dt = length + 1 - j
            state_x = ad.concat([cur["v_h"], cur["v_L"], cur["r_U"]],
                                axis=-1)
            abs_now = cur["p_L"] + ad.concat([cur["p_h"]] * self.s.n_pos,
                                             axis=-1)
            offset_x = (tape.constant(target_abs) - abs_now) * inv_std
            z, v_h_next, dr_U, h, c = self.s.step(
                P, tape, state_x, offset_x, target_row, dt, h, c, rng)
            c_i = ad.concat([cur["v_h"], cur["v_L"], cur["r_h"],
                             cur["r_L"]], axis=-1)
            out, _, _ = self.m.decode(D, c_i, v_h_next, z)
            v_L, dr_L, dr_h = self.m.split_output(out)
            cur = {"p_h": cur["p_h"] + v_h_next, "v_h": v_h_next,
                   "r_h": cur["r_h"] + dr_h, "p_L": cur["p_L"] + v_L,
                   "v_L": v_L, "r_L": cur["r_L"] + dr_L,
                   "r_U": cur["r_U"] + dr_U}
            for k in keys:
                steps[k].append(cur[k])
            steps["abs_p_L"].append(
                cur["p_L"] + ad.concat([cur["p_h"]] * self.s.n_pos,
                                       axis=-1))
        pred = {k: ad.concat(v, axis=0) for k, v in steps.items()}
        gt = self._gt_rows(idx, start, length)
        return sampler_losses(self.m.skeleton, pred, gt)

    def _gt_rows(self, idx, start, length):
        """Ground-truth arrays stacked step-major to match the
        step-wise concat of predictions: step 1's batch rows first."""
        s = self.seqs
        ts = np.arange(start + 1, start + length + 1)
        def stack(arr):
            return np.concatenate([arr[idx, t] for t in ts], axis=0)
        return {"r_L": stack(s.r_L), "r_U": stack(s.r_U),
                "r_h": stack(s.r_h), "p_h": stack(s.p_h),
                "p_L": stack(s.p_L), "v_L": stack(s.v_L),
                "v_h": stack(s.v_h), "abs_p_L": stack(s.abs_p_L),
                "pos": stack(s.pos), "contacts": stack(s.contacts)}

    def draw_transition(self):
        """One (length, start) pair, shared by the whole batch."""
        cfg = self.s.config
        length = int(self.rng.integers(cfg.len_min, cfg.len_max + 1))
        start = int(self.rng.integers(0, self.seqs.T - length - 1))
        return length, start

    # -- training ---------------------------------------------------------
    def train(self, iterations, log_fn=None):
        """Run ``iterations`` more steps; logs one line per iteration."""
        cfg = self.s.config
        for _ in range(iterations):
            it = self.iteration
            length, start = self.draw_transition()
            idx = self.rng.integers(0, self.seqs.n,
                                    size=cfg.batch_size)
            tape = ad.Tape()
            P = tape.wrap(self.s.params)
            try:
                losses = self._transition_losses(tape, P, idx, length,
                                                 start, self.rng)
                tape.backward(losses["total"])
            except ad.NonFiniteError as exc:
                raise ad.NonFiniteError(
                    f"sampler training diverged at iteration {it}: "
                    f"{exc}") from exc
            self.opt.step(tape.grads(P))
            self.iteration += 1
            fv = losses["foot"]
            line = (f"iter={self.iteration} len={length} start={start} "
                    f"rot={losses['rot'].data.item():.10e} "
                    f"leg={losses['leg'].data.item():.10e} "
                    f"posrot={losses['posrot'].data.item():.10e} "
                    f"bone={losses['bone'].data.item():.10e} "
                    f"foot="
                    + (f"{fv.data.item():.10e}" if fv is not None
                       else "0")
                    + f" total={losses['total'].data.item():.10e}")
            self.log_lines.append(line)
            if log_fn:
                log_fn(line)
        return self.log_lines

    def run_training(self, log_fn=None, stop_fn=None):
        """Desk-scale schedule with an early-stop probe.

        Probe points align to absolute iteration counts, so resuming a
        restored trainer continues exactly like an uninterrupted run.
        """
        cfg = self.s.config
        chunk = max(1, cfg.eval_every)
        while self.iteration < cfg.iterations:
            n = min(chunk - self.iteration % chunk,
                    cfg.iterations - self.iteration)
            self.train(n, log_fn=log_fn)
            if stop_fn is not None and stop_fn(self):
                break
        return self.log_lines

    # -- persistence -------------------------------------------------------
    def meta(self):
        from .checkpoint import rng_state_to_json, skeleton_to_dict
        return {
            "config": self.s.config.to_dict(),
            "skeleton": skeleton_to_dict(self.m.skeleton),
            "seed": self.seed,
            "iteration": self.iteration,
            "norm_stats": self.norm.to_dict(),
            "rng_state": rng_state_to_json(self.rng),
        }

    def save(self, path):
        from .checkpoint import save_checkpoint
        return save_checkpoint(path, "sampler", self.s.params,
                               self.meta(), optimizer=self.opt)

    @classmethod
    def restore(cls, ckpt, manifold, seqs):
        from .checkpoint import rng_state_from_json
        cfg = SamplerConfig.from_dict(ckpt.config)
        sampler = Sampler(ckpt.skeleton, cfg, params=ckpt.params)
        norm = NormStats.from_dict(ckpt.meta["norm_stats"])
        tr = cls(sampler, manifold, seqs, norm,
                 seed=ckpt.meta["seed"])
        tr.iteration = ckpt.meta["iteration"]
        tr.rng = rng_state_from_json(ckpt.meta["rng_state"])
        if ckpt.opt_state is not None:
            tr.opt.m = ckpt.opt_state["m"]
            tr.opt.v = ckpt.opt_state["v"]
            tr.opt.vhat = ckpt.opt_state["vhat"]
        return tr


# ---------------------------------------------------------------------
# evaluation

def final_frame_error_cm(manifold, sampler, seqs, norm_stats,
                         length=15, start=0, idx=None, seed=0):
    """Mean distance (cm) between the last generated frame's absolute
    lower-joint positions and the target frame's, batched over ``idx``
    (default: every sequence)."""
    if idx is None:
        idx = np.arange(seqs.n)
    idx = np.asarray(idx)
    tau = start + length + 1
    if tau > seqs.T - 1:
        raise ValueError("length does not fit the sequences")
    state0 = {k: getattr(seqs, k)[idx, start]
              for k in ("p_h", "v_h", "r_h", "p_L", "v_L", "r_L",
                        "r_U")}
    out = _rollout_core(manifold, sampler, norm_stats, state0,
                        seqs.state[idx, tau], seqs.abs_p_L[idx, tau],
                        length + 1, np.random.default_rng(seed))
    final_abs = (out["p_L"][:, -1]
                 + _tile_rows(out["p_h"][:, -1], sampler.n_pos))
    diff = (final_abs - seqs.abs_p_L[idx, tau]).reshape(len(idx), -1, 3)
    return float(np.linalg.norm(diff, axis=-1).mean())
