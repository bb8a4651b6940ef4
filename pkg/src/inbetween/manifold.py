"""CVAE motion manifold with a conditioned mixture-of-experts decoder.

The manifold embeds one-frame transitions: the encoder reads the
lower-body/hip condition of two consecutive frames and produces a
latent Gaussian; the decoder reads the current condition, the next
frame's hip velocity, and the latent sample, and emits next-frame
lower-body velocities plus rotation deltas.  Six experts are blended
by a softmax gating network; the latent sample and the future hip
velocity are injected into every expert layer.

Condition row layout (per frame): [v_h (3), v_L (6*3), r_h (6),
r_L (8*6)] = 75 dims.  Decoder output layout: [v_L_next (18),
dr_L_next (48), dr_h_next (6)] = 72 dims.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import nn
from .data import NormStats, extract_features, make_windows
from .optim import AmsGrad

__all__ = [
    "ManifoldConfig", "Manifold", "kl_loss", "rec_loss", "bone_loss",
    "foot_loss", "lower_bone_pairs", "SequenceSet", "manifold_sequences",
    "ManifoldTrainer", "reconstruction_error_cm",
]

# The encoder's log-variance head is squashed through a scaled tanh so
# exp(logsig) stays finite even when autoregressive feedback hands the
# encoder wildly out-of-distribution inputs early in training.  The bound
# is far outside the range a trained encoder uses (|logsig| < ~8), so it
# only matters as a numerical guard.
LOGSIG_BOUND = 10.0


@dataclass
class ManifoldConfig:
    d_z: int = 32
    n_experts: int = 6
    encoder_hidden: int = 256
    expert_hidden: int = 256
    gating_hidden: int = 128
    seq_len: int = 25
    batch_size: int = 32
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    lr_decay_iters: int = 50_000
    k_epochs: float = 5.0          # scheduled-sampling ramp unit
    warmup_epochs: float = 10.0    # stage-2 learning-rate warm-up
    scale_floor: float = 0.1       # loss-calibration clamp
    stage1_iters: int = 3000       # desk-scale defaults; config overrides
    stage2_iters: int = 800
    stop_recon_cm: float = 0.9     # early stop once reconstruction beats
    eval_every: int = 200          # ... this, checked at this cadence

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


# ---------------------------------------------------------------------
# losses (tape-side; all non-negative)

def kl_loss(mu, logsig):
    """Mean over dims of -0.5*(1 + s - mu^2 - e^s), s = log variance."""
    return ad.vmean((mu * mu + ad.exp(logsig) - logsig - 1.0) * 0.5)


def rec_loss(p_hat, r_hat, p_gt, r_gt):
    """MSE of positions plus MSE of stacked rotations."""
    return ad.mse(p_hat, p_gt) + ad.mse(r_hat, r_gt)


def lower_bone_pairs(skeleton):
    """Lower-body (parent, child) pairs whose predicted lengths are
    constrained; the up-leg joints enter via the hip rotation."""
    return [(j, k) for k in skeleton.lower
            if (j := skeleton.parents[k]) in skeleton.lower]


def _lower_positions(skeleton, p_L_hat, r_h_hat):
    """Hip-relative predicted positions for all 8 lower joints.

    ``p_L_hat``: (B, 18) positions of the 6 tracked joints;
    ``r_h_hat``: (B, 6) hip rotation.  Joints 1 and 5 hang off the hip
    rotation directly.
    """
    from . import diffkin as dk
    pos = {}
    for idx, j in enumerate(skeleton.pos_joints):
        pos[j] = ad.narrow(p_L_hat, idx * 3, idx * 3 + 3)
    R_h = dk.sixd_to_matrix_t(r_h_hat)
    for j in skeleton.lower:
        if j not in pos:
            pos[j] = dk.rotate_offset(R_h, skeleton.offsets[j])
    return pos


def bone_loss(skeleton, p_L_hat, r_h_hat):
    """Mean |predicted bone length - rest length| over lower-body bones."""
    from . import diffkin as dk
    pos = _lower_positions(skeleton, p_L_hat, r_h_hat)
    terms = []
    for j, k in lower_bone_pairs(skeleton):
        d = pos[k] - pos[j]
        rest = float(np.linalg.norm(skeleton.offsets[k]))
        terms.append(ad.absolute(ad.sqrt(dk.dot3(d, d)) - rest))
    return ad.vmean(ad.concat(terms, axis=-1))


def foot_loss(skeleton, v_L_hat, v_h_next, contacts):
    """Masked sum + count of predicted world toe speeds on contact frames.

    ``v_L_hat``: (B, 18) predicted lower velocities; ``v_h_next``:
    (B, 3) Var or constant hip velocity; ``contacts``: (B, n_toes)
    bool (ground truth).  Returns (sum_Var_or_None, count) so callers
    can average over every contacted (frame, toe) in a sequence.
    """
    from . import diffkin as dk
    count = int(contacts.sum())
    if count == 0:
        return None, 0
    pj = list(skeleton.pos_joints)
    speeds = []
    for toe in skeleton.toe_joints:
        idx = pj.index(toe)
        v_world = ad.narrow(v_L_hat, idx * 3, idx * 3 + 3) + v_h_next
        speeds.append(ad.sqrt(dk.dot3(v_world, v_world)))
    mag = ad.concat(speeds, axis=-1)               # (B, n_toes)
    tape = mag.tape
    masked = mag * tape.constant(contacts.astype(np.float64))
    return ad.vsum(masked), count


# ---------------------------------------------------------------------
# model

def _np_elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def _np_softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


class Manifold:
    """Parameter container + forward passes (tape and numpy)."""

    kind = "manifold"

    def __init__(self, skeleton, config: ManifoldConfig | None = None,
                 seed: int = 0, params: dict | None = None):
        self.skeleton = skeleton
        self.config = config or ManifoldConfig()
        cfg = self.config
        self.n_pos = len(skeleton.pos_joints)
        self.n_lower = len(skeleton.lower)
        self.cond_dim = 3 + 3 * self.n_pos + 6 + 6 * self.n_lower
        self.out_dim = 3 * self.n_pos + 6 * self.n_lower + 6
        self.inj_dim = 3 + cfg.d_z
        if params is not None:
            self.params = params
            return
        rng = np.random.default_rng(seed)
        p = {}
        eh, xh, gh = cfg.encoder_hidden, cfg.expert_hidden, cfg.gating_hidden
        p.update(nn.dense_params(rng, 2 * self.cond_dim, eh, "encoder.l0"))
        p.update(nn.dense_params(rng, eh, eh, "encoder.l1"))
        p.update(nn.dense_params(rng, eh, 2 * cfg.d_z, "encoder.head"))
        x0 = self.cond_dim + self.inj_dim
        p.update(nn.dense_params(rng, x0, gh, "gate.l0"))
        p.update(nn.dense_params(rng, gh, gh, "gate.l1"))
        p.update(nn.dense_params(rng, gh, cfg.n_experts, "gate.l2"))
        for e in range(cfg.n_experts):
            p.update(nn.dense_params(rng, x0, xh, f"expert{e}.l0"))
            p.update(nn.dense_params(rng, xh + self.inj_dim, xh,
                                     f"expert{e}.l1"))
            p.update(nn.dense_params(rng, xh + self.inj_dim, self.out_dim,
                                     f"expert{e}.l2"))
        self.params = p

    # -- tape forward --------------------------------------------------
    def encode(self, P, c_pair):
        h = nn.dense(P, "encoder.l0", c_pair, ad.elu)
        h = nn.dense(P, "encoder.l1", h, ad.elu)
        out = nn.dense(P, "encoder.head", h)
        d_z = self.config.d_z
        mu = ad.narrow(out, 0, d_z)
        raw = ad.narrow(out, d_z, 2 * d_z)
        logsig = ad.tanh(raw * (1.0 / LOGSIG_BOUND)) * LOGSIG_BOUND
        return mu, logsig

    def decode(self, P, c, v_h_next, z):
        """Returns (blended output, gating weights, expert outputs)."""
        inj = ad.concat([v_h_next, z], axis=-1)
        x0 = ad.concat([c, inj], axis=-1)
        g = nn.dense(P, "gate.l0", x0, ad.elu)
        g = nn.dense(P, "gate.l1", g, ad.elu)
        w = ad.softmax(nn.dense(P, "gate.l2", g))
        outs = []
        for e in range(self.config.n_experts):
            h = nn.dense(P, f"expert{e}.l0", x0, ad.elu)
            h = nn.dense(P, f"expert{e}.l1", ad.concat([h, inj], axis=-1),
                         ad.elu)
            outs.append(nn.dense(P, f"expert{e}.l2",
                                 ad.concat([h, inj], axis=-1)))
        blended = None
        for e, oe in enumerate(outs):
            term = ad.narrow(w, e, e + 1) * oe
            blended = term if blended is None else blended + term
        return blended, w, outs

    def split_output(self, out):
        """(v_L_next, dr_L_next, dr_h_next) from a (B, 72) decoder Var."""
        a = 3 * self.n_pos
        b = a + 6 * self.n_lower
        return (ad.narrow(out, 0, a), ad.narrow(out, a, b),
                ad.narrow(out, b, b + 6))

    # -- numpy forward (float64, evaluation only) ----------------------
    def encode_np(self, c_pair):
        p = self.params
        h = _np_elu(c_pair @ p["encoder.l0.W"] + p["encoder.l0.b"])
        h = _np_elu(h @ p["encoder.l1.W"] + p["encoder.l1.b"])
        out = h @ p["encoder.head.W"] + p["encoder.head.b"]
        d_z = self.config.d_z
        logsig = np.tanh(out[..., d_z:] / LOGSIG_BOUND) * LOGSIG_BOUND
        return out[..., :d_z], logsig

    def decode_np(self, c, v_h_next, z):
        p = self.params
        inj = np.concatenate([v_h_next, z], axis=-1)
        x0 = np.concatenate([c, inj], axis=-1)
        g = _np_elu(x0 @ p["gate.l0.W"] + p["gate.l0.b"])
        g = _np_elu(g @ p["gate.l1.W"] + p["gate.l1.b"])
        w = _np_softmax(g @ p["gate.l2.W"] + p["gate.l2.b"])
        outs = []
        for e in range(self.config.n_experts):
            h = _np_elu(x0 @ p[f"expert{e}.l0.W"] + p[f"expert{e}.l0.b"])
            h = np.concatenate([h, inj], axis=-1)
            h = _np_elu(h @ p[f"expert{e}.l1.W"] + p[f"expert{e}.l1.b"])
            h = np.concatenate([h, inj], axis=-1)
            outs.append(h @ p[f"expert{e}.l2.W"] + p[f"expert{e}.l2.b"])
        blended = None
        for e, oe in enumerate(outs):
            term = w[..., e:e + 1] * oe
            blended = term if blended is None else blended + term
        return blended, w, outs

    def split_output_np(self, out):
        a = 3 * self.n_pos
        b = a + 6 * self.n_lower
        return out[..., :a], out[..., a:b], out[..., b:b + 6]


def reparameterize(mu, logsig, eps):
    """z = mu + exp(logsig/2) * eps with eps supplied by the caller."""
    return mu + ad.exp(logsig * 0.5) * eps


# ---------------------------------------------------------------------
# training data

class SequenceSet:
    """Stacked per-sequence feature arrays for fast batch slicing.

    Model units: all velocities here are per-frame displacements
    (cm/frame), i.e. the data layer's cm/s divided by the frame rate.
    That keeps every network input O(1)-scaled and turns velocity
    integration into a plain add.  Positions stay in centimeters.
    """

    def __init__(self, features, frame_rate):
        n = len(features)
        if n == 0:
            raise ValueError("no training sequences")
        T = features[0].n_frames
        self.n, self.T, self.rate = n, T, frame_rate
        self.p_L = np.stack([f.p_L.reshape(T, -1) for f in features])
        self.v_L = np.stack([f.v_L.reshape(T, -1)
                             for f in features]) / frame_rate
        self.r_L = np.stack([f.r_L.reshape(T, -1) for f in features])
        self.r_U = np.stack([f.r_U.reshape(T, -1) for f in features])
        self.r_h = np.stack([f.r_h for f in features])
        self.v_h = np.stack([f.v_h for f in features]) / frame_rate
        self.p_h = np.stack([f.p_h for f in features])
        self.contacts = np.stack([f.contacts for f in features])
        # condition rows [v_h, v_L, r_h, r_L] in model units
        self.cond = np.concatenate([self.v_h, self.v_L, self.r_h,
                                    self.r_L], axis=-1)
        # rotation target [r_L, r_h] per frame, matching rec_loss
        self.rot = np.concatenate([self.r_L, self.r_h], axis=-1)
        # sampler state rows [v_h, v_L, r_U] in model units
        self.state = np.concatenate([self.v_h, self.v_L, self.r_U],
                                    axis=-1)
        # canonical-frame absolute positions: tracked lower joints and
        # the full ground-truth joint set
        self.abs_p_L = (self.p_L.reshape(n, T, -1, 3)
                        + self.p_h[:, :, None, :]).reshape(n, T, -1)
        self.pos = np.stack([f.transform.invert_points(f.positions_world)
                             for f in features])


def manifold_sequences(clips, seq_len=25, window_len=50, overlap=25):
    """Training halves: each 50-frame window splits into two 25-frame
    sequences, each re-expressed in its own canonical frame."""
    feats = []
    for clip in clips:
        for w in make_windows(clip, window_len, overlap):
            feats.append(extract_features(clip, w.start, seq_len))
            feats.append(extract_features(clip, w.start + seq_len,
                                          seq_len))
    if not feats:
        raise ValueError("corpus has no full training windows")
    return feats


# ---------------------------------------------------------------------
# trainer

class ManifoldTrainer:
    """Two-stage manifold training with scheduled sampling.

    Stage 1 optimizes reconstruction + KL; stage 2 (from stage-1
    weights) adds the foot-contact and bone-length terms with a
    learning-rate warm-up.  All four loss scales are calibrated once on
    the untrained network so each term starts near 1, then frozen.
    """

    def __init__(self, manifold: Manifold, seqs: SequenceSet,
                 seed: int = 0, scales: dict | None = None,
                 norm_stats: NormStats | None = None):
        self.m = manifold
        self.seqs = seqs
        self.seed = seed
        self.rng = np.random.default_rng(seed)
        self.opt = AmsGrad(manifold.params, lr=manifold.config.lr_start)
        self.iteration = 0
        self.stage = 1
        self.stage2_start = None
        self.scales = scales
        self.norm_stats = norm_stats
        self.log_lines = []
        cfg = manifold.config
        self.iters_per_epoch = max(1, math.ceil(seqs.n / cfg.batch_size))

    # -- schedules ------------------------------------------------------
    def feedback_p(self, it):
        """Probability of consuming the model's own last prediction.

        0 for the first k epochs, linear to 1 over k more; stage 2 is
        fully autoregressive.
        """
        if self.stage == 2:
            return 1.0
        k = self.m.config.k_epochs * self.iters_per_epoch
        if k <= 0:
            return 1.0
        return float(np.clip((it - k) / k, 0.0, 1.0))

    def lr_at(self, it, stage):
        cfg = self.m.config
        decay = lambda i: cfg.lr_start + (cfg.lr_end - cfg.lr_start) * min(
            i / cfg.lr_decay_iters, 1.0)
        if stage == 1:
            return decay(it)
        warm = cfg.warmup_epochs * self.iters_per_epoch
        if it < warm:
            return cfg.lr_start * it / warm
        return decay(it - warm)

    # -- one forward/backward over a batch of sequences ------------------
    def _sequence_losses(self, tape, P, idx, p_feedback, rng,
                         need_contact_terms):
        s = self.seqs
        m = self.m
        B = len(idx)
        rec_terms, kl_terms, bone_terms = [], [], []
        foot_sum, foot_count = None, 0
        cur = None
        for t in range(s.T - 1):
            use_pred = cur is not None and rng.random() < p_feedback
            v_h_t = tape.constant(s.v_h[idx, t])
            if use_pred:
                c_i = ad.concat([v_h_t, cur["v_L"], cur["r_h"],
                                 cur["r_L"]], axis=-1)
                p_L_cur, r_L_cur, r_h_cur = (cur["p_L"], cur["r_L"],
                                             cur["r_h"])
            else:
                c_i = tape.constant(s.cond[idx, t])
                p_L_cur = tape.constant(s.p_L[idx, t])
                r_L_cur = tape.constant(s.r_L[idx, t])
                r_h_cur = tape.constant(s.r_h[idx, t])
            c_next = tape.constant(s.cond[idx, t + 1])
            mu, logsig = m.encode(P, ad.concat([c_i, c_next], axis=-1))
            eps = tape.constant(rng.standard_normal((B, m.config.d_z)))
            z = reparameterize(mu, logsig, eps)
            v_h_next = tape.constant(s.v_h[idx, t + 1])
            out, _, _ = m.decode(P, c_i, v_h_next, z)
            v_L_hat, dr_L, dr_h = m.split_output(out)
            p_L_hat = p_L_cur + v_L_hat      # velocity is cm/frame
            r_L_hat = r_L_cur + dr_L
            r_h_hat = r_h_cur + dr_h
            r_hat = ad.concat([r_L_hat, r_h_hat], axis=-1)
            rec_terms.append(rec_loss(p_L_hat, r_hat,
                                      s.p_L[idx, t + 1],
                                      s.rot[idx, t + 1]))
            kl_terms.append(kl_loss(mu, logsig))
            if need_contact_terms:
                bone_terms.append(bone_loss(m.skeleton, p_L_hat, r_h_hat))
                fs, fc = foot_loss(m.skeleton, v_L_hat, v_h_next,
                                   s.contacts[idx, t + 1])
                if fc:
                    foot_sum = fs if foot_sum is None else foot_sum + fs
                    foot_count += fc
            cur = {"p_L": p_L_hat, "v_L": v_L_hat, "r_L": r_L_hat,
                   "r_h": r_h_hat}
        n_steps = float(s.T - 1)
        losses = {
            "rec": sum(rec_terms[1:], rec_terms[0]) * (1.0 / n_steps),
            "kl": sum(kl_terms[1:], kl_terms[0]) * (1.0 / n_steps),
        }
        if need_contact_terms:
            losses["bone"] = sum(bone_terms[1:],
                                 bone_terms[0]) * (1.0 / n_steps)
            losses["foot"] = (None if foot_count == 0
                              else foot_sum * (1.0 / foot_count))
        return losses

    # -- calibration ------------------------------------------------------
    def calibrate_scales(self, n_batches=4):
        """Scale each loss to ~1 on the untrained network, then freeze."""
        cfg = self.m.config
        rng = np.random.default_rng(self.seed + 0x5CA1E)
        sums = {"rec": 0.0, "kl": 0.0, "bone": 0.0, "foot": 0.0}
        counts = dict.fromkeys(sums, 0)
        for _ in range(n_batches):
            tape = ad.Tape()
            P = tape.wrap(self.m.params)
            idx = rng.integers(0, self.seqs.n, size=cfg.batch_size)
            losses = self._sequence_losses(tape, P, idx, 0.0, rng, True)
            for k, v in losses.items():
                if v is not None:
                    sums[k] += v.data.item()
                    counts[k] += 1
        scales = {}
        for k in sums:
            mean = sums[k] / max(counts[k], 1)
            scales[k] = 1.0 / max(mean, cfg.scale_floor)
        self.scales = scales
        return scales

    # -- training ---------------------------------------------------------
    def train(self, iterations, stage=None, log_fn=None):
        """Run ``iterations`` more steps; logs one line per iteration."""
        if stage is not None:
            self.stage = stage
        if self.scales is None:
            self.calibrate_scales()
        cfg = self.m.config
        stage2 = self.stage == 2
        if stage2 and self.stage2_start is None:
            self.stage2_start = self.iteration
        for _ in range(iterations):
            it = self.iteration
            lr = self.lr_at(it - (self.stage2_start if stage2 else 0),
                            self.stage)
            p_fb = self.feedback_p(it)
            idx = self.rng.integers(0, self.seqs.n, size=cfg.batch_size)
            tape = ad.Tape()
            P = tape.wrap(self.m.params)
            try:
                losses = self._sequence_losses(tape, P, idx, p_fb,
                                               self.rng, stage2)
                total = (losses["rec"] * self.scales["rec"]
                         + losses["kl"] * self.scales["kl"])
                if stage2:
                    total = total + losses["bone"] * self.scales["bone"]
                    if losses["foot"] is not None:
                        total = total + (losses["foot"]
                                         * self.scales["foot"])
                tape.backward(total)
            except ad.NonFiniteError as exc:
                raise ad.NonFiniteError(
                    f"manifold training diverged at iteration {it}: "
                    f"{exc}") from exc
            self.opt.lr = lr
            self.opt.step(tape.grads(P))
            self.iteration += 1
            line = (f"iter={self.iteration} stage={self.stage} "
                    f"lr={lr:.8e} "
                    f"rec={losses['rec'].data.item():.10e} "
                    f"kl={losses['kl'].data.item():.10e}")
            if stage2:
                fv = losses["foot"]
                line += (f" bone={losses['bone'].data.item():.10e}"
                         f" foot="
                         + (f"{fv.data.item():.10e}" if fv is not None
                            else "0"))
            line += f" total={total.data.item():.10e}"
            self.log_lines.append(line)
            if log_fn:
                log_fn(line)
        return self.log_lines

    def run_two_stage(self, log_fn=None, stop_fn=None):
        """Desk-scale schedule: stage 1 up to ``stage1_iters`` with an
        early-stop probe, then ``stage2_iters`` of stage 2.

        Safe to call on a restored trainer: probe points stay aligned
        to absolute iteration counts and stage 2 ends ``stage2_iters``
        after wherever it began, so an interrupted run continues
        exactly like an uninterrupted one.
        """
        cfg = self.m.config
        chunk = max(1, cfg.eval_every)
        while self.stage == 1 and self.iteration < cfg.stage1_iters:
            n = min(chunk - self.iteration % chunk,
                    cfg.stage1_iters - self.iteration)
            self.train(n, stage=1, log_fn=log_fn)
            if stop_fn is not None and stop_fn(self):
                break
        s2_start = (self.stage2_start if self.stage2_start is not None
                    else self.iteration)
        s2_end = s2_start + cfg.stage2_iters
        while self.iteration < s2_end:
            n = min(chunk - self.iteration % chunk,
                    s2_end - self.iteration)
            self.train(n, stage=2, log_fn=log_fn)
        return self.log_lines

    # -- persistence -------------------------------------------------------
    def meta(self):
        from .checkpoint import rng_state_to_json, skeleton_to_dict
        return {
            "config": self.m.config.to_dict(),
            "skeleton": skeleton_to_dict(self.m.skeleton),
            "seed": self.seed,
            "iteration": self.iteration,
            "stage": self.stage,
            "stage2_start": self.stage2_start,
            "scales": self.scales,
            "norm_stats": (self.norm_stats.to_dict()
                           if self.norm_stats else None),
            "rng_state": rng_state_to_json(self.rng),
        }

    def save(self, path):
        from .checkpoint import save_checkpoint
        return save_checkpoint(path, "manifold", self.m.params,
                               self.meta(), optimizer=self.opt)

    @classmethod
    def restore(cls, ckpt, seqs):
        from .checkpoint import rng_state_from_json
        cfg = ManifoldConfig.from_dict(ckpt.config)
        manifold = Manifold(ckpt.skeleton, cfg, params=ckpt.params)
        ns = (NormStats.from_dict(ckpt.meta["norm_stats"])
              if ckpt.meta.get("norm_stats") else None)
        tr = cls(manifold, seqs, seed=ckpt.meta["seed"],
                 scales=ckpt.meta["scales"], norm_stats=ns)
        tr.iteration = ckpt.meta["iteration"]
        tr.stage = ckpt.meta["stage"]
        tr.stage2_start = ckpt.meta.get("stage2_start")
        tr.rng = rng_state_from_json(ckpt.meta["rng_state"])
        if ckpt.opt_state is not None:
            tr.opt.load_state_dict(ckpt.opt_state)
        return tr


# ---------------------------------------------------------------------
# evaluation helper

def reconstruction_error_cm(manifold: Manifold, seqs: SequenceSet,
                            max_pairs=20000):
    """Mean per-joint position error of one-step reconstruction (eps=0).

    Encodes every consecutive ground-truth pair, takes z = mu, decodes,
    and compares integrated lower-joint positions in centimeters.
    """
    s = seqs
    N, T = s.n, s.T
    c_i = s.cond[:, :-1].reshape(-1, s.cond.shape[-1])
    c_next = s.cond[:, 1:].reshape(-1, s.cond.shape[-1])
    if c_i.shape[0] > max_pairs:
        c_i, c_next = c_i[:max_pairs], c_next[:max_pairs]
    mu, _ = manifold.encode_np(np.concatenate([c_i, c_next], axis=-1))
    v_h_next = s.v_h[:, 1:].reshape(-1, 3)[:len(mu)]
    out, _, _ = manifold.decode_np(c_i, v_h_next, mu)
    v_L_hat, _, _ = manifold.split_output_np(out)
    p_cur = s.p_L[:, :-1].reshape(-1, s.p_L.shape[-1])[:len(mu)]
    p_gt = s.p_L[:, 1:].reshape(-1, s.p_L.shape[-1])[:len(mu)]
    p_hat = p_cur + v_L_hat
    err = (p_hat - p_gt).reshape(len(mu), -1, 3)
    return float(np.linalg.norm(err, axis=-1).mean())
