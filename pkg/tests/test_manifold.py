"""Manifold losses, mixture-of-experts contracts, and training mechanics."""

import numpy as np
import pytest

from inbetween import autodiff as ad
from inbetween import kinematics as kin
from inbetween.data import bundled_corpus_path, extract_features, load_corpus
from inbetween.manifold import (Manifold, ManifoldConfig, ManifoldTrainer,
                                SequenceSet, bone_loss, foot_loss, kl_loss,
                                lower_bone_pairs, manifold_sequences,
                                rec_loss, reconstruction_error_cm,
                                reparameterize)

TINY = ManifoldConfig(d_z=4, n_experts=2, encoder_hidden=12,
                      expert_hidden=10, gating_hidden=8, seq_len=6,
                      batch_size=2, k_epochs=2.0)

SMALL = ManifoldConfig(d_z=8, n_experts=3, encoder_hidden=48,
                       expert_hidden=48, gating_hidden=24, seq_len=12,
                       batch_size=8, k_epochs=3.0)


@pytest.fixture(scope="module")
def corpus():
    return load_corpus(bundled_corpus_path())


def tiny_seqs(corpus, T, n=8):
    clip = corpus[0]
    feats = [extract_features(clip, 10 + 7 * i, T) for i in range(n)]
    return SequenceSet(feats, clip.frame_rate)


def scalar_kl(mu, logsig):
    tape = ad.Tape()
    out = kl_loss(tape.constant(np.atleast_1d(float(mu))),
                  tape.constant(np.atleast_1d(float(logsig))))
    return out.data.item()


class TestKl:
    def test_unit_cases(self):
        assert scalar_kl(0.0, 0.0) == 0.0
        assert scalar_kl(1.0, 0.0) == 0.5

    def test_grid_nonnegative(self):
        grid = np.linspace(-3.0, 3.0, 101)
        mu, ls = np.meshgrid(grid, grid)
        tape = ad.Tape()
        per = 0.5 * (mu**2 + np.exp(ls) - ls - 1.0)
        assert per.min() >= 0.0
        out = kl_loss(tape.constant(mu.ravel()), tape.constant(ls.ravel()))
        np.testing.assert_allclose(out.data.item(), per.mean(), rtol=1e-12)

    def test_gradcheck(self):
        rng = np.random.default_rng(0)
        params = {"mu": rng.normal(size=7), "ls": rng.normal(size=7)}
        err = ad.gradcheck(
            lambda t, p: kl_loss(p["mu"], p["ls"]), params, rng=rng)
        assert err < 1e-4


class TestRecLoss:
    def test_exact_prediction_zero(self):
        rng = np.random.default_rng(1)
        p = rng.normal(size=(4, 18))
        r = rng.normal(size=(4, 54))
        tape = ad.Tape()
        out = rec_loss(tape.constant(p), tape.constant(r), p, r)
        assert out.data.item() == 0.0

    def test_unit_error_is_one_over_d(self):
        p = np.zeros((2, 18))
        r = np.zeros((2, 54))
        p_hat = p.copy()
        p_hat[0, 0] = 1.0
        tape = ad.Tape()
        out = rec_loss(tape.constant(p_hat), tape.constant(r), p, r)
        np.testing.assert_allclose(out.data.item(), 1.0 / 36, rtol=1e-12)


class TestBoneLoss:
    def test_pairs(self):
        sk = kin.skeleton_22()
        assert lower_bone_pairs(sk) == [(1, 2), (2, 3), (3, 4),
                                        (5, 6), (6, 7), (7, 8)]

    def test_ground_truth_is_zero(self, corpus):
        f = extract_features(corpus[0], 0, 4)
        tape = ad.Tape()
        out = bone_loss(corpus[0].skeleton,
                        tape.constant(f.p_L.reshape(4, -1)),
                        tape.constant(f.r_h))
        assert out.data.item() < 1e-9

    def test_single_bone_elongation(self, corpus):
        sk = corpus[0].skeleton
        f = extract_features(corpus[0], 0, 2)
        p = f.p_L[:1].reshape(1, -1).copy()
        # push the left toe (joint 4, row 2) 1 cm farther from the ankle
        ankle = p[0, 3:6]
        toe = p[0, 6:9]
        d = (toe - ankle) / np.linalg.norm(toe - ankle)
        p[0, 6:9] = toe + d
        tape = ad.Tape()
        out = bone_loss(sk, tape.constant(p), tape.constant(f.r_h[:1]))
        np.testing.assert_allclose(out.data.item(), 1.0 / 6, atol=1e-7)


class TestFootLoss:
    def test_magnitude_example(self):
        sk = kin.skeleton_22()
        v_L = np.zeros((1, 18))
        v_L[0, 6:9] = [1.0, 0.0, 0.0]      # left toe (row 2) velocity
        v_h = np.array([[2.0, 0.0, 0.0]])
        contacts = np.array([[True, False]])
        tape = ad.Tape()
        total, count = foot_loss(sk, tape.constant(v_L),
                                 tape.constant(v_h), contacts)
        assert count == 1
        np.testing.assert_allclose(total.data.item(), 3.0, rtol=1e-12)

    def test_no_contacts(self):
        sk = kin.skeleton_22()
        tape = ad.Tape()
        total, count = foot_loss(sk, tape.constant(np.zeros((2, 18))),
                                 tape.constant(np.zeros((2, 3))),
                                 np.zeros((2, 2), dtype=bool))
        assert total is None and count == 0

    def test_perfect_plant_zero(self):
        sk = kin.skeleton_22()
        v_L = np.zeros((1, 18))
        v_L[0, 6:9] = [-3.0, 0.0, 1.0]       # left toe (row 2)
        v_L[0, 15:18] = [-3.0, 0.0, 1.0]     # right toe (row 5)
        v_h = np.array([[3.0, 0.0, -1.0]])   # cancels both toe velocities
        tape = ad.Tape()
        total, count = foot_loss(sk, tape.constant(v_L),
                                 tape.constant(v_h),
                                 np.array([[True, True]]))
        assert count == 2
        np.testing.assert_allclose(total.data.item(), 0.0, atol=1e-12)


class TestMixtureOfExperts:
    @pytest.fixture()
    def model(self, corpus):
        return Manifold(corpus[0].skeleton, ManifoldConfig(), seed=11)

    def random_inputs(self, model, rng, B=5):
        c = rng.normal(size=(B, model.cond_dim))
        v = rng.normal(size=(B, 3))
        z = rng.normal(size=(B, model.config.d_z))
        return c, v, z

    def test_weights_simplex(self, model):
        rng = np.random.default_rng(2)
        c, v, z = self.random_inputs(model, rng)
        _, w, _ = model.decode_np(c, v, z)
        assert (w >= 0).all()
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-9)

    def test_blend_equals_manual_sum(self, model):
        rng = np.random.default_rng(3)
        c, v, z = self.random_inputs(model, rng)
        out, w, outs = model.decode_np(c, v, z)
        manual = None
        for e, oe in enumerate(outs):
            term = w[:, e:e + 1] * oe
            manual = term if manual is None else manual + term
        assert np.abs(out - manual).max() <= 1e-12

    def test_blend_equals_manual_sum_tape(self, model):
        rng = np.random.default_rng(4)
        c, v, z = self.random_inputs(model, rng)
        tape = ad.Tape()
        P = tape.wrap(model.params)
        out, w, outs = model.decode(P, tape.constant(c),
                                    tape.constant(v), tape.constant(z))
        manual = sum(w.data[:, e:e + 1] * outs[e].data
                     for e in range(len(outs)))
        assert np.abs(out.data - manual).max() <= 1e-12

    def test_one_hot_selects_single_expert(self, model):
        rng = np.random.default_rng(5)
        c, v, z = self.random_inputs(model, rng)
        for chosen in (0, 3):
            forced = dict(model.params)
            bias = np.full(model.config.n_experts, -50.0)
            bias[chosen] = 50.0
            forced["gate.l2.W"] = np.zeros_like(model.params["gate.l2.W"])
            forced["gate.l2.b"] = bias
            m2 = Manifold(model.skeleton, model.config, params=forced)
            out, w, outs = m2.decode_np(c, v, z)
            assert np.argmax(w[0]) == chosen
            np.testing.assert_allclose(out, outs[chosen], atol=1e-9)

    def test_encode_deterministic_and_shaped(self, model):
        rng = np.random.default_rng(6)
        pair = rng.normal(size=(4, 2 * model.cond_dim))
        mu1, ls1 = model.encode_np(pair)
        mu2, ls2 = model.encode_np(pair)
        assert mu1.shape == (4, model.config.d_z)
        np.testing.assert_array_equal(mu1, mu2)
        np.testing.assert_array_equal(ls1, ls2)

    def test_decoder_output_split(self, model):
        rng = np.random.default_rng(7)
        c, v, z = self.random_inputs(model, rng, B=2)
        out, _, _ = model.decode_np(c, v, z)
        v_L, dr_L, dr_h = model.split_output_np(out)
        assert v_L.shape == (2, 18)
        assert dr_L.shape == (2, 48)
        assert dr_h.shape == (2, 6)
        np.testing.assert_array_equal(
            np.concatenate([v_L, dr_L, dr_h], axis=-1), out)


class TestReparameterize:
    def test_collapsed_sigma_returns_mu(self):
        tape = ad.Tape()
        mu = tape.constant(np.array([0.3, -1.2]))
        z = reparameterize(mu, tape.constant(np.array([-100.0, -100.0])),
                           tape.constant(np.array([5.0, -5.0])))
        np.testing.assert_allclose(z.data, mu.data, atol=1e-20)

    def test_seeded_reproducibility(self):
        def draw():
            rng = np.random.default_rng(123)
            tape = ad.Tape()
            return reparameterize(
                tape.constant(np.zeros(8)), tape.constant(np.zeros(8)),
                tape.constant(rng.standard_normal(8))).data
        np.testing.assert_array_equal(draw(), draw())

    def test_monte_carlo_mean(self):
        rng = np.random.default_rng(9)
        n = 100_000
        mu, logsig = 0.7, 0.4
        tape = ad.Tape()
        z = reparameterize(tape.constant(np.full(n, mu)),
                           tape.constant(np.full(n, logsig)),
                           tape.constant(rng.standard_normal(n)))
        sigma = np.exp(logsig / 2)
        assert abs(z.data.mean() - mu) < 3 * sigma / np.sqrt(n)


class TestComposedGradients:
    def test_manifold_loss_gradcheck(self, corpus):
        seqs = tiny_seqs(corpus, TINY.seq_len, n=4)
        model = Manifold(corpus[0].skeleton, TINY, seed=21)
        tr = ManifoldTrainer(model, seqs, seed=21)

        def fn(tape, leaves):
            rng = np.random.default_rng(77)
            idx = np.array([0, 2])
            losses = tr._sequence_losses(tape, leaves, idx, 0.6, rng,
                                         True)
            total = losses["rec"] + losses["kl"] + losses["bone"]
            if losses["foot"] is not None:
                total = total + losses["foot"]
            return total

        err = ad.gradcheck(fn, model.params, n_coords=100,
                           rng=np.random.default_rng(1))
        assert err < 1e-4


class TestTraining:
    def test_loss_decreases(self, corpus):
        # Ramp unit large enough that all 60 iterations stay teacher
        # forced; otherwise the sampling ramp, not learning, dominates
        # the loss trajectory.
        cfg = ManifoldConfig(d_z=8, n_experts=3, encoder_hidden=48,
                             expert_hidden=48, gating_hidden=24, seq_len=12,
                             batch_size=8, k_epochs=100.0)
        for seed in (0, 1, 2):
            seqs = tiny_seqs(corpus, cfg.seq_len, n=16)
            model = Manifold(corpus[0].skeleton, cfg, seed=seed)
            tr = ManifoldTrainer(model, seqs, seed=seed)
            tr.train(60, stage=1)
            totals = [float(l.split("total=")[1]) for l in tr.log_lines]
            assert np.mean(totals[-10:]) < np.mean(totals[:10]), seed

    def test_full_feedback_stays_finite(self, corpus):
        # An untrained decoder amplifies its own predictions, so a fully
        # autoregressive unroll explodes geometrically; the bounded
        # log-variance head must keep every loss finite regardless.
        seqs = tiny_seqs(corpus, SMALL.seq_len, n=16)
        model = Manifold(corpus[0].skeleton, SMALL, seed=0)
        tr = ManifoldTrainer(model, seqs, seed=0)
        tr.train(16, stage=2)  # p_feedback = 1.0 from the first step
        totals = [float(l.split("total=")[1]) for l in tr.log_lines]
        assert all(np.isfinite(totals))

    def test_calibration_scales(self, corpus):
        seqs = tiny_seqs(corpus, TINY.seq_len)
        model = Manifold(corpus[0].skeleton, TINY, seed=3)
        tr = ManifoldTrainer(model, seqs, seed=3)
        scales = tr.calibrate_scales()
        assert set(scales) == {"rec", "kl", "bone", "foot"}
        for v in scales.values():
            assert 0.0 < v <= 1.0 / 0.1 + 1e-9

    def test_schedules(self, corpus):
        seqs = tiny_seqs(corpus, TINY.seq_len)
        model = Manifold(corpus[0].skeleton, TINY, seed=4)
        tr = ManifoldTrainer(model, seqs, seed=4)
        k = TINY.k_epochs * tr.iters_per_epoch
        assert tr.feedback_p(0) == 0.0
        assert tr.feedback_p(k) == 0.0
        assert tr.feedback_p(1.5 * k) == 0.5
        assert tr.feedback_p(2 * k) == 1.0
        assert tr.lr_at(0, 1) == TINY.lr_start
        np.testing.assert_allclose(tr.lr_at(TINY.lr_decay_iters, 1),
                                   TINY.lr_end, rtol=1e-12)
        warm = TINY.warmup_epochs * tr.iters_per_epoch
        np.testing.assert_allclose(tr.lr_at(warm / 2, 2),
                                   TINY.lr_start / 2)
        np.testing.assert_allclose(tr.lr_at(warm, 2), TINY.lr_start)

    def test_resume_equivalence(self, corpus, tmp_path):
        def fresh():
            seqs = tiny_seqs(corpus, TINY.seq_len)
            model = Manifold(corpus[0].skeleton, TINY, seed=5)
            return ManifoldTrainer(model, seqs, seed=5)

        a = fresh()
        a.train(6, stage=1)

        b = fresh()
        b.train(3, stage=1)
        path = tmp_path / "ckpt.npz"
        b.save(path)
        from inbetween.checkpoint import load_checkpoint
        ck = load_checkpoint(path, expect_kind="manifold")
        c = ManifoldTrainer.restore(ck, tiny_seqs(corpus, TINY.seq_len))
        c.train(3, stage=1)

        assert a.log_lines[3:] == c.log_lines
        for k in a.m.params:
            np.testing.assert_array_equal(a.m.params[k], c.m.params[k])

    def test_checkpoint_bit_exact(self, corpus, tmp_path):
        seqs = tiny_seqs(corpus, TINY.seq_len)
        model = Manifold(corpus[0].skeleton, TINY, seed=6)
        tr = ManifoldTrainer(model, seqs, seed=6)
        tr.train(2, stage=1)
        path = tr.save(tmp_path / "m.npz")
        from inbetween.checkpoint import load_checkpoint
        ck = load_checkpoint(path)
        assert ck.kind == "manifold"
        for k, v in model.params.items():
            np.testing.assert_array_equal(ck.params[k], v)
        assert ck.config == TINY.to_dict()

    def test_sequences_helper(self, corpus):
        feats = manifold_sequences(corpus[:1])
        clip = corpus[0]
        n_windows = (clip.n_frames - 50) // 25 + 1
        assert len(feats) == 2 * n_windows
        assert all(f.n_frames == 25 for f in feats)

    def test_reconstruction_error_runs(self, corpus):
        seqs = tiny_seqs(corpus, TINY.seq_len)
        model = Manifold(corpus[0].skeleton, TINY, seed=8)
        err = reconstruction_error_cm(model, seqs)
        assert np.isfinite(err) and err > 0
