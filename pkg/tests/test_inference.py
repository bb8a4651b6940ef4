"""Float32 inference sessions: parity with the float64 reference
rollout, determinism, and session mechanics."""

import numpy as np
import pytest

from inbetween import engine
from inbetween import kinematics as kin
from inbetween.data import NormStats
from inbetween.engine import ModelBundle, canonicalize_state, rest_state
from inbetween.inference import InferenceSession, rollout_f32
from inbetween.manifold import Manifold, ManifoldConfig
from inbetween.sampler import (Sampler, SamplerConfig, SessionComplete,
                               rollout)

BACKENDS = ["numpy"]
try:
    import inbetween._kernels  # noqa: F401
    BACKENDS.append("compiled")
except ImportError:  # pragma: no cover
    pass


@pytest.fixture(scope="module")
def bundle():
    sk = kin.skeleton_22()
    return ModelBundle(
        skeleton=sk,
        manifold=Manifold(sk, ManifoldConfig(
            d_z=4, n_experts=2, encoder_hidden=16, expert_hidden=16,
            gating_hidden=8), seed=0),
        sampler=Sampler(sk, SamplerConfig(
            d_z=4, enc_hidden=24, enc_out=16, lstm_hidden=32,
            dec_hidden=24, dec_hidden2=16), seed=1),
        norm_stats=NormStats(np.zeros(18), np.ones(18)))


@pytest.fixture(scope="module")
def states(bundle):
    sk = bundle.skeleton
    start = rest_state(sk)
    target = rest_state(sk)
    target.p_h = target.p_h + np.array([4.0, 0.0, 30.0])
    tf = engine.FrameTransform.from_hip(start.p_h,
                                        kin.sixd_to_matrix(start.r_h))
    return (canonicalize_state(start, tf),
            canonicalize_state(target, tf))


@pytest.mark.parametrize("backend", BACKENDS)
class TestParity:
    def test_tracks_float64_reference(self, bundle, states, backend):
        # duration 12 exercises both noisy (dt > 5) and noise-free steps
        ref = rollout(*states, 12, bundle.manifold, bundle.sampler,
                      seed=3, norm_stats=bundle.norm_stats)
        got = rollout_f32(bundle, *states, 12, seed=3, backend=backend)
        assert got.n_frames == ref.n_frames == 11
        for key in ref.frames:
            scale = max(1.0, np.abs(ref.frames[key]).max())
            err = np.abs(got.frames[key] - ref.frames[key]).max()
            assert err / scale < 1e-4, key

    def test_final_state_and_clip_work(self, bundle, states, backend):
        res = rollout_f32(bundle, *states, 6, seed=0, backend=backend)
        fs = res.final_state()
        assert fs.p_h.shape == (3,)
        clip = res.to_clip()
        assert clip.n_frames == 5
        assert res.hybrid_positions().shape == (
            5, bundle.skeleton.n_joints, 3)

    def test_deterministic(self, bundle, states, backend):
        a = rollout_f32(bundle, *states, 9, seed=7, backend=backend)
        b = rollout_f32(bundle, *states, 9, seed=7, backend=backend)
        c = rollout_f32(bundle, *states, 9, seed=8, backend=backend)
        for key in a.frames:
            np.testing.assert_array_equal(a.frames[key], b.frames[key])
        assert any(not np.array_equal(a.frames[k], c.frames[k])
                   for k in a.frames)


def test_backends_agree(bundle, states):
    if len(BACKENDS) < 2:
        pytest.skip("compiled extension unavailable")
    a = rollout_f32(bundle, *states, 10, seed=2, backend="numpy")
    b = rollout_f32(bundle, *states, 10, seed=2, backend="compiled")
    for key in a.frames:
        scale = max(1.0, np.abs(a.frames[key]).max())
        err = np.abs(a.frames[key] - b.frames[key]).max()
        assert err / scale < 1e-4, key


class TestSessionMechanics:
    def test_session_reusable(self, bundle, states):
        sess = InferenceSession(bundle, backend="numpy")
        a = sess.begin(*states, 7, seed=1).run()
        b = sess.begin(*states, 7, seed=1).run()
        for key in a.frames:
            np.testing.assert_array_equal(a.frames[key], b.frames[key])

    def test_exhausted_session_raises(self, bundle, states):
        sess = InferenceSession(bundle, backend="numpy")
        sess.begin(*states, 3, seed=0)
        sess.step()
        sess.step()
        assert sess.frames_remaining == 0
        with pytest.raises(SessionComplete):
            sess.step()

    def test_short_duration_rejected(self, bundle, states):
        sess = InferenceSession(bundle, backend="numpy")
        with pytest.raises(ValueError, match="duration"):
            sess.begin(*states, 1)

    def test_recurrent_state_seeding(self, bundle, states):
        # priming h/c mirrors the reference rollout's h0/c0 path
        ref0 = rollout(*states, 6, bundle.manifold, bundle.sampler,
                       seed=4, norm_stats=bundle.norm_stats)
        ref = rollout(*states, 6, bundle.manifold, bundle.sampler,
                      seed=5, norm_stats=bundle.norm_stats,
                      h0=ref0.h, c0=ref0.c)
        sess = InferenceSession(bundle, backend="numpy")
        got = sess.begin(*states, 6, seed=5, h=ref0.h,
                         c=ref0.c).run()
        for key in ref.frames:
            scale = max(1.0, np.abs(ref.frames[key]).max())
            err = np.abs(got.frames[key] - ref.frames[key]).max()
            assert err / scale < 1e-4, key

    def test_packed_weights_read_only_behavior(self, bundle, states):
        before = {k: v.copy() for k, v in bundle.sampler.params.items()}
        rollout_f32(bundle, *states, 8, seed=0, backend="numpy")
        for k, v in bundle.sampler.params.items():
            assert np.array_equal(before[k], v)
