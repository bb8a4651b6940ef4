"""Feature extraction, windowing, normalization, corpus tests."""

import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from inbetween import kinematics as kin
from inbetween import synth
from inbetween.bvh import MotionClip
from inbetween.data import (FrameTransform, NormStats, bundled_corpus_path,
                            extract_features, load_corpus, make_windows,
                            split_by_subject)


def static_clip(n_frames=10, hip=(3.0, 90.0, -7.0), yaw=0.0):
    sk = kin.skeleton_22()
    R = np.broadcast_to(np.eye(3), (n_frames, 22, 3, 3)).copy()
    R[:, 0] = kin.yaw_matrix(yaw)
    root = np.tile(np.asarray(hip, dtype=float), (n_frames, 1))
    return MotionClip(skeleton=sk, root_pos=root, rotations=R,
                      frame_rate=30.0)


@pytest.fixture(scope="module")
def corpus():
    return load_corpus(bundled_corpus_path())


class TestExtractDimensions:
    def test_feature_shapes_22(self, corpus):
        f = extract_features(corpus[0])
        T = corpus[0].n_frames
        assert f.r_L.shape == (T, 8, 6)
        assert f.p_L.shape == (T, 6, 3)
        assert f.v_L.shape == (T, 6, 3)
        assert f.r_U.shape == (T, 13, 6)
        assert f.r_h.shape == (T, 6)
        assert f.v_h.shape == (T, 3)
        assert f.condition().shape == (T, 75)
        assert f.state_input().shape == (T, 99)

    def test_static_pose_zero_velocities(self):
        f = extract_features(static_clip())
        assert np.abs(f.v_h).max() == 0.0
        assert np.abs(f.v_L).max() == 0.0

    def test_constant_velocity_root(self):
        clip = static_clip(12)
        clip.root_pos[:] += np.outer(np.arange(12), [2.0, 0.0, 1.0])
        f = extract_features(clip)
        # 2 cm/frame at 30 Hz = 60 cm/s along the clip's canonical axes
        expect = f.transform.invert_dirs(np.array([2.0, 0.0, 1.0]) * 30.0)
        np.testing.assert_allclose(f.v_h,
                                   np.tile(expect, (12, 1)), atol=1e-9)

    def test_velocity_zero_copied_from_one(self):
        f = extract_features(load_corpus(bundled_corpus_path())[0])
        np.testing.assert_array_equal(f.v_h[0], f.v_h[1])
        np.testing.assert_array_equal(f.v_L[0], f.v_L[1])


class TestCanonicalFrame:
    def test_first_frame_centered_and_aligned(self, corpus):
        f = extract_features(corpus[2])   # turning clip, nonzero yaw
        np.testing.assert_allclose(f.p_h[0, [0, 2]], [0.0, 0.0],
                                   atol=1e-9)
        # hip forward axis at frame 0 maps to +Z (zero heading)
        R0 = kin.sixd_to_matrix(f.r_h[0])
        assert abs(kin.yaw_of_matrix(R0)) < 1e-9

    def test_transform_recovers_world(self, corpus):
        clip = corpus[1]
        f = extract_features(clip)
        world = f.transform.apply_points(f.p_h)
        np.testing.assert_allclose(world, clip.root_pos, atol=1e-9)

    def test_translation_invariance(self):
        clip = static_clip(8)
        f0 = extract_features(clip)
        clip2 = MotionClip(skeleton=clip.skeleton,
                           root_pos=clip.root_pos + [500.0, 0.0, -300.0],
                           rotations=clip.rotations, frame_rate=30.0)
        f1 = extract_features(clip2)
        np.testing.assert_allclose(f1.p_h, f0.p_h, atol=1e-9)
        np.testing.assert_allclose(f1.p_L, f0.p_L, atol=1e-9)
        np.testing.assert_allclose(f1.r_h, f0.r_h, atol=1e-9)

    def test_yaw_equivariance(self, corpus):
        clip = corpus[0]
        f0 = extract_features(clip, 0, 40)
        Y = kin.yaw_matrix(1.234)
        rot2 = clip.rotations[:40].copy()
        rot2[:, 0] = np.einsum("ij,tjk->tik", Y, rot2[:, 0])
        clip2 = MotionClip(skeleton=clip.skeleton,
                           root_pos=clip.root_pos[:40] @ Y.T,
                           rotations=rot2, frame_rate=30.0)
        f1 = extract_features(clip2)
        np.testing.assert_allclose(f1.p_h, f0.p_h, atol=1e-8)
        np.testing.assert_allclose(f1.v_h, f0.v_h, atol=1e-7)
        np.testing.assert_allclose(f1.r_h, f0.r_h, atol=1e-9)
        np.testing.assert_allclose(f1.r_L, f0.r_L, atol=1e-9)

    def test_compose_and_identity(self):
        a = FrameTransform(yaw=0.7, origin=np.array([1.0, 0.0, 2.0]))
        b = FrameTransform(yaw=-0.2, origin=np.array([-3.0, 0.0, 5.0]))
        p = np.array([0.3, 4.0, -1.0])
        np.testing.assert_allclose(a.apply_points(b.apply_points(p)),
                                   a.compose(b).apply_points(p), atol=1e-12)
        np.testing.assert_allclose(a.invert_points(a.apply_points(p)), p,
                                   atol=1e-12)
        ident = FrameTransform.identity()
        np.testing.assert_allclose(ident.apply_points(p), p)


class TestWindows:
    def test_hundred_frame_training_windows(self):
        clip = static_clip(100)
        ws = make_windows(clip, 50, 25)
        assert [w.start for w in ws] == [0, 25, 50]
        assert all(w.length == 50 for w in ws)

    def test_49_frames_no_window(self):
        assert make_windows(static_clip(49), 50, 25) == []

    def test_50_frames_one_window(self):
        assert len(make_windows(static_clip(50), 50, 25)) == 1

    def test_eval_window_stride(self):
        assert len(make_windows(static_clip(65), 65, 25)) == 1
        assert len(make_windows(static_clip(104), 65, 25)) == 1
        assert len(make_windows(static_clip(105), 65, 25)) == 2

    @settings(max_examples=30, deadline=None)
    @given(n=st.integers(min_value=2, max_value=400))
    def test_window_count_formula(self, n):
        ws = make_windows(static_clip(n), 50, 25)
        expect = max(0, (n - 50) // 25 + 1) if n >= 50 else 0
        assert len(ws) == expect
        for a, b in zip(ws, ws[1:]):
            assert b.start - a.start == 25

    def test_bad_overlap(self):
        with pytest.raises(ValueError):
            make_windows(static_clip(60), 50, 50)


class TestNormStats:
    def test_z_round_trip(self, corpus):
        ws = make_windows(corpus[0], 50, 25)
        stats = NormStats.from_windows(ws)
        x = ws[0].features.abs_p_L().reshape(50, -1)
        np.testing.assert_allclose(stats.unz(stats.z(x)), x, atol=1e-9)

    def test_degenerate_dims_warn(self):
        ws = make_windows(static_clip(60), 50, 25)
        with warnings.catch_warnings(record=True) as rec:
            warnings.simplefilter("always")
            stats = NormStats.from_windows(ws)
        assert any("degenerate" in str(w.message) for w in rec)
        assert (stats.std == 1.0).all()   # static pose: every dim constant

    def test_dict_round_trip(self, corpus):
        ws = make_windows(corpus[0], 50, 25)
        stats = NormStats.from_windows(ws)
        back = NormStats.from_dict(stats.to_dict())
        np.testing.assert_array_equal(back.mean, stats.mean)
        np.testing.assert_array_equal(back.std, stats.std)


class TestSplit:
    def test_hold_out_subject(self, corpus):
        train, test = split_by_subject(corpus, "s4")
        assert len(train) + len(test) == len(corpus)
        assert all(c.subject == "s4" for c in test)
        assert all(c.subject != "s4" for c in train)
        assert test

    def test_unknown_subject(self, corpus):
        with pytest.raises(ValueError, match="unknown subject"):
            split_by_subject(corpus, "nobody")


class TestBundledCorpus:
    def test_size_requirements(self, corpus):
        assert len(corpus) >= 4
        assert sum(c.n_frames for c in corpus) >= 1000

    def test_every_frame_has_a_contact(self, corpus):
        for clip in corpus:
            f = extract_features(clip)
            assert f.contacts.any(axis=1).all(), clip.name

    def test_planted_toes_are_stationary(self, corpus):
        for clip in corpus:
            f = extract_features(clip)
            pos = clip.positions()[:, list(clip.skeleton.toe_joints), :]
            vel = np.linalg.norm((pos[1:] - pos[:-1]) * clip.frame_rate,
                                 axis=-1)
            stance = f.contacts[1:]
            # text round trip quantizes to ~1e-4 cm/s; far below threshold
            assert vel[stance].max() < 1e-3, clip.name

    def test_regeneration_is_deterministic(self, corpus, tmp_path):
        manifest = synth.generate_corpus(tmp_path)
        regen = load_corpus(manifest)
        for a, b in zip(corpus, regen):
            assert a.name == b.name
            np.testing.assert_allclose(a.root_pos, b.root_pos, atol=1e-6)
            assert np.abs(a.rotations - b.rotations).max() < 1e-6

    def test_corpus_is_learnable_scale(self, corpus):
        # hip speeds stay in a sane band; features free of NaN
        for clip in corpus:
            f = extract_features(clip)
            speed = np.linalg.norm(f.v_h[1:], axis=1)
            assert speed.max() < 200.0
            for arr in (f.p_h, f.v_h, f.r_h, f.p_L, f.v_L, f.r_L, f.r_U):
                assert np.isfinite(arr).all()
