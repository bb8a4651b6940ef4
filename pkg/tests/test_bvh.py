"""BVH parser/writer tests."""

import numpy as np
import pytest

from inbetween import kinematics as kin
from inbetween.bvh import BvhError, BvhRig, parse_bvh, write_bvh
from inbetween.data import bundled_corpus_path, load_corpus

TWO_JOINT = """\
HIERARCHY
ROOT A
{
  OFFSET 0.0 0.0 0.0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation Xrotation
  JOINT B
  {
    OFFSET 0.0 10.0 0.0
    CHANNELS 3 Zrotation Yrotation Xrotation
    End Site
    {
      OFFSET 0.0 5.0 0.0
    }
  }
}
MOTION
Frames: 4
Frame Time: 0.033333333
0 90 0 0 0 0 0 0 0
1 90 0 0 90 0 0 0 0
2 90 0 0 90 0 45 0 0
3 90 0 30 0 10 0 20 0
"""


class TestParse:
    def test_two_joint_fixture(self):
        rig, clip = parse_bvh(TWO_JOINT)
        assert isinstance(rig, BvhRig)
        assert rig.n_joints == 2
        assert rig.names == ("A", "B")
        assert rig.parents == (-1, 0)
        np.testing.assert_allclose(rig.offsets[1], [0, 10, 0])
        assert clip.n_frames == 4
        np.testing.assert_allclose(clip.root_pos[:, 0], [0, 1, 2, 3])
        np.testing.assert_allclose(clip.frame_rate, 1.0 / 0.033333333)

    def test_rotation_values(self):
        _, clip = parse_bvh(TWO_JOINT)
        np.testing.assert_allclose(clip.rotations[0, 0], np.eye(3),
                                   atol=1e-12)
        # frame 1: root yaw 90 degrees
        np.testing.assert_allclose(clip.rotations[1, 0],
                                   kin.yaw_matrix(np.pi / 2), atol=1e-12)
        # frame 2: joint B rolled 45 about Z
        np.testing.assert_allclose(
            clip.rotations[2, 1],
            kin.euler_to_matrix([45, 0, 0], "ZYX"), atol=1e-12)

    def test_truncated_motion(self):
        text = "\n".join(TWO_JOINT.splitlines()[:-2]) + "\n"
        with pytest.raises(BvhError, match="frames"):
            parse_bvh(text)

    def test_trailing_data(self):
        with pytest.raises(BvhError, match="trailing"):
            parse_bvh(TWO_JOINT + "0 0 0 0 0 0 0 0 0\n")

    def test_syntax_error_carries_line(self):
        bad = TWO_JOINT.replace("OFFSET 0.0 10.0 0.0",
                                "OFFSET zero 10.0 0.0")
        with pytest.raises(BvhError, match=r"line 8"):
            parse_bvh(bad)

    def test_unsupported_rotation_order(self):
        bad = TWO_JOINT.replace(
            "CHANNELS 3 Zrotation Yrotation Xrotation",
            "CHANNELS 3 Xrotation Yrotation Zrotation")
        with pytest.raises(BvhError, match="unsupported"):
            parse_bvh(bad)

    def test_bad_root_channels(self):
        bad = TWO_JOINT.replace(
            "CHANNELS 6 Xposition Yposition Zposition Zrotation Yrotation "
            "Xrotation",
            "CHANNELS 3 Zrotation Yrotation Xrotation")
        with pytest.raises(BvhError, match="root"):
            parse_bvh(bad)

    def test_bad_frame_count(self):
        bad = TWO_JOINT.replace("Frames: 4", "Frames: four")
        with pytest.raises(BvhError, match="frame count"):
            parse_bvh(bad)


class TestRoundTrip:
    @pytest.mark.parametrize("order", ["ZYX", "ZXY"])
    def test_corpus_clip_round_trip(self, order):
        clips = load_corpus(bundled_corpus_path())
        clip = clips[0]
        text = write_bvh(clip, order=order)
        rig, back = parse_bvh(text)
        assert isinstance(back.skeleton, kin.Skeleton)
        assert back.n_frames == clip.n_frames
        np.testing.assert_allclose(back.root_pos, clip.root_pos, atol=1e-6)
        assert np.abs(back.rotations - clip.rotations).max() < 1e-6

    def test_promotion_to_skeleton(self):
        clips = load_corpus(bundled_corpus_path())
        for clip in clips:
            assert isinstance(clip.skeleton, kin.Skeleton)
            assert clip.skeleton.n_joints == 22

    def test_write_two_joint_round_trip(self):
        _, clip = parse_bvh(TWO_JOINT)
        rig, back = parse_bvh(write_bvh(clip))
        assert np.abs(back.rotations - clip.rotations).max() < 1e-6
        np.testing.assert_allclose(back.root_pos, clip.root_pos, atol=1e-6)
