"""Forward kinematics and BVH import/export."""

import numpy as np
import pytest

from isg.features.motion import MotionSequence
from isg.features.skeleton import (
    forward_kinematics,
    parse_bvh,
    toy_skeleton,
    write_bvh,
)


def zero_motion(skeleton, frames=3):
    return MotionSequence(np.zeros((frames, 3 * skeleton.n_joints)), 20.0,
                          skeleton.joint_names)


class TestForwardKinematics:
    def test_zero_rotations_give_rest_pose(self):
        sk = toy_skeleton()
        pos = forward_kinematics(sk, zero_motion(sk))
        # rest pose positions are cumulative offsets along the hierarchy
        expected = np.zeros((sk.n_joints, 3))
        for j in range(sk.n_joints):
            p = sk.parents[j]
            expected[j] = sk.offsets[j] + (expected[p] if p >= 0 else 0)
        assert np.allclose(pos[0], expected)
        assert np.allclose(pos[1], expected)

    def test_constant_pose_is_single_point_per_joint(self):
        sk = toy_skeleton()
        rng = np.random.default_rng(0)
        pose = rng.uniform(-0.5, 0.5, size=3 * sk.n_joints)
        motion = MotionSequence(np.tile(pose, (5, 1)), 20.0, sk.joint_names)
        pos = forward_kinematics(sk, motion)
        assert np.allclose(pos, pos[0:1])

    def test_shoulder_sweep_traces_arc_of_forearm_length(self):
        sk = toy_skeleton()
        j_arm = sk.index("RightArm")
        j_fore = sk.index("RightForeArm")
        angles = np.linspace(0.0, np.pi / 2, 30)
        values = np.zeros((30, 3 * sk.n_joints))
        values[:, 3 * j_arm + 2] = angles      # z-rotation sweep at shoulder
        motion = MotionSequence(values, 20.0, sk.joint_names)
        pos = forward_kinematics(sk, motion)
        center = pos[:, j_arm, :]
        radii = np.linalg.norm(pos[:, j_fore, :] - center, axis=1)
        expected = np.linalg.norm(sk.offsets[j_fore])
        assert np.abs(radii - expected).max() < 1e-6
        # and it is an actual arc: endpoints differ
        assert np.linalg.norm(pos[0, j_fore] - pos[-1, j_fore]) > 0.1

    def test_unknown_joint_names_rejected(self):
        sk = toy_skeleton()
        motion = MotionSequence(np.zeros((2, 6)), 20.0, ("A", "B"))
        with pytest.raises(KeyError):
            forward_kinematics(sk, motion)


class TestBvh:
    def test_round_trip_preserves_motion(self, tmp_path, rng):
        sk = toy_skeleton()
        frames = 8
        axes = rng.normal(size=(frames, sk.n_joints, 3))
        axes /= np.linalg.norm(axes, axis=-1, keepdims=True)
        angles = rng.uniform(0, 0.9 * np.pi, size=(frames, sk.n_joints, 1))
        values = (axes * angles).reshape(frames, -1)
        motion = MotionSequence(values, 30.0, sk.joint_names)
        write_bvh(tmp_path / "m.bvh", sk, motion)
        sk2, back = parse_bvh(tmp_path / "m.bvh")
        assert sk2.joint_names == sk.joint_names
        assert sk2.parents == sk.parents
        assert np.allclose(sk2.offsets, sk.offsets, atol=1e-5)
        assert back.fps == pytest.approx(30.0, rel=1e-6)
        # compare via rotation matrices: expmap signs may differ at pi
        from isg.features.rotations import expmap_to_rotation
        R1 = expmap_to_rotation(motion.values.reshape(frames, -1, 3))
        R2 = expmap_to_rotation(back.values.reshape(frames, -1, 3))
        assert np.abs(R1 - R2).max() < 1e-4

    def test_parse_rejects_truncated_file(self, tmp_path):
        (tmp_path / "bad.bvh").write_text("HIERARCHY\nROOT Hips\n{\n")
        with pytest.raises((ValueError, IndexError)):
            parse_bvh(tmp_path / "bad.bvh")

    def test_group_coloring_buckets(self):
        sk = toy_skeleton()
        groups = sk.groups()
        assert set(groups["right_arm"]) == {"RightArm", "RightForeArm",
                                            "RightHand"}
        assert set(groups["left_arm"]) == {"LeftArm", "LeftForeArm",
                                           "LeftHand"}
        assert set(groups["torso"]) == {"Hips", "Spine", "Neck", "Head"}
