import json

import numpy as np
import pytest

from anticip_mpc import InvalidInputError, forward_kinematics, position_jacobian
from anticip_mpc.kinematics import (
    RobotModel,
    default_robot_model,
    fk_batch,
    load_robot_model,
    model_to_dict,
    position_jacobians,
    quat_from_matrix,
    quat_to_matrix,
    save_robot_model,
)

from conftest import random_chain
from oracles import fk_transform_chain


class TestForwardKinematics:
    def test_zero_angles_sum_link_offsets(self, planar_model):
        fk = forward_kinematics(planar_model, [0.0, 0.0])
        np.testing.assert_allclose(fk.eef_pose.position, [2.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(
            fk.frame_positions, [[0, 0, 0], [1, 0, 0], [2, 0, 0]], atol=1e-12
        )

    def test_rigid_rotation_of_chain(self, planar_model):
        fk = forward_kinematics(planar_model, [np.pi / 2, 0.0])
        np.testing.assert_allclose(fk.eef_pose.position, [0.0, 2.0, 0.0], atol=1e-12)

    def test_matches_transform_composition_oracle(self, seven_dof):
        rng = np.random.default_rng(11)
        for _ in range(10):
            q = rng.uniform(-np.pi, np.pi, 7)
            fk = forward_kinematics(seven_dof, q)
            positions, R = fk_transform_chain(
                seven_dof.axes,
                seven_dof.offsets,
                seven_dof.base_position,
                np.eye(3),
                q,
            )
            np.testing.assert_allclose(fk.frame_positions, positions, atol=1e-10)
            np.testing.assert_allclose(quat_to_matrix(fk.eef_pose.orientation), R, atol=1e-10)

    def test_random_chains_match_oracle(self):
        rng = np.random.default_rng(12)
        for _ in range(8):
            model = random_chain(rng, int(rng.integers(2, 8)))
            q = rng.uniform(-np.pi, np.pi, model.n_joints)
            fk = forward_kinematics(model, q)
            positions, _ = fk_transform_chain(
                model.axes,
                model.offsets,
                model.base_position,
                quat_to_matrix(model.base_orientation),
                q,
            )
            np.testing.assert_allclose(fk.frame_positions, positions, atol=1e-10)

    def test_rejects_bad_joint_vectors(self, planar_model):
        with pytest.raises(InvalidInputError):
            forward_kinematics(planar_model, [0.0])
        with pytest.raises(InvalidInputError):
            forward_kinematics(planar_model, [np.nan, 0.0])

    def test_unit_quaternion_output(self, seven_dof):
        rng = np.random.default_rng(13)
        qs = rng.uniform(-np.pi, np.pi, (32, 7))
        quats = fk_batch(seven_dof, qs).eef_quats
        np.testing.assert_allclose(np.linalg.norm(quats, axis=1), 1.0, atol=1e-12)
        assert np.all(quats[:, 0] >= 0)


class TestPositionJacobian:
    def test_planar_lever_arms(self, planar_model):
        J = position_jacobian(planar_model, [0.0, 0.0], 2)
        np.testing.assert_allclose(J[:, 0], [0.0, 2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(J[:, 1], [0.0, 1.0, 0.0], atol=1e-12)

    def test_base_frame_is_fixed(self, planar_model):
        J = position_jacobian(planar_model, [0.3, -0.7], 0)
        assert np.array_equal(J, np.zeros((3, 2)))

    def test_matches_finite_differences(self):
        rng = np.random.default_rng(14)
        h = 1e-6
        for _ in range(6):
            model = random_chain(rng, int(rng.integers(2, 8)))
            q = rng.uniform(-np.pi, np.pi, model.n_joints)
            frame = int(rng.integers(1, model.n_frames))
            J = position_jacobian(model, q, frame)
            J_fd = np.empty_like(J)
            for j in range(model.n_joints):
                dq = np.zeros(model.n_joints)
                dq[j] = h
                pp = forward_kinematics(model, q + dq).frame_positions[frame]
                pm = forward_kinematics(model, q - dq).frame_positions[frame]
                J_fd[:, j] = (pp - pm) / (2 * h)
            err = np.linalg.norm(J - J_fd) / max(np.linalg.norm(J_fd), 1e-9)
            assert err < 1e-5

    def test_distal_columns_are_exactly_zero(self):
        rng = np.random.default_rng(15)
        model = random_chain(rng, 6)
        q = rng.uniform(-np.pi, np.pi, 6)
        for frame in range(model.n_frames):
            J = position_jacobian(model, q, frame)
            assert np.array_equal(J[:, frame:], np.zeros((3, 6 - frame)))

    def test_batch_matches_single(self, seven_dof):
        rng = np.random.default_rng(16)
        qs = rng.uniform(-1, 1, (5, 7))
        fk = fk_batch(seven_dof, qs)
        frames = [2, 5, 7]
        J = position_jacobians(fk, frames)
        for b in range(5):
            for fi, frame in enumerate(frames):
                np.testing.assert_allclose(
                    J[b, fi], position_jacobian(seven_dof, qs[b], frame), atol=1e-12
                )

    def test_invalid_frame(self, planar_model):
        with pytest.raises(InvalidInputError):
            position_jacobian(planar_model, [0.0, 0.0], 3)


class TestIsometry:
    def test_pairwise_distances_invariant_under_base_change(self):
        rng = np.random.default_rng(17)
        model = random_chain(rng, 5)
        quat = rng.normal(size=4)
        quat /= np.linalg.norm(quat)
        moved = RobotModel(
            axes=model.axes,
            offsets=model.offsets,
            base_position=rng.uniform(-1, 1, 3),
            base_orientation=quat,
            tracked_frames=model.tracked_frames,
            eef_frame=model.eef_frame,
            vel_lower=model.vel_lower,
            vel_upper=model.vel_upper,
        )
        qa = rng.uniform(-2, 2, 5)
        qb = rng.uniform(-2, 2, 5)
        d_orig = np.linalg.norm(
            forward_kinematics(model, qa).eef_pose.position
            - forward_kinematics(model, qb).eef_pose.position
        )
        d_moved = np.linalg.norm(
            forward_kinematics(moved, qa).eef_pose.position
            - forward_kinematics(moved, qb).eef_pose.position
        )
        assert abs(d_orig - d_moved) < 1e-9


class TestQuaternions:
    def test_matrix_round_trip(self):
        rng = np.random.default_rng(18)
        q = rng.normal(size=(64, 4))
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        q[q[:, 0] < 0] *= -1
        R = np.array([quat_to_matrix(qi) for qi in q])
        np.testing.assert_allclose(quat_from_matrix(R), q, atol=1e-12)

    def test_near_pi_rotations(self):
        # trace-dominant branch degrades near 180 degrees; other branches take over
        for axis in np.eye(3):
            R = quat_to_matrix([np.cos(np.pi / 2 - 1e-8), *(np.sin(np.pi / 2 - 1e-8) * axis)])
            q = quat_from_matrix(R)
            np.testing.assert_allclose(quat_to_matrix(q), R, atol=1e-9)


class TestModelValidation:
    def test_non_unit_axis_rejected(self):
        with pytest.raises(InvalidInputError):
            RobotModel(
                axes=np.array([[0.0, 0.0, 2.0]]),
                offsets=np.array([[1.0, 0.0, 0.0]]),
                base_position=np.zeros(3),
                base_orientation=[1, 0, 0, 0],
                tracked_frames=(1,),
                eef_frame=1,
                vel_lower=[-1.0],
                vel_upper=[1.0],
            )

    def test_bounds_ordering_enforced(self):
        with pytest.raises(InvalidInputError):
            RobotModel(
                axes=np.array([[0.0, 0.0, 1.0]]),
                offsets=np.array([[1.0, 0.0, 0.0]]),
                base_position=np.zeros(3),
                base_orientation=[1, 0, 0, 0],
                tracked_frames=(1,),
                eef_frame=1,
                vel_lower=[1.0],
                vel_upper=[-1.0],
            )

    def test_eef_must_be_last_frame(self):
        with pytest.raises(InvalidInputError):
            RobotModel(
                axes=np.array([[0.0, 0.0, 1.0], [0.0, 1.0, 0.0]]),
                offsets=np.zeros((2, 3)),
                base_position=np.zeros(3),
                base_orientation=[1, 0, 0, 0],
                tracked_frames=(1,),
                eef_frame=1,
                vel_lower=-np.ones(2),
                vel_upper=np.ones(2),
            )

    def test_json_round_trip(self, tmp_path, seven_dof):
        path = tmp_path / "robot.json"
        save_robot_model(seven_dof, path)
        loaded = load_robot_model(path)
        np.testing.assert_array_equal(loaded.axes, seven_dof.axes)
        np.testing.assert_array_equal(loaded.offsets, seven_dof.offsets)
        assert loaded.tracked_frames == seven_dof.tracked_frames
        np.testing.assert_array_equal(loaded.vel_upper, seven_dof.vel_upper)

    def test_malformed_file_rejected(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{not json")
        with pytest.raises(InvalidInputError):
            load_robot_model(path)
        data = model_to_dict(default_robot_model())
        del data["joints"]
        path.write_text(json.dumps(data))
        with pytest.raises(InvalidInputError):
            load_robot_model(path)
