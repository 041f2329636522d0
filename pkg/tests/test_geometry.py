import numpy as np
import pytest

from dit4d.geometry import (Bone, Camera, PoseClip, SkinnedMesh, capsule_person,
                            lbs_pose, look_at_camera, make_pose_clip,
                            orbit_trajectory, quat_from_axis_angle, quat_from_matrix,
                            quat_to_matrix, rest_pose, rotation_angle, uv_sphere)
from dit4d.tensor import ContractError


def _single_bone_mesh(verts):
    verts = np.asarray(verts, dtype=float)
    return SkinnedMesh(verts, np.array([[0, 0, 0]]) if len(verts) < 3 else
                       np.array([[0, 1, 2]]),
                       np.ones((len(verts), 1)),
                       [Bone("root", -1, np.zeros(3))])


class TestLBS:
    def test_identity_pose_exact(self):
        mesh = capsule_person()
        pose = rest_pose(mesh)
        posed = lbs_pose(mesh, *pose.frame(0))
        assert np.abs(posed - mesh.vertices).max() < 1e-12

    def test_single_bone_rotation(self):
        mesh = _single_bone_mesh([[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
        q = quat_from_axis_angle([0, 0, 1], np.pi / 2)
        posed = lbs_pose(mesh, np.array([q]))
        assert np.abs(posed[0] - [0.0, 1.0, 0.0]).max() < 1e-12

    def test_half_half_blend_is_midpoint(self):
        # two root-level bones cannot share a tree; use root + child at origin
        bones = [Bone("root", -1, np.zeros(3)), Bone("child", 0, np.zeros(3))]
        verts = np.array([[1.0, 0.0, 0.0]])
        tris = np.zeros((1, 3), dtype=int)
        weights = np.array([[0.5, 0.5]])
        mesh = SkinnedMesh(verts, tris, weights, bones)
        ident = np.array([1.0, 0.0, 0.0, 0.0])
        qz = quat_from_axis_angle([0, 0, 1], np.pi / 2)
        # root identity, child rotated: blend of (1,0,0) and (0,1,0)
        posed = lbs_pose(mesh, np.stack([ident, qz]))
        assert np.abs(posed[0] - [0.5, 0.5, 0.0]).max() < 1e-12

    def test_bone_count_mismatch(self):
        mesh = capsule_person()
        with pytest.raises(ContractError):
            lbs_pose(mesh, np.tile([1.0, 0, 0, 0], (3, 1)))

    def test_root_translation(self):
        mesh = capsule_person()
        pose = rest_pose(mesh)
        posed = lbs_pose(mesh, pose.rotations[0], np.array([1.0, 2.0, 3.0]))
        assert np.abs(posed - (mesh.vertices + [1.0, 2.0, 3.0])).max() < 1e-9


class TestMeshInvariants:
    def test_capsule_person_valid(self):
        mesh = capsule_person()
        assert np.abs(mesh.skin_weights.sum(1) - 1.0).max() < 1e-9
        assert (mesh.skin_weights >= 0).all()
        assert mesh.triangles.max() < len(mesh.vertices)
        assert 300 <= len(mesh.vertices) <= 800
        assert 8 <= mesh.n_bones <= 14

    def test_bad_weights_rejected(self):
        with pytest.raises(ContractError):
            SkinnedMesh(np.zeros((2, 3)), np.zeros((1, 3), dtype=int),
                        np.array([[0.5], [0.7]]),
                        [Bone("root", -1, np.zeros(3))])

    def test_two_roots_rejected(self):
        with pytest.raises(ContractError):
            SkinnedMesh(np.zeros((1, 3)), np.zeros((1, 3), dtype=int),
                        np.ones((1, 2)) / 2,
                        [Bone("a", -1, np.zeros(3)), Bone("b", -1, np.zeros(3))])

    def test_pose_clip_unit_quat_enforced(self):
        with pytest.raises(ContractError):
            PoseClip(np.full((1, 2, 4), 0.7), np.zeros((1, 3)))


class TestCameras:
    def test_orthonormality(self):
        cam = look_at_camera((1.0, 2.0, 3.0), (0, 0.9, 0), 40.0, (32, 32))
        R = cam.rotation
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9

    def test_single_frame_orbit(self):
        cams = orbit_trajectory(1, 2.5, 1.0, (0, 0.9, 0), 360.0, 40.0, (16, 16))
        assert len(cams) == 1
        R = cams[0].rotation
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9

    def test_four_frame_yaws(self):
        cams = orbit_trajectory(4, 2.5, 0.0, (0, 0.0, 0), 360.0, 40.0, (16, 16))
        # camera 2 relative to camera 0: a 180-degree yaw
        rel = cams[2].rotation @ cams[0].rotation.T
        assert abs(np.degrees(rotation_angle(rel)) - 180.0) < 1e-9
        for k in (1, 3):
            rel = cams[k].rotation @ cams[0].rotation.T
            assert abs(np.degrees(rotation_angle(rel)) - 90.0) < 1e-9

    def test_uniform_angular_spacing_quaternion_oracle(self):
        n = 12
        cams = orbit_trajectory(n, 2.8, 0.9, (0, 0.9, 0), 360.0, 40.0, (16, 16))
        angles = []
        for a, b in zip(cams, cams[1:] + cams[:1]):
            rel = b.rotation @ a.rotation.T
            # quaternion-based angle as the independent oracle
            q = quat_from_matrix(rel)
            ang = 2 * np.arccos(np.clip(abs(q[0]), -1, 1))
            angles.append(np.degrees(ang))
        assert np.abs(np.array(angles) - 360.0 / n).max() < 1e-9

    def test_invalid_radius(self):
        with pytest.raises(ContractError):
            orbit_trajectory(4, 0.0, 1.0, (0, 0, 0), 360.0, 40.0, (16, 16))

    def test_camera_validates_rotation(self):
        with pytest.raises(ContractError):
            Camera(np.eye(3) * 2.0, np.zeros(3), 40.0, (8, 8), (16, 16))

    def test_json_roundtrip_exact(self):
        cam = look_at_camera((1.234567891234, 2.0, 3.0), (0, 0.9, 0), 40.0, (32, 32))
        back = Camera.from_json(cam.to_json())
        assert np.array_equal(back.rotation, cam.rotation)
        assert np.array_equal(back.translation, cam.translation)


class TestQuaternions:
    def test_matrix_roundtrip(self):
        rng = np.random.default_rng(0)
        for _ in range(25):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            R = quat_to_matrix(q)
            q2 = quat_from_matrix(R)
            # q and -q encode the same rotation
            assert min(np.abs(q2 - q).max(), np.abs(q2 + q).max()) < 1e-9

    def test_axis_angle(self):
        q = quat_from_axis_angle([0, 1, 0], np.pi / 3)
        assert abs(np.degrees(rotation_angle(quat_to_matrix(q))) - 60.0) < 1e-9


class TestPoseClips:
    @pytest.mark.parametrize("kind", ["walk", "wave", "turn", "sway"])
    def test_kinds_valid(self, kind):
        mesh = capsule_person()
        clip = make_pose_clip(kind, 12, mesh, seed=3)
        assert clip.n_frames == 12
        assert np.abs(np.linalg.norm(clip.rotations, axis=2) - 1.0).max() < 1e-9

    def test_unknown_kind(self):
        with pytest.raises(ContractError):
            make_pose_clip("moonwalk", 8, capsule_person())

    def test_json_roundtrip(self):
        mesh = capsule_person()
        clip = make_pose_clip("walk", 5, mesh, seed=1)
        back = PoseClip.from_json(clip.to_json())
        assert np.array_equal(back.rotations, clip.rotations)
        assert np.array_equal(back.root_translation, clip.root_translation)


def test_uv_sphere_closed_and_outward():
    v, t = uv_sphere((0, 0, 0), 1.0, stacks=16, slices=24)
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    volume = np.einsum("ij,ij->", a, np.cross(b, c)) / 6.0
    assert volume > 0.95 * 4 / 3 * np.pi * 0.95
