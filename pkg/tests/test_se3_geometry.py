import math

import pytest
import torch

from src.errors import AngleAtBranchCut
from src.se3_geometry import (
    Pose, Twist, compose, interpolate_pose, inverse, look_at, pose_error, project_to_so3, se3_exp, se3_log,
)
from src.utils import DTYPE, as_tensor, make_generator


def rot_z(angle):
    c, s = math.cos(angle), math.sin(angle)
    return as_tensor([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def random_twist(generator, max_angle=3.0):
    axis = torch.randn(3, generator=generator, dtype=DTYPE)
    axis = axis / torch.linalg.norm(axis)
    angle = float(torch.rand(1, generator=generator, dtype=DTYPE)) * max_angle
    v = 5.0 * (torch.rand(3, generator=generator, dtype=DTYPE) - 0.5)
    return Twist(axis * angle, v)


def assert_pose_close(a, b, tol=1e-9):
    assert torch.allclose(a.rotation, b.rotation, atol=tol, rtol=0)
    assert torch.allclose(a.translation, b.translation, atol=tol, rtol=0)


class TestExp:
    def test_zero_twist_is_identity(self):
        assert_pose_close(se3_exp(Twist.zero()), Pose.identity(), 0.0)

    def test_quarter_turn_about_z(self):
        pose = se3_exp(Twist.from_vector([0, 0, math.pi / 2, 0, 0, 0]))
        assert_pose_close(pose, Pose(rot_z(math.pi / 2), torch.zeros(3, dtype=DTYPE)), 1e-12)

    def test_pure_translation(self):
        pose = se3_exp(Twist.from_vector([0, 0, 0, 1, 2, 3]))
        assert torch.equal(pose.rotation, torch.eye(3, dtype=DTYPE))
        assert torch.allclose(pose.translation, as_tensor([1, 2, 3]), atol=1e-15)

    def test_small_angle_branch_is_continuous(self):
        tiny = se3_exp(Twist.from_vector([1e-9, -2e-9, 3e-9, 1, 0, 0]))
        slightly_larger = se3_exp(Twist.from_vector([1e-7, -2e-7, 3e-7, 1, 0, 0]))
        assert_pose_close(tiny, slightly_larger, 1e-6)

    def test_twist_at_pi_rejected(self):
        with pytest.raises(AngleAtBranchCut):
            Twist.from_vector([0, 0, math.pi, 0, 0, 0])


class TestLog:
    def test_identity_gives_zero_twist(self):
        xi = se3_log(Pose.identity())
        assert torch.equal(xi.as_vector(), torch.zeros(6, dtype=DTYPE))

    def test_known_twist_roundtrip(self):
        xi = Twist.from_vector([0.1, 0.2, 0.3, 4, 5, 6])
        back = se3_log(se3_exp(xi))
        assert torch.allclose(back.as_vector(), xi.as_vector(), atol=1e-9, rtol=0)

    def test_half_turn_at_branch_cut(self):
        half_turn = Pose(torch.diag(as_tensor([-1.0, -1.0, 1.0])), torch.zeros(3, dtype=DTYPE))
        with pytest.raises(AngleAtBranchCut):
            se3_log(half_turn)

    def test_exp_log_roundtrip_many_twists(self):
        generator = make_generator(42)
        worst = 0.0
        for _ in range(10000):
            xi = random_twist(generator)
            pose = se3_exp(xi)
            again = se3_exp(se3_log(pose))
            worst = max(worst, (again.to_matrix() - pose.to_matrix()).abs().max().item())
        assert worst < 1e-9


class TestComposeInverse:
    def test_compose_with_identity(self):
        pose = se3_exp(Twist.from_vector([0.3, -0.2, 0.1, 1, 2, 3]))
        assert_pose_close(compose(Pose.identity(), pose), pose, 0.0)

    def test_inverse_of_identity(self):
        assert_pose_close(inverse(Pose.identity()), Pose.identity(), 0.0)

    def test_pose_times_inverse(self):
        pose = se3_exp(Twist.from_vector([0.7, 0.4, -1.1, -3, 0.5, 2]))
        assert_pose_close(compose(pose, inverse(pose)), Pose.identity())

    def test_compose_applies_right_pose_first(self):
        a = se3_exp(Twist.from_vector([0.2, 0.0, 0.5, 1, 0, 0]))
        b = se3_exp(Twist.from_vector([0.0, -0.4, 0.1, 0, 2, 0]))
        points = as_tensor([[0.0, 0.0, 0.0], [1.0, -2.0, 0.5]])
        expected = a.transform_points(b.transform_points(points))
        assert torch.allclose(compose(a, b).transform_points(points), expected, atol=1e-12)

    def test_non_orthonormal_rotation_rejected(self):
        with pytest.raises(ValueError):
            Pose(2.0 * torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))


class TestInterpolate:
    def test_endpoints(self):
        start = se3_exp(Twist.from_vector([0.1, 0.0, 0.2, 1, 0, 0]))
        end = se3_exp(Twist.from_vector([-0.3, 0.5, 0.1, 0, 2, 1]))
        assert interpolate_pose(start, end, 0.0) is start
        assert_pose_close(interpolate_pose(start, end, 1.0), end)

    def test_halfway_translation(self):
        end = Pose(torch.eye(3, dtype=DTYPE), as_tensor([2.0, 0.0, 0.0]))
        mid = interpolate_pose(Pose.identity(), end, 0.5)
        assert torch.allclose(mid.translation, as_tensor([1.0, 0.0, 0.0]), atol=1e-12)

    def test_quarter_of_a_rotation(self):
        end = Pose(rot_z(math.radians(90)), torch.zeros(3, dtype=DTYPE))
        quarter = interpolate_pose(Pose.identity(), end, 0.25)
        assert torch.allclose(quarter.rotation, rot_z(math.radians(22.5)), atol=1e-12)

    def test_static_pair_returns_start(self):
        pose = se3_exp(Twist.from_vector([0.2, 0.1, 0.0, 0, 1, 0]))
        for fraction in (0.0, 0.3, 0.5, 1.0):
            assert interpolate_pose(pose, pose, fraction) is pose

    def test_fraction_out_of_range(self):
        with pytest.raises(ValueError):
            interpolate_pose(Pose.identity(), Pose.identity(), 1.5)

    def test_geodesic_is_differentiable(self):
        omega = torch.tensor([0.0, 0.0, 0.4], dtype=DTYPE, requires_grad=True)
        end = se3_exp(Twist(omega, as_tensor([1.0, 0.0, 0.0])))
        mid = interpolate_pose(Pose.identity(), end, 0.5)
        mid.translation.sum().backward()
        assert torch.isfinite(omega.grad).all()


class TestHelpers:
    def test_look_at_points_camera_z_at_target(self):
        pose = look_at((0.0, 0.8, -2.5), (0.0, 0.0, 0.0))
        forward = pose.rotation[:, 2]
        expected = -as_tensor([0.0, 0.8, -2.5])
        assert torch.allclose(forward, expected / torch.linalg.norm(expected), atol=1e-12)
        # image rows run downwards in the world
        assert pose.rotation[1, 1] < 0

    def test_project_to_so3_fixes_drift(self):
        drifted = rot_z(0.3) + 1e-6
        fixed = project_to_so3(drifted)
        assert torch.allclose(fixed.T @ fixed, torch.eye(3, dtype=DTYPE), atol=1e-12)
        assert abs(torch.linalg.det(fixed).item() - 1.0) < 1e-12

    def test_pose_error(self):
        a = Pose(rot_z(math.radians(10)), as_tensor([0.0, 0.0, 0.0]))
        b = Pose(torch.eye(3, dtype=DTYPE), as_tensor([3.0, 4.0, 0.0]))
        degrees, distance = pose_error(a, b)
        assert degrees == pytest.approx(10.0, abs=1e-9)
        assert distance == pytest.approx(5.0)

    def test_matrix_roundtrip(self):
        pose = se3_exp(Twist.from_vector([0.2, -0.4, 0.6, 1, -2, 3]))
        assert_pose_close(Pose.from_matrix(pose.to_list()), pose, 1e-12)
