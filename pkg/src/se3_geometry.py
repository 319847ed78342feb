"""
SE(3) algebra for IsNeRF
Closed-form exp/log, composition and the exposure-time pose interpolation
"""

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from src.errors import AngleAtBranchCut, ShapeMismatch
from src.utils import DTYPE, as_tensor

SMALL_ANGLE = 1e-8
BRANCH_CUT_MARGIN = 1e-6
ORTHONORMAL_TOL = 1e-9


@dataclass(frozen=True)
class Pose:
    """Rigid transform x -> rotation @ x + translation (camera-to-world for cameras)"""

    rotation: torch.Tensor
    translation: torch.Tensor

    def __post_init__(self):
        if tuple(self.rotation.shape) != (3, 3) or tuple(self.translation.shape) != (3,):
            raise ShapeMismatch(
                f"Pose needs a 3x3 rotation and a 3-vector, got "
                f"{tuple(self.rotation.shape)} and {tuple(self.translation.shape)}"
            )
        rot = self.rotation.detach()
        gram_error = (rot.T @ rot - torch.eye(3, dtype=rot.dtype)).abs().max().item()
        det_error = abs(torch.linalg.det(rot).item() - 1.0)
        if gram_error > ORTHONORMAL_TOL or det_error > ORTHONORMAL_TOL:
            raise ValueError(
                f"Rotation is not orthonormal (gram error {gram_error:.2e}, det error {det_error:.2e})"
            )

    @classmethod
    def identity(cls) -> "Pose":
        return cls(torch.eye(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    @classmethod
    def from_matrix(cls, matrix) -> "Pose":
        """Build from a 4x4 row-major homogeneous matrix (nested lists or array)"""
        m = as_tensor(matrix)
        if tuple(m.shape) != (4, 4):
            raise ShapeMismatch(f"Pose matrix must be 4x4, got {tuple(m.shape)}")
        return cls(m[:3, :3].clone(), m[:3, 3].clone())

    def to_matrix(self) -> torch.Tensor:
        """4x4 homogeneous matrix"""
        bottom = torch.tensor([[0.0, 0.0, 0.0, 1.0]], dtype=self.rotation.dtype)
        top = torch.cat([self.rotation, self.translation[:, None]], dim=1)
        return torch.cat([top, bottom], dim=0)

    def to_list(self) -> list:
        """4x4 row-major nested list for JSON, with the rotation re-projected onto SO(3)"""
        rotation = project_to_so3(self.rotation.detach())
        matrix = Pose(rotation, self.translation.detach()).to_matrix()
        return matrix.cpu().numpy().tolist()

    def detach(self) -> "Pose":
        return Pose(self.rotation.detach(), self.translation.detach())

    def transform_points(self, points: torch.Tensor) -> torch.Tensor:
        """Apply to [..., 3] points"""
        return points @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Twist:
    """se(3) element: rotation part omega (axis-angle) and translation part v"""

    omega: torch.Tensor
    v: torch.Tensor

    def __post_init__(self):
        if tuple(self.omega.shape) != (3,) or tuple(self.v.shape) != (3,):
            raise ShapeMismatch("Twist parts must be 3-vectors")
        values = torch.cat([self.omega.detach(), self.v.detach()])
        if not torch.isfinite(values).all():
            raise ValueError("Twist has non-finite components")
        angle = torch.linalg.norm(self.omega.detach()).item()
        if angle >= math.pi:
            raise AngleAtBranchCut(f"Twist rotation angle {angle:.6f} is outside the principal branch")

    @classmethod
    def from_vector(cls, xi: Sequence[float]) -> "Twist":
        """(omega_x, omega_y, omega_z, v_x, v_y, v_z)"""
        vec = as_tensor(xi)
        if tuple(vec.shape) != (6,):
            raise ShapeMismatch(f"Twist vector must have 6 entries, got {tuple(vec.shape)}")
        return cls(vec[:3], vec[3:])

    @classmethod
    def zero(cls) -> "Twist":
        return cls(torch.zeros(3, dtype=DTYPE), torch.zeros(3, dtype=DTYPE))

    def as_vector(self) -> torch.Tensor:
        return torch.cat([self.omega, self.v])

    def scaled(self, factor: float) -> "Twist":
        return Twist(self.omega * factor, self.v * factor)


def hat(omega: torch.Tensor) -> torch.Tensor:
    """Skew-symmetric matrix with hat(w) @ x == cross(w, x)"""
    wx, wy, wz = omega.unbind(-1)
    zero = torch.zeros_like(wx)
    return torch.stack([
        torch.stack([zero, -wz, wy], dim=-1),
        torch.stack([wz, zero, -wx], dim=-1),
        torch.stack([-wy, wx, zero], dim=-1),
    ], dim=-2)


def vee(matrix: torch.Tensor) -> torch.Tensor:
    """Inverse of hat for the antisymmetric part"""
    return torch.stack([matrix[..., 2, 1], matrix[..., 0, 2], matrix[..., 1, 0]], dim=-1)


def _exp_coefficients(theta_sq: torch.Tensor):
    """
    Rodrigues coefficients sin(t)/t, (1-cos t)/t^2, (t-sin t)/t^3

    Below SMALL_ANGLE the 2nd-order series is used; the double where keeps
    gradients finite at t = 0.
    """
    small = theta_sq < SMALL_ANGLE ** 2
    safe_sq = torch.where(small, torch.ones_like(theta_sq), theta_sq)
    theta = torch.sqrt(safe_sq)
    half_sin = torch.sin(0.5 * theta)

    a = torch.where(small, 1.0 - theta_sq / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta_sq / 24.0, 2.0 * half_sin * half_sin / safe_sq)
    c = torch.where(small, 1.0 / 6.0 - theta_sq / 120.0, (theta - torch.sin(theta)) / (safe_sq * theta))
    return a, b, c


def se3_exp(xi: Twist) -> Pose:
    """
    SE(3) exponential

    Args:
        xi: Twist with |omega| < pi

    Returns:
        Pose with Rodrigues rotation and left-Jacobian-weighted translation
    """
    omega, v = xi.omega, xi.v
    theta_sq = torch.dot(omega, omega)
    a, b, c = _exp_coefficients(theta_sq)

    eye = torch.eye(3, dtype=omega.dtype)
    w = hat(omega)
    w2 = w @ w
    rotation = eye + a * w + b * w2
    jacobian = eye + b * w + c * w2
    return Pose(rotation, jacobian @ v)


def se3_log(pose: Pose) -> Twist:
    """
    SE(3) logarithm on the principal branch

    Raises:
        AngleAtBranchCut: rotation angle >= pi - 1e-6
    """
    rotation, translation = pose.rotation, pose.translation

    # s has norm sin(theta); atan2 keeps precision at both small and large angles
    s = 0.5 * vee(rotation - rotation.T)
    cos_theta = 0.5 * (torch.diagonal(rotation).sum() - 1.0)
    s_sq = torch.dot(s, s)
    small = s_sq < SMALL_ANGLE ** 2
    s_norm = torch.sqrt(torch.where(small, torch.ones_like(s_sq), s_sq))
    s_norm = torch.where(small, torch.zeros_like(s_norm), s_norm)
    theta = torch.atan2(s_norm, cos_theta)

    if theta.item() >= math.pi - BRANCH_CUT_MARGIN:
        raise AngleAtBranchCut(f"Rotation angle {theta.item():.9f} is at the SE(3) log branch cut")

    safe_norm = torch.where(small, torch.ones_like(s_norm), s_norm)
    factor = torch.where(small, 1.0 + s_sq / 6.0, theta / safe_norm)
    omega = factor * s

    theta_sq = torch.dot(omega, omega)
    a, b, _ = _exp_coefficients(theta_sq)
    tiny = theta_sq < SMALL_ANGLE ** 2
    safe_sq = torch.where(tiny, torch.ones_like(theta_sq), theta_sq)
    d = torch.where(tiny, 1.0 / 12.0 + theta_sq / 720.0, (1.0 - a / (2.0 * b)) / safe_sq)

    w = hat(omega)
    jacobian_inv = torch.eye(3, dtype=omega.dtype) - 0.5 * w + d * (w @ w)
    return Twist(omega, jacobian_inv @ translation)


def compose(a: Pose, b: Pose) -> Pose:
    """a * b (apply b first)"""
    return Pose(a.rotation @ b.rotation, a.rotation @ b.translation + a.translation)


def inverse(pose: Pose) -> Pose:
    rot_t = pose.rotation.T
    return Pose(rot_t, -(rot_t @ pose.translation))


def _same_constant_pose(a: Pose, b: Pose) -> bool:
    if a.rotation.requires_grad or b.rotation.requires_grad:
        return False
    if a.translation.requires_grad or b.translation.requires_grad:
        return False
    return torch.equal(a.rotation, b.rotation) and torch.equal(a.translation, b.translation)


def interpolate_pose(t_start: Pose, t_end: Pose, fraction: float) -> Pose:
    """
    Geodesic interpolation T_start * exp(fraction * log(T_start^-1 * T_end))

    fraction=0 returns T_start itself, and so does a static (identical,
    non-trainable) pair for every fraction.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    if fraction == 0.0 or _same_constant_pose(t_start, t_end):
        return t_start

    relative = se3_log(compose(inverse(t_start), t_end))
    return compose(t_start, se3_exp(relative.scaled(fraction)))


def project_to_so3(rotation: torch.Tensor) -> torch.Tensor:
    """Nearest rotation matrix (SVD projection)"""
    u, _, vh = torch.linalg.svd(rotation)
    fix = torch.ones(3, dtype=rotation.dtype)
    fix[2] = torch.sign(torch.linalg.det(u @ vh))
    return u @ torch.diag(fix) @ vh


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> Pose:
    """
    Camera-to-world pose looking from eye at target

    Camera axes follow the pinhole convention used for ray generation:
    x right, y down, z forward.
    """
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward], axis=1)
    return Pose(as_tensor(rotation), as_tensor(eye))


def pose_error(estimate: Pose, reference: Pose):
    """
    Rotation error in degrees and translation error between two poses

    Returns:
        (angle of R_est^T R_ref in degrees, |t_est - t_ref|)
    """
    relative = estimate.rotation.detach().T @ reference.rotation.detach()
    cos_angle = float(0.5 * (torch.diagonal(relative).sum().item() - 1.0))
    angle = math.degrees(math.acos(max(-1.0, min(1.0, cos_angle))))
    distance = float(torch.linalg.norm(estimate.translation.detach() - reference.translation.detach()))
    return angle, distance
