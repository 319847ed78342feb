"""
Motion-blur synthesis for IsNeRF
Virtual sharp poses along the exposure trajectory and their averaged renders
"""

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import torch

from src.errors import DimensionMismatch
from src.islm import IslmParams
from src.sampler import Intrinsics, generate_rays
from src.se3_geometry import Pose, interpolate_pose
from src.utils import derive_seed
from src.volume_renderer import FieldPair, RenderConfig, SamplePlan, render_image, render_rays

logger = logging.getLogger("IsNeRF.Blur")

EXCLUSIVE = "exclusive"
INCLUSIVE = "inclusive"


@dataclass
class ExposureModel:
    """Camera trajectory of one exposure: start and end poses plus n virtual frames"""
    t_start: Pose
    t_end: Pose
    n: int = 8

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"An exposure needs at least one virtual image, got n={self.n}")

    def midpoint(self) -> Pose:
        return interpolate_pose(self.t_start, self.t_end, 0.5)


def exposure_fractions(n: int, endpoint: str = EXCLUSIVE) -> List[float]:
    """
    Trajectory fractions of the n virtual frames

    exclusive: t/n for t = 0..n-1 (T_end is never reached).
    inclusive: t/(n-1), so the last frame sits at T_end.
    """
    if endpoint not in (EXCLUSIVE, INCLUSIVE):
        raise ValueError(f"Unknown blur endpoint mode: {endpoint}")
    if n == 1:
        return [0.0]
    denom = n - 1 if endpoint == INCLUSIVE else n
    return [t / denom for t in range(n)]


def virtual_poses(em: ExposureModel, endpoint: str = EXCLUSIVE) -> List[Pose]:
    """
    Poses of the n virtual sharp images of an exposure

    Args:
        em: exposure model
        endpoint: "exclusive" (t/n) or "inclusive" (t/(n-1))

    Returns:
        n poses; n=1 gives [T_start]
    """
    return [interpolate_pose(em.t_start, em.t_end, f) for f in exposure_fractions(em.n, endpoint)]


def synthesize_blur(images: Sequence[torch.Tensor]) -> torch.Tensor:
    """
    Per-pixel mean of n linear image buffers

    The running mean m_k = m_{k-1} + (x_k - m_{k-1}) / k is accumulated in
    index order, which keeps a stack of identical images exactly unchanged.
    """
    if len(images) == 0:
        raise ValueError("Need at least one image to average")
    reference = tuple(images[0].shape)
    for image in images[1:]:
        if tuple(image.shape) != reference:
            raise DimensionMismatch(f"Image shapes differ: {reference} vs {tuple(image.shape)}")

    mean = images[0]
    for k, image in enumerate(images[1:], start=2):
        mean = mean + (image - mean) / k
    return mean


def render_blurred(em: ExposureModel, intrinsics: Intrinsics, fields: FieldPair,
                   islm: Optional[IslmParams], cfg: RenderConfig, seed: Optional[int] = None,
                   endpoint: str = EXCLUSIVE) -> torch.Tensor:
    """
    Render every virtual pose of an exposure and average the results

    Args:
        em: exposure model
        intrinsics: pinhole intrinsics
        fields: coarse and fine fields
        islm: ISLM parameters (None when scattering is off)
        cfg: render configuration
        seed: base seed; pose t renders with derive_seed(seed, t). None is deterministic
        endpoint: trajectory fraction convention

    Returns:
        [H, W, 3] blurred linear buffer
    """
    images = []
    for index, pose in enumerate(virtual_poses(em, endpoint)):
        pose_seed = None if seed is None else derive_seed(seed, index)
        images.append(render_image(pose, intrinsics, fields, islm, cfg, pose_seed))
    logger.debug(f"Averaged {len(images)} virtual renders")
    return synthesize_blur(images)


@dataclass
class BlurredPixels:
    """Blurred fine and coarse colors of a pixel batch plus the plan of every virtual pose"""
    color: torch.Tensor
    coarse: torch.Tensor
    plans: List[SamplePlan]


def render_blurred_pixels(poses: Sequence[Pose], intrinsics: Intrinsics, pixel_index: torch.Tensor,
                          fields: FieldPair, islm: Optional[IslmParams], cfg: RenderConfig,
                          rng: Optional[torch.Generator] = None,
                          plans: Optional[Sequence[SamplePlan]] = None) -> BlurredPixels:
    """
    Differentiable blurred colors of selected pixels

    Rays are regenerated from each virtual pose, so gradients reach the
    trajectory through ray origins and directions.

    Args:
        poses: virtual poses of one exposure
        intrinsics: pinhole intrinsics
        pixel_index: [P] flat pixel indices
        fields: coarse and fine fields
        islm: ISLM parameters
        cfg: render configuration
        rng: generator shared by all virtual poses
        plans: frozen per-pose sample plans from an earlier pass
    """
    colors, coarse, used = [], [], []
    for index, pose in enumerate(poses):
        ray = generate_rays(pose, intrinsics, cfg.near, cfg.far, pixel_index)
        plan = plans[index] if plans is not None else None
        result = render_rays(ray, fields, islm, cfg, rng, plan)
        colors.append(result.color)
        coarse.append(result.coarse)
        used.append(result.plan)
    return BlurredPixels(synthesize_blur(colors), synthesize_blur(coarse), used)
