"""
Ray sampling for IsNeRF
Pinhole ray generation, stratified coarse samples, inverse-CDF fine samples
and the choice of adjacent scattering origins
"""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional

import torch

from src.errors import TooFewSamples
from src.se3_geometry import Pose
from src.utils import DTYPE, RandomSource, uniform

logger = logging.getLogger("IsNeRF.Sampler")

PDF_FLOOR = 1e-5
# smallest gap between merged samples; coincident values are pushed apart by this much
MIN_SPACING = 1e-9


@dataclass
class Intrinsics:
    """Pinhole camera: focal lengths and principal point in pixels"""
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0 or self.width < 1 or self.height < 1:
            raise ValueError(f"Invalid pinhole intrinsics: {self}")

    @classmethod
    def from_fov(cls, width: int, height: int, fov_deg: float) -> "Intrinsics":
        """Square pixels, horizontal field of view, principal point at the image center"""
        focal = 0.5 * width / math.tan(math.radians(0.5 * fov_deg))
        return cls(focal, focal, 0.5 * width, 0.5 * height, width, height)

    @classmethod
    def from_dict(cls, data: Dict, width: int, height: int) -> "Intrinsics":
        return cls(float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]), width, height)

    def to_dict(self) -> Dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy}


@dataclass
class Ray:
    """
    A batch of R rays

    origins and directions are [R, 3]; t_near and t_far are [R].
    """
    origins: torch.Tensor
    directions: torch.Tensor
    t_near: torch.Tensor
    t_far: torch.Tensor

    def __post_init__(self):
        norms = torch.linalg.norm(self.directions.detach(), dim=-1)
        if norms.numel() and (norms - 1.0).abs().max().item() > 1e-6:
            raise ValueError("Ray directions must be unit-norm")
        if (self.t_near >= self.t_far).any():
            raise ValueError("Every ray needs t_near < t_far")

    def __len__(self) -> int:
        return self.origins.shape[0]

    def points(self, t_values: torch.Tensor) -> torch.Tensor:
        """[R, N] t-values -> [R, N, 3] world points"""
        return self.origins[:, None, :] + t_values[..., None] * self.directions[:, None, :]

    def subset(self, index: torch.Tensor) -> "Ray":
        return Ray(self.origins[index], self.directions[index], self.t_near[index], self.t_far[index])


@dataclass
class RaySampleSet:
    """
    Evaluated samples along a ray batch

    deltas[i] = t[i+1] - t[i], and the last interval runs to t_far.
    fallback marks rays whose weights were all zero when resampled.
    """
    t_values: torch.Tensor
    deltas: torch.Tensor
    sigmas: torch.Tensor
    colors: torch.Tensor
    weights: torch.Tensor
    transmittance: torch.Tensor
    t_far: torch.Tensor
    fallback: Optional[torch.Tensor] = None

    @property
    def num_samples(self) -> int:
        return self.t_values.shape[-1]


def generate_rays(pose: Pose, intrinsics: Intrinsics, near: float, far: float,
                  pixel_index: Optional[torch.Tensor] = None) -> Ray:
    """
    One ray per pixel center, in row-major pixel order

    Args:
        pose: camera-to-world pose (x right, y down, z forward)
        intrinsics: pinhole intrinsics
        near, far: ray range along the unit direction
        pixel_index: optional flat pixel indices; all pixels when None
    """
    if pixel_index is None:
        pixel_index = torch.arange(intrinsics.width * intrinsics.height)
    u = (pixel_index % intrinsics.width).to(DTYPE) + 0.5
    v = torch.div(pixel_index, intrinsics.width, rounding_mode="floor").to(DTYPE) + 0.5

    cam = torch.stack([(u - intrinsics.cx) / intrinsics.fx,
                       (v - intrinsics.cy) / intrinsics.fy,
                       torch.ones_like(u)], dim=-1)
    cam = cam / torch.linalg.norm(cam, dim=-1, keepdim=True)
    directions = cam @ pose.rotation.T
    origins = pose.translation.expand(directions.shape)

    count = pixel_index.shape[0]
    return Ray(origins, directions,
               torch.full((count,), float(near), dtype=DTYPE),
               torch.full((count,), float(far), dtype=DTYPE))


def stratified_samples(ray: Ray, n_coarse: int, rng: Optional[RandomSource]) -> torch.Tensor:
    """
    One uniform draw per equal-width bin of [t_near, t_far]

    Args:
        ray: ray batch
        n_coarse: number of bins (>= 2)
        rng: generator; None places every sample at its bin midpoint

    Returns:
        [R, n_coarse] ascending t-values
    """
    if n_coarse < 2:
        raise ValueError(f"Need at least 2 coarse samples, got {n_coarse}")
    steps = torch.linspace(0.0, 1.0, n_coarse + 1, dtype=DTYPE)
    span = (ray.t_far - ray.t_near)[:, None]
    edges = ray.t_near[:, None] + span * steps
    lower, upper = edges[:, :-1], edges[:, 1:]
    draws = uniform((len(ray), n_coarse), rng)
    return (lower + (upper - lower) * draws).detach()


def sample_deltas(t_values: torch.Tensor, t_far: torch.Tensor) -> torch.Tensor:
    """Intervals to the next sample; the last runs to t_far"""
    tail = (t_far[:, None] - t_values[:, -1:]).clamp(min=0.0)
    return torch.cat([t_values[:, 1:] - t_values[:, :-1], tail], dim=-1)


def strictly_ascending(t_values: torch.Tensor, spacing: float = MIN_SPACING) -> torch.Tensor:
    """Push sorted rows apart so consecutive values differ by at least spacing"""
    offset = spacing * torch.arange(t_values.shape[-1], dtype=DTYPE)
    pushed = torch.cummax(t_values - offset, dim=-1).values + offset
    moved = pushed - t_values > 0.5 * spacing
    if moved.any():
        logger.debug(f"Separated {int(moved.sum())} coincident samples")
    return torch.where(moved, pushed, t_values)


def resample_fine(coarse: RaySampleSet, n_fine: int, rng: Optional[RandomSource]) -> torch.Tensor:
    """
    Inverse-transform sampling over the coarse weight PDF

    Bin i spans [t_i, t_i + delta_i]; its mass is the normalized coarse weight
    plus a uniform floor. Rays with all-zero weights fall back to a uniform PDF.

    Args:
        coarse: evaluated coarse samples
        n_fine: number of new samples (>= 1)
        rng: generator; None uses the deterministic quantiles (j + 0.5) / n_fine

    Returns:
        [R, N_c + n_fine] sorted t-values (coarse and fine merged), strictly ascending, detached
    """
    if n_fine < 1:
        raise ValueError(f"Need at least 1 fine sample, got {n_fine}")

    weights = coarse.weights.detach()
    t_values = coarse.t_values.detach()
    rays, bins = weights.shape

    total = weights.sum(dim=-1, keepdim=True)
    empty = total.squeeze(-1) <= 1e-12
    if empty.any():
        logger.warning(f"{int(empty.sum())} rays had all-zero coarse weights; using a uniform PDF")
    weights = torch.where(empty[:, None], torch.ones_like(weights), weights)
    total = weights.sum(dim=-1, keepdim=True)

    pdf = weights / total + PDF_FLOOR
    pdf = pdf / pdf.sum(dim=-1, keepdim=True)
    cdf = torch.cat([torch.zeros(rays, 1, dtype=DTYPE), torch.cumsum(pdf, dim=-1)], dim=-1)
    cdf[:, -1] = 1.0

    edges = torch.cat([t_values, coarse.t_far[:, None].detach()], dim=-1)

    if rng is None:
        u = ((torch.arange(n_fine, dtype=DTYPE) + 0.5) / n_fine).expand(rays, n_fine).contiguous()
    else:
        u = uniform((rays, n_fine), rng)

    index = torch.searchsorted(cdf, u, right=True)
    below = (index - 1).clamp(0, bins - 1)
    above = below + 1

    cdf_lo = torch.gather(cdf, 1, below)
    cdf_hi = torch.gather(cdf, 1, above)
    edge_lo = torch.gather(edges, 1, below)
    edge_hi = torch.gather(edges, 1, above)

    denom = cdf_hi - cdf_lo
    denom = torch.where(denom < 1e-12, torch.ones_like(denom), denom)
    frac = ((u - cdf_lo) / denom).clamp(0.0, 1.0)
    fine = edge_lo + frac * (edge_hi - edge_lo)

    merged, _ = torch.sort(torch.cat([t_values, fine], dim=-1), dim=-1)
    merged = strictly_ascending(merged)
    coarse.fallback = empty
    return merged.detach()


def select_scatter_origins(fine: RaySampleSet, k: int) -> torch.Tensor:
    """
    K consecutive sample indices centered on the max-weight sample

    Ties go to the smaller index; windows are clamped to stay in range.

    Returns:
        [R, K] long tensor
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"Scattering origin count K must be odd and positive, got {k}")
    count = fine.num_samples
    if count < k:
        raise TooFewSamples(f"{count} samples cannot host {k} scattering origins")

    peak = torch.argmax(fine.weights.detach(), dim=-1)
    start = (peak - k // 2).clamp(0, count - k)
    return start[:, None] + torch.arange(k)[None, :]
