"""
Volume rendering for IsNeRF
Straight-line quadrature along primary rays plus the in-scattering term
accumulated along ISLM paths
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch

from src.errors import LengthMismatch
from src.islm import ADJACENT, SINGLE_POINT, IslmParams, ScatterPath, grow_scatter_paths
from src.radiance_field import RadianceField
from src.sampler import (
    Intrinsics, Ray, RaySampleSet, generate_rays, resample_fine, sample_deltas, stratified_samples,
)
from src.se3_geometry import Pose
from src.utils import DTYPE, PixelDraws, RandomSource, as_tensor

logger = logging.getLogger("IsNeRF.Renderer")

ImageBuffer = torch.Tensor


@dataclass
class RenderConfig:
    """Sample counts, scattering switches and background of one renderer"""
    n_coarse: int = 64
    n_fine: int = 64
    scatter_paths: int = 5
    scatter_samples: int = 8
    l_min: float = 0.01
    l_max: float = 0.5
    background: Tuple[float, float, float] = (0.2, 0.2, 0.2)
    scattering_enabled: bool = True
    islm_mode: str = ADJACENT
    weighted_scatter: bool = False
    near: float = 1.0
    far: float = 4.5
    chunk_size: int = 4096

    def __post_init__(self):
        if self.n_coarse < 2 or self.n_fine < 0 or self.scatter_samples < 1 or self.chunk_size < 1:
            raise ValueError(f"Invalid sample counts in {self}")
        if self.scatter_paths < 0:
            raise ValueError("scatter_paths must be >= 0")
        if self.scattering_enabled and self.scatter_paths > 0 and self.scatter_paths % 2 == 0:
            raise ValueError(f"scatter_paths must be odd when scattering is enabled, got {self.scatter_paths}")
        if self.islm_mode not in (ADJACENT, SINGLE_POINT):
            raise ValueError(f"Unknown ISLM mode: {self.islm_mode}")
        samples = self.n_coarse + self.n_fine
        if self.scattering_enabled and self.islm_mode == ADJACENT and samples < self.scatter_paths:
            raise ValueError(f"{samples} samples per ray cannot host {self.scatter_paths} scattering origins")
        if not 0.0 < self.l_min < self.l_max:
            raise ValueError("Need 0 < l_min < l_max")
        if not 0.0 <= self.near < self.far:
            raise ValueError("Need 0 <= near < far")

    @classmethod
    def from_config(cls, config: Dict) -> "RenderConfig":
        return cls(
            n_coarse=config.get("n_coarse", 64),
            n_fine=config.get("n_fine", 64),
            scatter_paths=config.get("scatter_paths", 5),
            scatter_samples=config.get("scatter_samples", 8),
            l_min=config.get("l_min", 0.01),
            l_max=config.get("l_max", 0.5),
            background=tuple(config.get("background", (0.2, 0.2, 0.2))),
            scattering_enabled=config.get("render_scattering", True),
            islm_mode=config.get("islm_mode", ADJACENT),
            weighted_scatter=config.get("weighted_scatter", False),
            near=config.get("near", 1.0),
            far=config.get("far", 4.5),
            chunk_size=config.get("chunk_size", 4096),
        )

    def with_scattering(self, enabled: bool) -> "RenderConfig":
        values = dict(self.__dict__)
        values["scattering_enabled"] = enabled
        return RenderConfig(**values)


@dataclass
class FieldPair:
    """Coarse and fine fields; analytic scenes use the same field twice"""
    coarse: RadianceField
    fine: RadianceField

    @classmethod
    def shared(cls, field: RadianceField) -> "FieldPair":
        return cls(field, field)


@dataclass
class SamplePlan:
    """
    Sample placement of one forward pass

    Placement is never differentiated; reusing a plan freezes it, which the
    finite-difference gradient check relies on.
    """
    coarse_t: torch.Tensor
    fine_t: torch.Tensor
    origin_index: Optional[torch.Tensor] = None


@dataclass
class RenderResult:
    color: torch.Tensor
    primary: torch.Tensor
    coarse: torch.Tensor
    plan: SamplePlan
    fine_samples: RaySampleSet
    paths: Optional[ScatterPath] = None


def transmittance_prefix(sigmas: torch.Tensor, deltas: torch.Tensor) -> torch.Tensor:
    """
    T_i = exp(-sum_{j<i} sigma_j delta_j) along the last axis

    T_1 = 1 and T is non-increasing; the exclusive running sum stays in log space.
    """
    if sigmas.shape != deltas.shape:
        raise LengthMismatch(f"sigmas {tuple(sigmas.shape)} and deltas {tuple(deltas.shape)} differ")
    optical = sigmas * deltas
    exclusive = torch.cat([torch.zeros_like(optical[..., :1]), torch.cumsum(optical, dim=-1)[..., :-1]], dim=-1)
    return torch.exp(-exclusive)


def evaluate_samples(ray: Ray, field: RadianceField, t_values: torch.Tensor) -> RaySampleSet:
    """Query the field at t_values along each ray and compute quadrature weights"""
    points = ray.points(t_values)
    view = ray.directions[:, None, :].expand_as(points)
    out = field.evaluate(points, view)
    deltas = sample_deltas(t_values, ray.t_far)
    transmittance = transmittance_prefix(out.sigma, deltas)
    weights = transmittance * (1.0 - torch.exp(-out.sigma * deltas))
    return RaySampleSet(t_values, deltas, out.sigma, out.color, weights, transmittance, ray.t_far)


def composite(samples: RaySampleSet, background) -> torch.Tensor:
    """sum_i w_i c_i plus the residual transmittance times the background"""
    color = (samples.weights[..., None] * samples.colors).sum(dim=-2)
    residual = torch.exp(-(samples.sigmas * samples.deltas).sum(dim=-1))
    return color + residual[..., None] * as_tensor(background)


def render_primary(ray: Ray, field: RadianceField, t_values: torch.Tensor,
                   cfg: RenderConfig) -> Tuple[torch.Tensor, RaySampleSet]:
    """
    Classic straight-line volume rendering

    Returns:
        (C_p [R, 3], evaluated samples carrying the weights)
    """
    samples = evaluate_samples(ray, field, t_values)
    return composite(samples, cfg.background), samples


def scatter_contribution(field: RadianceField, paths: ScatterPath,
                         origin_transmittance: Optional[torch.Tensor] = None) -> torch.Tensor:
    """
    sum_k sum_i T_ki (1 - exp(-sigma_ki l_k)) c_ki

    Scattering samples are queried with view direction d_s, and every interval
    on path k equals l_k, so T_k1 = 1 and T_ki uses the same l_k.
    """
    view = paths.decision.d_s[..., None, :].expand_as(paths.points)
    out = field.evaluate(paths.points, view)
    intervals = paths.decision.l[..., None].expand_as(out.sigma)
    transmittance = transmittance_prefix(out.sigma, intervals)
    terms = transmittance * (1.0 - torch.exp(-out.sigma * intervals))
    per_path = (terms[..., None] * out.color).sum(dim=-2)
    if origin_transmittance is not None:
        per_path = per_path * origin_transmittance[..., None]
    return per_path.sum(dim=-2)


def scattering_active(cfg: RenderConfig, islm: Optional[IslmParams]) -> bool:
    if not cfg.scattering_enabled or cfg.scatter_paths == 0:
        return False
    if islm is None:
        raise ValueError("Scattering is enabled but no ISLM parameters were given")
    return True


def render_rays(ray: Ray, fields: FieldPair, islm: Optional[IslmParams], cfg: RenderConfig,
                rng: Optional[RandomSource], plan: Optional[SamplePlan] = None) -> RenderResult:
    """
    Coarse pass, fine pass and (when enabled) the scattering term for a ray batch

    Args:
        ray: primary rays
        fields: coarse and fine fields
        islm: ISLM parameters (unused when scattering is off)
        cfg: render configuration
        rng: generator for stratified and fine draws; None is deterministic
        plan: frozen sample placement from an earlier pass

    Returns:
        RenderResult; color is the scattering-aware pixel color
    """
    coarse_t = plan.coarse_t if plan is not None else stratified_samples(ray, cfg.n_coarse, rng)
    coarse_color, coarse_set = render_primary(ray, fields.coarse, coarse_t, cfg)

    if plan is not None:
        fine_t = plan.fine_t
    elif cfg.n_fine > 0:
        fine_t = resample_fine(coarse_set, cfg.n_fine, rng)
    else:
        fine_t = coarse_t
    primary, fine_set = render_primary(ray, fields.fine, fine_t, cfg)

    new_plan = SamplePlan(coarse_t, fine_t)
    if not scattering_active(cfg, islm):
        return RenderResult(primary, primary, coarse_color, new_plan, fine_set)

    origin_index = plan.origin_index if plan is not None else None
    paths = grow_scatter_paths(islm, fine_set, ray, cfg, origin_index)
    origin_index = paths.origin_index
    new_plan.origin_index = origin_index

    origin_t = None
    if cfg.weighted_scatter:
        origin_t = torch.gather(fine_set.transmittance, 1, origin_index)
    color = primary + scatter_contribution(fields.fine, paths, origin_t)
    return RenderResult(color, primary, coarse_color, new_plan, fine_set, paths)


def render_scatter_aware(ray: Ray, fields: FieldPair, islm: Optional[IslmParams], cfg: RenderConfig,
                         rng: Optional[RandomSource]) -> torch.Tensor:
    """Scattering-aware pixel colors; identical to the primary render when scattering is off"""
    return render_rays(ray, fields, islm, cfg, rng).color


def render_image(pose: Pose, intrinsics: Intrinsics, fields: FieldPair, islm: Optional[IslmParams],
                 cfg: RenderConfig, seed: Optional[int] = None) -> ImageBuffer:
    """
    Render one image, a ray through every pixel center

    Pixels are rendered in chunks. Each pixel draws its jitter from a stream
    derived from (seed, pixel index), so the image is the same for any
    chunk_size. seed=None renders without jitter.

    Returns:
        [H, W, 3] linear RGB buffer (unclamped)
    """
    total = intrinsics.width * intrinsics.height
    colors = torch.empty(total, 3, dtype=DTYPE)
    with torch.no_grad():
        for start in range(0, total, cfg.chunk_size):
            index = torch.arange(start, min(start + cfg.chunk_size, total))
            ray = generate_rays(pose, intrinsics, cfg.near, cfg.far, index)
            rng = None if seed is None else PixelDraws.per_pixel(seed, index, cfg.n_coarse + cfg.n_fine)
            colors[index] = render_rays(ray, fields, islm, cfg, rng).color
    logger.debug(f"Rendered {intrinsics.width}x{intrinsics.height} image")
    return colors.view(intrinsics.height, intrinsics.width, 3)
