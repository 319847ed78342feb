"""
In-scattering lightpath model for IsNeRF
S(x_t, d) -> (d_s, l): learned scattering direction and sampling interval,
plus the equidistant samples grown along each scattering path
"""

import logging
from dataclasses import dataclass, asdict
from typing import TYPE_CHECKING, Dict, Optional, Tuple

import torch
import torch.nn.functional as F

from src.errors import ShapeMismatch
from src.radiance_field import (
    Layout, check_unit, encoded_size, init_vector, layout_size, normalize_points,
    positional_encoding, read_params, unflatten, write_params,
)
from src.sampler import Ray, RaySampleSet, select_scatter_origins
from src.utils import DTYPE

if TYPE_CHECKING:
    from src.volume_renderer import RenderConfig

logger = logging.getLogger("IsNeRF.ISLM")

ADJACENT = "adjacent"
SINGLE_POINT = "single-point"
DEGENERATE_NORM = 1e-8


@dataclass
class IslmShape:
    """Layer-shape descriptor of the ISLM; one 4-wide head (direction + interval) per head"""
    depth: int = 3
    width: int = 64
    order_x: int = 6
    order_d: int = 4
    num_heads: int = 1
    l_min: float = 0.01
    l_max: float = 0.5
    bounds_min: Tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bounds_max: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if not 0.0 < self.l_min < self.l_max:
            raise ValueError(f"Need 0 < l_min < l_max, got [{self.l_min}, {self.l_max}]")

    @classmethod
    def from_config(cls, config: Dict) -> "IslmShape":
        heads = config.get("scatter_paths", 5) if config.get("islm_mode", ADJACENT) == SINGLE_POINT else 1
        return cls(
            depth=config.get("islm_depth", 3),
            width=config.get("islm_width", 64),
            order_x=config.get("encoding_order_x", 6),
            order_d=config.get("encoding_order_d", 4),
            num_heads=heads,
            l_min=config.get("l_min", 0.01),
            l_max=config.get("l_max", 0.5),
            bounds_min=tuple(config.get("scene_bounds_min", (-1.0, -1.0, -1.0))),
            bounds_max=tuple(config.get("scene_bounds_max", (1.0, 1.0, 1.0))),
        )

    @classmethod
    def from_dict(cls, data: Dict) -> "IslmShape":
        data = dict(data)
        data["bounds_min"] = tuple(data["bounds_min"])
        data["bounds_max"] = tuple(data["bounds_max"])
        return cls(**data)

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["bounds_min"] = list(self.bounds_min)
        data["bounds_max"] = list(self.bounds_max)
        return data

    def layout(self) -> Layout:
        layers: Layout = []
        in_dim = encoded_size(self.order_x) + encoded_size(self.order_d)
        for i in range(self.depth):
            layers.append((f"trunk{i}.weight", (self.width, in_dim)))
            layers.append((f"trunk{i}.bias", (self.width,)))
            in_dim = self.width
        for h in range(self.num_heads):
            layers.append((f"head{h}.weight", (4, in_dim)))
            layers.append((f"head{h}.bias", (4,)))
        return layers

    def param_count(self) -> int:
        return layout_size(self.layout())


@dataclass
class IslmParams:
    vector: torch.Tensor
    shape: IslmShape

    def __post_init__(self):
        expected = self.shape.param_count()
        if self.vector.dim() != 1 or self.vector.numel() != expected:
            raise ShapeMismatch(
                f"ISLM parameter vector has {self.vector.numel()} entries, descriptor implies {expected}"
            )

    @classmethod
    def initialize(cls, shape: IslmShape, generator: Optional[torch.Generator] = None) -> "IslmParams":
        return cls(init_vector(shape.layout(), generator), shape)

    @classmethod
    def zeros(cls, shape: IslmShape) -> "IslmParams":
        return cls(torch.zeros(shape.param_count(), dtype=DTYPE), shape)


@dataclass
class ScatterDecision:
    """Unit scattering direction d_s [..., 3] and interval l [...] in [l_min, l_max]"""
    d_s: torch.Tensor
    l: torch.Tensor
    degenerate: Optional[torch.Tensor] = None

    def __post_init__(self):
        norms = torch.linalg.norm(self.d_s.detach(), dim=-1)
        if norms.numel() and (norms - 1.0).abs().max().item() > 1e-6:
            raise ValueError("Scattering directions must be unit-norm")
        if self.l.numel() and (self.l.detach() <= 0).any():
            raise ValueError("Scattering intervals must be positive")


@dataclass
class ScatterPath:
    """Origins [..., 3], decision, and points [..., N_t, 3] = origin + j * l * d_s, j = 1..N_t"""
    origin: torch.Tensor
    decision: ScatterDecision
    points: torch.Tensor
    origin_index: Optional[torch.Tensor] = None

    @property
    def num_samples(self) -> int:
        return self.points.shape[-2]


def _head_outputs(params: IslmParams, x_t: torch.Tensor, d: torch.Tensor) -> torch.Tensor:
    """Raw [..., H, 4] outputs of every head"""
    shape = params.shape
    p = unflatten(params.vector, shape.layout())

    h = torch.cat([
        positional_encoding(normalize_points(x_t, shape.bounds_min, shape.bounds_max), shape.order_x),
        positional_encoding(d, shape.order_d),
    ], dim=-1)
    for i in range(shape.depth):
        h = F.relu(F.linear(h, p[f"trunk{i}.weight"], p[f"trunk{i}.bias"]))

    heads = [F.linear(h, p[f"head{k}.weight"], p[f"head{k}.bias"]) for k in range(shape.num_heads)]
    return torch.stack(heads, dim=-2)


def _decide(raw: torch.Tensor, d: torch.Tensor, shape: IslmShape) -> ScatterDecision:
    """Normalize raw directions (falling back to d) and squash raw intervals into [l_min, l_max]"""
    direction = raw[..., :3]
    norm_sq = (direction * direction).sum(-1)
    degenerate = norm_sq < DEGENERATE_NORM ** 2
    if degenerate.any():
        logger.warning(f"{int(degenerate.sum())} scattering directions degenerate; using the view direction")

    safe_norm = torch.sqrt(torch.where(degenerate, torch.ones_like(norm_sq), norm_sq))
    d_s = torch.where(degenerate[..., None], d.expand_as(direction), direction / safe_norm[..., None])
    interval = shape.l_min + (shape.l_max - shape.l_min) * torch.sigmoid(raw[..., 3])
    return ScatterDecision(d_s, interval, degenerate)


def eval_islm(params: IslmParams, x_t: torch.Tensor, d: torch.Tensor, head: int = 0) -> ScatterDecision:
    """
    Scattering decision for primary samples x_t seen along unit directions d

    Args:
        params: ISLM parameters
        x_t: [..., 3] primary sample positions
        d: [..., 3] unit primary-ray directions
        head: which output head to read (single-point mode has K)

    Returns:
        ScatterDecision with d_s [..., 3] and l [...]
    """
    expected = params.shape.param_count()
    if params.vector.numel() != expected:
        raise ShapeMismatch(f"ISLM parameter vector has {params.vector.numel()} entries, expected {expected}")
    if not 0 <= head < params.shape.num_heads:
        raise ValueError(f"Head {head} out of range for {params.shape.num_heads} heads")
    check_unit(d)
    raw = _head_outputs(params, x_t, d)[..., head, :]
    return _decide(raw, d, params.shape)


def scatter_points(origin: torch.Tensor, decision: ScatterDecision, n_t: int) -> ScatterPath:
    """
    Equidistant samples x_j = origin + j * l * d_s for j = 1..N_t

    The origin itself is not a scattering sample.
    """
    if n_t < 1:
        raise ValueError(f"Need at least one sample per scattering path, got {n_t}")
    steps = torch.arange(1, n_t + 1, dtype=DTYPE)
    offsets = (steps * decision.l[..., None])[..., None] * decision.d_s[..., None, :]
    return ScatterPath(origin, decision, origin[..., None, :] + offsets)


def grow_scatter_paths(params: IslmParams, fine: RaySampleSet, ray: Ray, cfg: "RenderConfig",
                       origin_index: Optional[torch.Tensor] = None) -> ScatterPath:
    """
    Grow K scattering paths per ray

    adjacent mode: one path from each of K consecutive samples around the
    max-weight sample. single-point mode: K heads at the max-weight sample.

    Args:
        params: ISLM parameters
        fine: evaluated fine samples of the primary rays
        ray: the primary rays
        cfg: render configuration (scatter_paths, scatter_samples, islm_mode)
        origin_index: frozen [R, K] sample indices (otherwise selected here)

    Returns:
        ScatterPath with origin [R, K, 3], d_s [R, K, 3], l [R, K], points [R, K, N_t, 3]
    """
    k = cfg.scatter_paths
    if origin_index is None:
        if cfg.islm_mode == SINGLE_POINT:
            origin_index = torch.argmax(fine.weights.detach(), dim=-1, keepdim=True).expand(-1, k)
        else:
            origin_index = select_scatter_origins(fine, k)

    t_origin = torch.gather(fine.t_values.detach(), 1, origin_index)
    origins = ray.origins[:, None, :] + t_origin[..., None] * ray.directions[:, None, :]
    view = ray.directions[:, None, :].expand(-1, k, -1)

    if cfg.islm_mode == SINGLE_POINT:
        if params.shape.num_heads != k:
            raise ShapeMismatch(f"single-point mode needs {k} ISLM heads, found {params.shape.num_heads}")
        raw = _head_outputs(params, origins[:, 0, :], ray.directions)
        decision = _decide(raw, view, params.shape)
    else:
        raw = _head_outputs(params, origins, view)[..., 0, :]
        decision = _decide(raw, view, params.shape)

    paths = scatter_points(origins, decision, cfg.scatter_samples)
    paths.origin_index = origin_index
    return paths


def save_islm(params: IslmParams, path: str):
    write_params(path, "islm", params.shape.to_dict(), params.vector)


def load_islm(path: str) -> IslmParams:
    kind, descriptor, vector = read_params(path)
    if kind != "islm":
        raise ShapeMismatch(f"{path} holds '{kind}' parameters, not an ISLM")
    return IslmParams(vector, IslmShape.from_dict(descriptor))
