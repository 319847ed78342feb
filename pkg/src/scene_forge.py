"""
Scene Forge for IsNeRF
Analytic desk scenes with a one-bounce mirror, exact ground-truth tracing,
ring camera trajectories and synthetic blurred datasets on disk
"""

import json
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
import torch

from src.blur_synthesis import EXCLUSIVE, ExposureModel, synthesize_blur, virtual_poses
from src.radiance_field import AnalyticUnion, ConstantBox, EmissiveSphere, Primitive, primitive_from_dict
from src.sampler import Intrinsics, Ray, generate_rays
from src.se3_geometry import Pose, Twist, compose, look_at, se3_exp
from src.utils import DTYPE, as_tensor, derive_seed, save_png

logger = logging.getLogger("IsNeRF.SceneForge")

BOUNDS_TOL = 1e-9
PARALLEL_TOL = 1e-12


@dataclass
class Mirror:
    """Planar mirror through point with unit normal; clipped to the scene bounds"""
    point: Tuple[float, float, float]
    normal: Tuple[float, float, float]
    reflectance: float = 0.8

    def __post_init__(self):
        norm = math.sqrt(sum(c * c for c in self.normal))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"Mirror normal must be unit-length, got norm {norm}")
        if not 0.0 <= self.reflectance <= 1.0:
            raise ValueError(f"Mirror reflectance must lie in [0, 1], got {self.reflectance}")

    def to_dict(self) -> Dict:
        return {"point": list(self.point), "normal": list(self.normal), "reflectance": self.reflectance}

    @classmethod
    def from_dict(cls, data: Dict) -> "Mirror":
        return cls(tuple(data["point"]), tuple(data["normal"]), float(data["reflectance"]))


@dataclass
class SyntheticScene:
    primitives: List[Primitive]
    mirror: Optional[Mirror] = None
    bounds_min: Tuple[float, float, float] = (-1.0, -1.0, -1.0)
    bounds_max: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    background: Tuple[float, float, float] = (0.2, 0.2, 0.2)

    @property
    def field(self) -> AnalyticUnion:
        return AnalyticUnion(list(self.primitives))

    def primitive(self, name: str) -> Optional[Primitive]:
        for primitive in self.primitives:
            if primitive.name == name:
                return primitive
        return None

    def to_dict(self) -> Dict:
        return {
            "primitives": [p.to_dict() for p in self.primitives],
            "mirror": self.mirror.to_dict() if self.mirror else None,
            "bounds_min": list(self.bounds_min),
            "bounds_max": list(self.bounds_max),
            "background": list(self.background),
        }

    @classmethod
    def from_dict(cls, data: Dict) -> "SyntheticScene":
        mirror = data.get("mirror")
        return cls(
            primitives=[primitive_from_dict(p) for p in data.get("primitives", [])],
            mirror=Mirror.from_dict(mirror) if mirror else None,
            bounds_min=tuple(data.get("bounds_min", (-1.0, -1.0, -1.0))),
            bounds_max=tuple(data.get("bounds_max", (1.0, 1.0, 1.0))),
            background=tuple(data.get("background", (0.2, 0.2, 0.2))),
        )


def save_scene(scene: SyntheticScene, path: str):
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(scene.to_dict(), f, indent=2, sort_keys=True)


def load_scene(path: str) -> SyntheticScene:
    with open(path, 'r') as f:
        return SyntheticScene.from_dict(json.load(f))


def default_desk_scene() -> SyntheticScene:
    """Two emissive spheres, a thin rod standing on a mirror plane"""
    return SyntheticScene(
        primitives=[
            EmissiveSphere((-0.35, 0.0, 0.0), 0.3, 8.0, (0.9, 0.15, 0.1), name="sphere_red"),
            EmissiveSphere((0.35, 0.1, 0.2), 0.25, 8.0, (0.1, 0.3, 0.9), name="sphere_blue"),
            ConstantBox(20.0, (0.9, 0.8, 0.1), (0.57, -0.5, -0.33), (0.63, 0.5, -0.27), name="rod"),
        ],
        mirror=Mirror((0.0, -0.5, 0.0), (0.0, 1.0, 0.0), 0.8),
    )


# ---------------------------------------------------------------------------
# Exact tracing

def march_segments(scene: SyntheticScene, origins: torch.Tensor, directions: torch.Tensor,
                   t0: torch.Tensor, t1: torch.Tensor) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Integrate the piecewise-constant analytic field over [t0, t1] exactly

    Every primitive boundary crossing splits the ray; inside each piece the
    density and color are constant, so the piece contributes
    T * (1 - exp(-sigma * length)) * color.

    Returns:
        (radiance [R, 3], transmittance [R]) over the segment
    """
    breaks = [t0, t1]
    for primitive in scene.primitives:
        t_in, t_out = primitive.intersect(origins, directions)
        breaks.append(torch.minimum(torch.maximum(t_in, t0), t1))
        breaks.append(torch.minimum(torch.maximum(t_out, t0), t1))
    edges, _ = torch.sort(torch.stack(breaks, dim=-1), dim=-1)

    lengths = (edges[:, 1:] - edges[:, :-1]).clamp(min=0.0)
    middle = 0.5 * (edges[:, 1:] + edges[:, :-1])
    points = origins[:, None, :] + middle[..., None] * directions[:, None, :]
    out = scene.field.evaluate(points, directions[:, None, :].expand_as(points))

    optical = out.sigma * lengths
    before = torch.cat([torch.zeros_like(optical[:, :1]), torch.cumsum(optical, dim=-1)[:, :-1]], dim=-1)
    weights = torch.exp(-before) * (1.0 - torch.exp(-optical))
    radiance = (weights[..., None] * out.color).sum(dim=1)
    return radiance, torch.exp(-optical.sum(dim=-1))


def mirror_hits(scene: SyntheticScene, ray: Ray) -> Tuple[torch.Tensor, torch.Tensor]:
    """
    Where primary rays meet the mirror inside the scene bounds

    Returns:
        (hit mask [R], hit distance [R]; meaningless where the mask is False)
    """
    count = len(ray)
    if scene.mirror is None:
        return torch.zeros(count, dtype=torch.bool), torch.zeros(count, dtype=DTYPE)

    normal = as_tensor(scene.mirror.normal)
    denom = ray.directions @ normal
    facing = denom.abs() > PARALLEL_TOL
    safe = torch.where(facing, denom, torch.ones_like(denom))
    t_hit = ((as_tensor(scene.mirror.point) - ray.origins) @ normal) / safe

    point = ray.origins + t_hit[:, None] * ray.directions
    inside = ((point >= as_tensor(scene.bounds_min) - BOUNDS_TOL)
              & (point <= as_tensor(scene.bounds_max) + BOUNDS_TOL)).all(dim=-1)
    hit = facing & inside & (t_hit > ray.t_near) & (t_hit < ray.t_far)
    return hit, t_hit


def trace_ground_truth(scene: SyntheticScene, ray: Ray) -> torch.Tensor:
    """
    Exact color of primary rays through an analytic scene with one mirror bounce

    A ray reaching the mirror at distance t_m keeps (1 - reflectance) of its
    remaining throughput on the straight path and sends reflectance along the
    reflected direction, which is traced for the remaining length t_far - t_m.

    Args:
        scene: analytic scene
        ray: unit-direction primary rays

    Returns:
        [R, 3] linear RGB colors
    """
    background = as_tensor(scene.background)
    hit, t_hit = mirror_hits(scene, ray)
    if not hit.any():
        radiance, trans = march_segments(scene, ray.origins, ray.directions, ray.t_near, ray.t_far)
        return radiance + trans[:, None] * background

    t_split = torch.where(hit, t_hit, ray.t_far)
    direct, trans_hit = march_segments(scene, ray.origins, ray.directions, ray.t_near, t_split)
    straight, trans_straight = march_segments(scene, ray.origins, ray.directions, t_split, ray.t_far)
    straight = straight + trans_straight[:, None] * background

    normal = as_tensor(scene.mirror.normal)
    reflected_dir = ray.directions - 2.0 * (ray.directions @ normal)[:, None] * normal
    hit_point = ray.origins + t_split[:, None] * ray.directions
    zeros = torch.zeros_like(t_split)
    remaining = (ray.t_far - t_split).clamp(min=0.0)
    reflected, trans_reflected = march_segments(scene, hit_point, reflected_dir, zeros, remaining)
    reflected = reflected + trans_reflected[:, None] * background

    rho = scene.mirror.reflectance
    onward = torch.where(hit[:, None], rho * reflected + (1.0 - rho) * straight, straight)
    return direct + trans_hit[:, None] * onward


def render_ground_truth(scene: SyntheticScene, pose: Pose, intrinsics: Intrinsics,
                        near: float, far: float) -> torch.Tensor:
    """[H, W, 3] exact render of the scene from pose"""
    ray = generate_rays(pose, intrinsics, near, far)
    return trace_ground_truth(scene, ray).view(intrinsics.height, intrinsics.width, 3)


def blur_ground_truth(scene: SyntheticScene, em: ExposureModel, intrinsics: Intrinsics,
                      near: float, far: float, endpoint: str = EXCLUSIVE) -> torch.Tensor:
    """Mean of the exact renders at every virtual pose of the exposure"""
    images = [render_ground_truth(scene, pose, intrinsics, near, far) for pose in virtual_poses(em, endpoint)]
    return synthesize_blur(images)


def scene_masks(scene: SyntheticScene, pose: Pose, intrinsics: Intrinsics,
                near: float, far: float) -> Dict[str, torch.Tensor]:
    """Boolean [H, W] masks of pixels whose primary ray hits the mirror or the rod"""
    ray = generate_rays(pose, intrinsics, near, far)
    shape = (intrinsics.height, intrinsics.width)
    hit, _ = mirror_hits(scene, ray)
    masks = {"mirror": hit.view(shape)}

    rod = scene.primitive("rod")
    if rod is not None:
        t_in, t_out = rod.intersect(ray.origins, ray.directions)
        crossed = (t_in < t_out) & (t_out > ray.t_near) & (t_in < ray.t_far)
        masks["rod"] = crossed.view(shape)
    else:
        masks["rod"] = torch.zeros(shape, dtype=torch.bool)
    return masks


# ---------------------------------------------------------------------------
# Trajectories and datasets

@dataclass
class TrajectorySpec:
    """
    Ring of camera exposures around a target

    Each exposure sweeps blur_arc_deg along the ring plus a seeded shake of
    up to blur_shake scene units; blur_arc_deg=0 and blur_shake=0 is static.
    """
    views: int = 20
    radius: float = 2.5
    height: float = 0.8
    target: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    blur_arc_deg: float = 4.0
    blur_shake: float = 0.03
    n: int = 8

    @classmethod
    def from_config(cls, config: Dict) -> "TrajectorySpec":
        return cls(
            views=config.get("views", 20),
            radius=config.get("ring_radius", 2.5),
            height=config.get("ring_height", 0.8),
            target=tuple(config.get("ring_target", (0.0, 0.0, 0.0))),
            blur_arc_deg=config.get("blur_arc_deg", 4.0),
            blur_shake=config.get("blur_shake", 0.03),
            n=config.get("n_virtual", 8),
        )

    @property
    def static(self) -> bool:
        return self.blur_arc_deg == 0.0 and self.blur_shake == 0.0


def _ring_eye(spec: TrajectorySpec, angle: float) -> np.ndarray:
    return np.array([spec.radius * math.sin(angle), spec.height, -spec.radius * math.cos(angle)])


def ring_exposures(spec: TrajectorySpec, seed: int = 0) -> List[ExposureModel]:
    """Exposure models of every ring view, cameras above the desk looking at the target"""
    exposures = []
    half_arc = 0.5 * math.radians(spec.blur_arc_deg)
    for m in range(spec.views):
        angle = 2.0 * math.pi * m / spec.views
        start = look_at(_ring_eye(spec, angle - half_arc), spec.target)
        end = look_at(_ring_eye(spec, angle + half_arc), spec.target)
        if spec.blur_shake > 0.0:
            rng = np.random.default_rng(derive_seed(seed, m))
            shake = rng.uniform(-spec.blur_shake, spec.blur_shake, size=3)
            end = compose(se3_exp(Twist(torch.zeros(3, dtype=DTYPE), as_tensor(shake))), end)
        exposures.append(ExposureModel(start, start if spec.static else end, spec.n))
    return exposures


@dataclass
class ForgeSettings:
    width: int = 64
    height: int = 64
    fov_deg: float = 40.0
    near: float = 1.0
    far: float = 4.5
    seed: int = 0
    blur_endpoint: str = EXCLUSIVE

    @classmethod
    def from_config(cls, config: Dict) -> "ForgeSettings":
        return cls(
            width=config.get("image_width", 64),
            height=config.get("image_height", 64),
            fov_deg=config.get("fov_deg", 40.0),
            near=config.get("near", 1.0),
            far=config.get("far", 4.5),
            seed=config.get("seed", 0),
            blur_endpoint=config.get("blur_endpoint", EXCLUSIVE),
        )


def generate_dataset(scene: SyntheticScene, spec: TrajectorySpec, settings: ForgeSettings,
                     out_dir: str) -> Dict:
    """
    Write a synthetic blurred dataset

    Layout under out_dir: blurred/blur_XXX.png, sharp/sharp_XXX.png (exposure
    midpoints), masks/mirror_XXX.png, masks/rod_XXX.png, poses.json, scene.json.

    Args:
        scene: analytic scene
        spec: ring trajectory
        settings: image size, field of view, ray range and seed
        out_dir: output directory (created)

    Returns:
        The poses.json document
    """
    os.makedirs(out_dir, exist_ok=True)
    intrinsics = Intrinsics.from_fov(settings.width, settings.height, settings.fov_deg)
    exposures = ring_exposures(spec, settings.seed)

    entries = []
    for m, em in enumerate(exposures):
        blurred = blur_ground_truth(scene, em, intrinsics, settings.near, settings.far, settings.blur_endpoint)
        midpoint = em.midpoint()
        sharp = render_ground_truth(scene, midpoint, intrinsics, settings.near, settings.far)
        masks = scene_masks(scene, midpoint, intrinsics, settings.near, settings.far)

        entry = {
            "file": f"blurred/blur_{m:03d}.png",
            "sharp": f"sharp/sharp_{m:03d}.png",
            "mirror_mask": f"masks/mirror_{m:03d}.png",
            "rod_mask": f"masks/rod_{m:03d}.png",
            "T_start": em.t_start.to_list(),
            "T_end": em.t_end.to_list(),
            "intrinsics": intrinsics.to_dict(),
            "n": em.n,
        }
        save_png(blurred, os.path.join(out_dir, entry["file"]))
        save_png(sharp, os.path.join(out_dir, entry["sharp"]))
        save_png(masks["mirror"], os.path.join(out_dir, entry["mirror_mask"]))
        save_png(masks["rod"], os.path.join(out_dir, entry["rod_mask"]))
        entries.append(entry)
        logger.debug(f"View {m}: {int(masks['mirror'].sum())} mirror pixels, {int(masks['rod'].sum())} rod pixels")

    document = {
        "width": settings.width,
        "height": settings.height,
        "near": settings.near,
        "far": settings.far,
        "blur_endpoint": settings.blur_endpoint,
        "seed": settings.seed,
        "images": entries,
    }
    with open(os.path.join(out_dir, "poses.json"), 'w') as f:
        json.dump(document, f, indent=2, sort_keys=True)
    save_scene(scene, os.path.join(out_dir, "scene.json"))

    logger.info(f"Wrote {len(entries)} blurred views ({settings.width}x{settings.height}, n={spec.n}) to {out_dir}")
    return document
