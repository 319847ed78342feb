"""
Dataset access for IsNeRF
Loads blurred datasets written by the scene forge (with image caching)
and reads/writes trained checkpoint directories
"""

import json
import logging
import os
from dataclasses import dataclass
from typing import Any, Dict, List, Optional

import torch

from src.blur_synthesis import EXCLUSIVE, ExposureModel
from src.errors import DatasetError
from src.islm import IslmParams, load_islm, save_islm
from src.radiance_field import FieldParams, load_field, save_field
from src.sampler import Intrinsics
from src.se3_geometry import Pose
from src.utils import load_mask, load_png


@dataclass
class DatasetView:
    """One training view: blurred input, held-out sharp image and its exposure"""
    index: int
    blurred_file: str
    sharp_file: Optional[str]
    mirror_mask_file: Optional[str]
    rod_mask_file: Optional[str]
    exposure: ExposureModel
    intrinsics: Intrinsics


class BlurDataset:
    """Blurred multi-view dataset on disk (poses.json + PNG images)"""

    def __init__(self, root: str, cache: bool = True):
        """
        Load a dataset directory

        Args:
            root: Directory holding poses.json and the image folders
            cache: Keep decoded images in memory
        """
        self.root = root
        self.use_cache = cache
        self.logger = logging.getLogger("IsNeRF.Dataset")

        self.cache: Dict[str, Any] = {}

        poses_file = os.path.join(root, "poses.json")
        if not os.path.exists(poses_file):
            raise DatasetError(f"No poses.json in {root}")
        try:
            with open(poses_file, 'r') as f:
                self.document = json.load(f)
        except json.JSONDecodeError as e:
            raise DatasetError(f"Malformed poses.json in {root}: {e}")

        self.width = int(self.document["width"])
        self.height = int(self.document["height"])
        self.near = float(self.document.get("near", 1.0))
        self.far = float(self.document.get("far", 4.5))
        self.blur_endpoint = self.document.get("blur_endpoint", EXCLUSIVE)
        self.views = [self._parse_view(i, entry) for i, entry in enumerate(self.document.get("images", []))]

        self.logger.info(f"Loaded dataset {root}: {len(self.views)} views, {self.width}x{self.height}")

    def _parse_view(self, index: int, entry: Dict) -> DatasetView:
        try:
            exposure = ExposureModel(
                Pose.from_matrix(entry["T_start"]),
                Pose.from_matrix(entry["T_end"]),
                int(entry.get("n", 8)),
            )
            intrinsics = Intrinsics.from_dict(entry["intrinsics"], self.width, self.height)
        except (KeyError, ValueError) as e:
            raise DatasetError(f"Bad pose entry {index} in {self.root}: {e}")
        return DatasetView(index, entry["file"], entry.get("sharp"), entry.get("mirror_mask"),
                           entry.get("rod_mask"), exposure, intrinsics)

    def __len__(self) -> int:
        return len(self.views)

    def validate(self, min_views: int = 2):
        """Raise DatasetError unless every referenced image exists and there are enough views"""
        if len(self.views) < min_views:
            raise DatasetError(f"Dataset needs at least {min_views} blurred views, found {len(self.views)}")
        for view in self.views:
            path = os.path.join(self.root, view.blurred_file)
            if not os.path.exists(path):
                raise DatasetError(f"Missing blurred image {path}")
        first = self.blurred(0)
        if tuple(first.shape) != (self.height, self.width, 3):
            raise DatasetError(
                f"Image size {tuple(first.shape[:2])} disagrees with poses.json ({self.height}, {self.width})"
            )

    def _cached(self, key: str, loader):
        if self.use_cache and key in self.cache:
            return self.cache[key]
        value = loader()
        if self.use_cache:
            self.cache[key] = value
        return value

    def blurred(self, index: int) -> torch.Tensor:
        path = os.path.join(self.root, self.views[index].blurred_file)
        return self._cached(path, lambda: load_png(path))

    def sharp(self, index: int) -> Optional[torch.Tensor]:
        name = self.views[index].sharp_file
        if not name:
            return None
        path = os.path.join(self.root, name)
        if not os.path.exists(path):
            return None
        return self._cached(path, lambda: load_png(path))

    def mask(self, index: int, kind: str) -> Optional[torch.Tensor]:
        """Boolean [H, W] mirror or rod mask of a held-out view, if present"""
        view = self.views[index]
        name = view.mirror_mask_file if kind == "mirror" else view.rod_mask_file
        if not name:
            return None
        path = os.path.join(self.root, name)
        if not os.path.exists(path):
            return None
        return self._cached(path, lambda: load_mask(path))

    def blurred_stack(self) -> torch.Tensor:
        """[M, H*W, 3] flattened blurred images"""
        return torch.stack([self.blurred(i).reshape(-1, 3) for i in range(len(self.views))])

    def clear_cache(self):
        self.cache = {}
        self.logger.debug("Image cache cleared")


# ---------------------------------------------------------------------------
# Checkpoint directories

@dataclass
class Checkpoint:
    field_coarse: FieldParams
    field_fine: FieldParams
    islm: IslmParams
    exposures: List[ExposureModel]
    config: Dict
    camera: Dict

    def intrinsics(self) -> Intrinsics:
        return Intrinsics.from_dict(self.camera["intrinsics"], int(self.camera["width"]), int(self.camera["height"]))


def save_checkpoint(out_dir: str, field_coarse: FieldParams, field_fine: FieldParams, islm: IslmParams,
                    exposures: List[ExposureModel], config: Dict, camera: Dict, iteration: int = 0):
    """
    Write field_coarse.bin, field_fine.bin, islm.bin, poses.json and config.json

    camera holds width, height, near, far and the intrinsics dict; it is
    stored in poses.json next to the learned trajectories. Pose rotations
    are re-projected onto SO(3) on the way out.
    """
    os.makedirs(out_dir, exist_ok=True)
    save_field(field_coarse, os.path.join(out_dir, "field_coarse.bin"))
    save_field(field_fine, os.path.join(out_dir, "field_fine.bin"))
    save_islm(islm, os.path.join(out_dir, "islm.bin"))

    poses = {
        "iteration": iteration,
        "camera": camera,
        "images": [
            {"T_start": em.t_start.to_list(), "T_end": em.t_end.to_list(), "n": em.n}
            for em in exposures
        ],
    }
    with open(os.path.join(out_dir, "poses.json"), 'w') as f:
        json.dump(poses, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "config.json"), 'w') as f:
        json.dump(config, f, indent=2, sort_keys=True)

    logging.getLogger("IsNeRF.Dataset").info(f"Checkpoint saved to {out_dir} (iteration {iteration})")


def load_checkpoint(ckpt_dir: str) -> Checkpoint:
    """Read a checkpoint directory written by save_checkpoint"""
    required = ["field_coarse.bin", "field_fine.bin", "islm.bin", "poses.json", "config.json"]
    missing = [name for name in required if not os.path.exists(os.path.join(ckpt_dir, name))]
    if missing:
        raise DatasetError(f"Checkpoint {ckpt_dir} is missing {', '.join(missing)}")

    with open(os.path.join(ckpt_dir, "poses.json"), 'r') as f:
        poses = json.load(f)
    with open(os.path.join(ckpt_dir, "config.json"), 'r') as f:
        config = json.load(f)

    exposures = [
        ExposureModel(Pose.from_matrix(e["T_start"]), Pose.from_matrix(e["T_end"]), int(e["n"]))
        for e in poses["images"]
    ]
    return Checkpoint(
        load_field(os.path.join(ckpt_dir, "field_coarse.bin")),
        load_field(os.path.join(ckpt_dir, "field_fine.bin")),
        load_islm(os.path.join(ckpt_dir, "islm.bin")),
        exposures,
        config,
        poses["camera"],
    )
