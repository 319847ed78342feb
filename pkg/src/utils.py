"""
Utility functions for IsNeRF
Includes logging setup, seed derivation and image buffer helpers
"""

import os
import logging
from datetime import datetime
from typing import Optional, Sequence, Union

import numpy as np
import pytz
import torch
from PIL import Image

from src.errors import DimensionMismatch

DTYPE = torch.float64


class ZonedFormatter(logging.Formatter):
    """Formatter that stamps records in a configurable timezone"""

    def __init__(self, fmt: Optional[str] = None, datefmt: Optional[str] = None,
                 timezone: str = "UTC"):
        super().__init__(fmt, datefmt)
        self.zone = pytz.timezone(timezone)

    def formatTime(self, record, datefmt=None):
        """Override formatTime to use the configured timezone"""
        dt = datetime.fromtimestamp(record.created, self.zone)
        if datefmt:
            return dt.strftime(datefmt)
        return dt.strftime('%Y-%m-%d %H:%M:%S %Z')


def setup_logging(log_file: Optional[str] = None, level: str = "INFO",
                  timezone: str = "UTC") -> logging.Logger:
    """
    Set up the project logger

    Args:
        log_file: Optional path to a log file (directories are created)
        level: Logging level (DEBUG, INFO, WARNING, ERROR)
        timezone: pytz timezone name used for timestamps

    Returns:
        Configured "IsNeRF" logger
    """
    logger = logging.getLogger("IsNeRF")
    logger.setLevel(getattr(logging, level.upper()))

    # Re-running setup replaces handlers instead of stacking them
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    formatter = ZonedFormatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S %Z',
        timezone=timezone
    )

    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, level.upper()))
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_dir = os.path.dirname(log_file)
        if log_dir:
            os.makedirs(log_dir, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setLevel(getattr(logging, level.upper()))
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def derive_seed(seed: int, *indices: int) -> int:
    """
    Derive a child seed from a base seed and a path of indices

    The result depends only on the arguments, never on call order, so per-pixel,
    per-pose and per-iteration streams stay reproducible under any batching.
    """
    state = np.random.SeedSequence([int(seed), *[int(i) for i in indices]])
    return int(state.generate_state(1, dtype=np.uint32)[0])


def make_generator(seed: Optional[int], *indices: int) -> Optional[torch.Generator]:
    """Seeded CPU generator for (seed, *indices); None when seed is None"""
    if seed is None:
        return None
    generator = torch.Generator(device="cpu")
    generator.manual_seed(derive_seed(seed, *indices))
    return generator


class PixelDraws:
    """
    Uniform draws pre-generated per pixel, one row per ray

    Row r comes from its own generator derived from (seed, pixel r), and every
    request consumes the next columns of all rows. A pixel's jitter therefore
    depends only on the seed and its index, whichever chunk it lands in.
    """

    def __init__(self, table: torch.Tensor):
        self.table = table
        self.cursor = 0

    @classmethod
    def per_pixel(cls, seed: int, pixels: torch.Tensor, width: int) -> "PixelDraws":
        rows = [torch.rand(width, generator=make_generator(seed, int(p)), dtype=DTYPE) for p in pixels.tolist()]
        table = torch.stack(rows) if rows else torch.empty(0, width, dtype=DTYPE)
        return cls(table)

    def take(self, shape: Sequence[int]) -> torch.Tensor:
        rows, cols = tuple(shape)
        if rows != self.table.shape[0]:
            raise DimensionMismatch(f"Draw table has {self.table.shape[0]} rows, {rows} requested")
        if self.cursor + cols > self.table.shape[1]:
            raise ValueError(f"Draw table exhausted: {self.cursor} of {self.table.shape[1]} used, {cols} more requested")
        out = self.table[:, self.cursor:self.cursor + cols]
        self.cursor += cols
        return out


RandomSource = Union[torch.Generator, PixelDraws]


def uniform(shape: Sequence[int], rng: Optional[RandomSource]) -> torch.Tensor:
    """
    Uniform draws in [0, 1) from rng

    A None rng is the deterministic stream: every draw is 0.5.
    """
    if rng is None:
        return torch.full(tuple(shape), 0.5, dtype=DTYPE)
    if isinstance(rng, PixelDraws):
        return rng.take(shape)
    return torch.rand(tuple(shape), generator=rng, dtype=DTYPE)


def as_tensor(values) -> torch.Tensor:
    """float64 tensor view of array-like input"""
    return torch.as_tensor(values, dtype=DTYPE)


def check_same_dims(a: torch.Tensor, b: torch.Tensor):
    """Raise DimensionMismatch unless both image buffers have equal shape"""
    if tuple(a.shape) != tuple(b.shape):
        raise DimensionMismatch(f"Image shapes differ: {tuple(a.shape)} vs {tuple(b.shape)}")


def to_uint8(image: torch.Tensor) -> np.ndarray:
    """Encode a linear [H, W, 3] buffer as 8-bit: round(clamp(c, 0, 1) * 255)"""
    values = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_png(image: torch.Tensor, path: str):
    """
    Write an image buffer (or a [H, W] mask) as PNG

    Args:
        image: float buffer in linear RGB, or boolean mask
        path: Output file path (directories are created)
    """
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    if isinstance(image, torch.Tensor) and image.dtype == torch.bool:
        pixels = image.cpu().numpy().astype(np.uint8) * 255
        Image.fromarray(pixels, mode="L").save(path)
        return

    Image.fromarray(to_uint8(image), mode="RGB").save(path)


def load_png(path: str) -> torch.Tensor:
    """Read an 8-bit RGB PNG as a float64 [H, W, 3] buffer in [0, 1]"""
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0
    return as_tensor(pixels)


def load_mask(path: str) -> torch.Tensor:
    """Read a mask PNG written by save_png as a boolean [H, W] tensor"""
    with Image.open(path) as img:
        pixels = np.asarray(img.convert("L"))
    return torch.from_numpy(pixels > 127)
