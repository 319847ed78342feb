"""
Image quality metrics for IsNeRF
PSNR (optionally restricted to a pixel mask) and grayscale SSIM
"""

import math
from typing import Optional

import numpy as np
import torch
from skimage.metrics import structural_similarity

from src.errors import DimensionMismatch
from src.utils import check_same_dims

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03
LUMA = (0.299, 0.587, 0.114)
LPIPS_NOT_AVAILABLE = "n/a"


def _as_numpy(image) -> np.ndarray:
    if isinstance(image, torch.Tensor):
        return image.detach().cpu().numpy().astype(np.float64)
    return np.asarray(image, dtype=np.float64)


def psnr(a: torch.Tensor, b: torch.Tensor, mask: Optional[torch.Tensor] = None) -> float:
    """
    Peak signal-to-noise ratio 10 * log10(1 / MSE) for images in [0, 1]

    Args:
        a, b: [H, W, 3] buffers of equal shape
        mask: optional boolean [H, W]; the MSE then covers the masked pixels only

    Returns:
        Decibels; float('inf') for identical images, nan for an empty mask
    """
    check_same_dims(a, b)
    diff = _as_numpy(a) - _as_numpy(b)
    if mask is not None:
        selected = _as_numpy(mask).astype(bool)
        if selected.shape != diff.shape[:2]:
            raise DimensionMismatch(f"Mask shape {selected.shape} does not match image {diff.shape[:2]}")
        if not selected.any():
            return float('nan')
        diff = diff[selected]

    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return float('inf')
    return 10.0 * math.log10(1.0 / mse)


def to_grayscale(image) -> np.ndarray:
    values = _as_numpy(image)
    return values[..., 0] * LUMA[0] + values[..., 1] * LUMA[1] + values[..., 2] * LUMA[2]


def ssim(a: torch.Tensor, b: torch.Tensor) -> float:
    """
    Mean structural similarity of the grayscale images

    7x7 uniform window, K1=0.01, K2=0.03, dynamic range 1.0, population
    statistics; the mean runs over windows fully inside the image.
    """
    check_same_dims(a, b)
    gray_a, gray_b = to_grayscale(a), to_grayscale(b)
    if min(gray_a.shape) < SSIM_WINDOW:
        raise DimensionMismatch(f"Images of size {gray_a.shape} are smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    return float(structural_similarity(
        gray_a, gray_b,
        win_size=SSIM_WINDOW,
        data_range=1.0,
        K1=SSIM_K1,
        K2=SSIM_K2,
        gaussian_weights=False,
        use_sample_covariance=False,
    ))
