"""
IsNeRF - Scattering-aware deblurring radiance fields
Desk-scale renderer, trainer and synthetic dataset forge
"""

__version__ = "0.4.0"
__author__ = "IsNeRF Team"
