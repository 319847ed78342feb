"""
Exception hierarchy for IsNeRF
Value-type errors also subclass ValueError so generic handlers keep working
"""


class IsNerfError(Exception):
    """Base class for every error raised by the package"""


class AngleAtBranchCut(IsNerfError, ValueError):
    """Rotation angle too close to pi for a unique SE(3) logarithm"""


class ShapeMismatch(IsNerfError, ValueError):
    """Parameter vector or batch shape disagrees with its descriptor"""


class LengthMismatch(IsNerfError, ValueError):
    """Paired vectors of unequal length"""


class DimensionMismatch(IsNerfError, ValueError):
    """Images of unequal dimensions"""


class TooFewSamples(IsNerfError, ValueError):
    """Not enough primary samples to select scattering origins"""


class NonFiniteGradient(IsNerfError, ArithmeticError):
    """NaN or Inf found in a gradient"""


class ConfigError(IsNerfError, ValueError):
    """Invalid or unknown configuration entries"""


class DatasetError(IsNerfError):
    """Dataset on disk is missing files or inconsistent"""
