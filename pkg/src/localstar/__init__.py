"""Locally noncommutative products from compactly supported R^d-actions."""

__version__ = "0.1.0"

from .geometry import CutoffProfile, RadialDiffeo, RadialProfile

__all__ = [
    "CutoffProfile",
    "RadialProfile",
    "RadialDiffeo",
    "__version__",
]
