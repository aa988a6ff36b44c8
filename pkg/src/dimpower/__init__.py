"""Asymptotic power of Wald tests for interaction under misspecified alternatives."""

from .models import Family, NullParams, DimParams, PimParams

__all__ = ["Family", "NullParams", "DimParams", "PimParams"]
__version__ = "0.1.0"
