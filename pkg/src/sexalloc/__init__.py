"""Bayesian and classical analysis of clutch sex ratios under developmental mortality."""

from .data import PRIMARY, SECONDARY, Dataset, DatasetError
from .distributions import AllocationModel, DispersionParams
from .likelihood import ModelParams, PriorConfig

__version__ = "0.1.0"

__all__ = [
    "AllocationModel",
    "Dataset",
    "DatasetError",
    "DispersionParams",
    "ModelParams",
    "PRIMARY",
    "PriorConfig",
    "SECONDARY",
    "__version__",
]
