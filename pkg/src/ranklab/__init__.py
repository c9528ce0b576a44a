"""Heterogeneous-rank federated LoRA aggregation and rank-collapse lab."""

__version__ = "0.1.0"

from ranklab.errors import LabError

__all__ = ["LabError", "__version__"]
