"""Cluster-wise linear regression: exact column generation and heuristics."""

from gclr.core import (ContractError, Dataset, DegeneracyError, Entity,
                       FitResult, GuardError, InfeasibilityError, ParseError,
                       Partition, cluster_cost, fit_ols, parse_dataset,
                       partition_sse, validate_partition)

__version__ = "0.1.0"

__all__ = [
    "ContractError", "Dataset", "DegeneracyError", "Entity", "FitResult",
    "GuardError", "InfeasibilityError", "ParseError", "Partition",
    "cluster_cost", "fit_ols", "parse_dataset", "partition_sse",
    "validate_partition", "__version__",
]
