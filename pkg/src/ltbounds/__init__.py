"""Long-term treatment-effect estimation and partial identification from
combined experimental and observational samples.

Subpackages cover closed-form estimands and bounds, the general sharp
identified set via linear-fractional programming, many-moment inference,
cross-fitted orthogonal estimation, a simulation laboratory for the
selection-mechanism results, and an on-the-job-search model solver.
"""

__version__ = "0.1.0"

from .data import (
    CombinedDataset,
    CellTable,
    Observation,
    RestrictionSet,
    cond_mean,
    ingest,
    tabulate,
)

__all__ = [
    "CombinedDataset",
    "CellTable",
    "Observation",
    "RestrictionSet",
    "cond_mean",
    "ingest",
    "tabulate",
    "__version__",
]
