"""Configuration and report schemas."""

from app.schemas.config import (
    GraphConfig,
    InitialConfig,
    MeshConfig,
    OutputConfig,
    PerturbationConfig,
    Problem,
    RunConfig,
    SolveConfig,
    SourceConfig,
)
from app.schemas.report import (
    BoundLedger,
    BoundsReport,
    ConvergenceTable,
    DependenceReport,
    OrderReport,
    RunReport,
    StepRecord,
)

__all__ = [
    "GraphConfig",
    "PerturbationConfig",
    "SolveConfig",
    "MeshConfig",
    "SourceConfig",
    "InitialConfig",
    "OutputConfig",
    "RunConfig",
    "Problem",
    "StepRecord",
    "BoundLedger",
    "BoundsReport",
    "ConvergenceTable",
    "DependenceReport",
    "OrderReport",
    "RunReport",
]
