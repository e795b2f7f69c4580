"""Service layer: time loop, bound ledger, data presets, experiments and reports."""

from app.services.harness import HarnessService
from app.services.ledger import LedgerTracker
from app.services.reporting import ReportWriter
from app.services.simulation import RunResult, SimulationService

__all__ = [
    "HarnessService",
    "LedgerTracker",
    "ReportWriter",
    "RunResult",
    "SimulationService",
]
