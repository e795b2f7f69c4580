"""Report schemas emitted by runs and experiments."""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field


class StepRecord(BaseModel):
    """One accepted time level of a run."""

    t: float = Field(..., description="Time")
    step: int = Field(..., description="Step index")
    mass: float = Field(..., description="Mean m(u)")
    mass_drift: float = Field(..., description="|m(u) - m0|")
    v0_energy: float = Field(..., description="|v|^2 in V0")
    envelope: float = Field(..., description="Nodal integral of the (Moreau) primitive of beta at u")
    dissipation: float = Field(..., description="Accumulated sum dt (2 lam |v'|_H^2 + |v'|_V0*^2)")
    ledger_lhs: float = Field(..., description="eps |v|_V0^2 + 2 envelope + dissipation")
    ledger_rhs: float = Field(..., description="Initial value plus the forcing budget")
    free_energy: float = Field(..., description="eps/2 |v|_V0^2 + int W(u) - (f, u)_H")
    newton_iterations: int = Field(0, description="Newton iterations of the step")
    residual: float = Field(0.0, description="Final Newton residual")
    mushy_bulk: Optional[float] = Field(None, description="Bulk measure fraction of the mushy region")
    mushy_boundary: Optional[float] = Field(None, description="Boundary measure fraction of the mushy region")


class BoundLedger(BaseModel):
    """Discrete analogues of the uniform a priori bounds, for one run."""

    epsilon: float = Field(..., description="Interface parameter of the run")
    lam: float = Field(..., description="Yosida parameter of the run")
    sup_dual: float = Field(..., description="sup_t (lam |v|_H^2 + |v|_V0*^2)")
    envelope_integral: float = Field(..., description="(eps/2) int |v|_V0^2 + 2 int envelope")
    sup_energy: float = Field(..., description="sup_t (eps |v|_V0^2 + 2 envelope)")
    dissipation: float = Field(..., description="sum dt (2 lam |v'|_H^2 + |v'|_V0*^2)")
    projected_mu: float = Field(..., description="int |P mu|_V0^2")
    sup_u: float = Field(..., description="sup_t |u|_H^2")
    beta_l1: float = Field(..., description="int ||beta_lam(u)||_L1^2")
    mean_mu: float = Field(..., description="int |m(mu)|^2")
    mu_v: float = Field(..., description="int |mu|_V^2")
    xi_h: float = Field(..., description="int |xi|_H^2")
    ledger_violations: int = Field(0, description="Steps where the energy inequality failed")

    def entries(self) -> Dict[str, float]:
        return self.model_dump(exclude={"epsilon", "lam", "ledger_violations"})


class BoundsReport(BaseModel):
    ledgers: List[BoundLedger] = Field(default_factory=list)
    failures: Dict[str, str] = Field(default_factory=dict, description="epsilon -> error message")
    factor: float = Field(4.0, description="Uniformity envelope factor")
    worst_ratio: float = Field(0.0, description="Largest entry / reference ratio across the grid")
    passed: bool = False


class ConvergenceRow(BaseModel):
    parameter: float = Field(..., description="Sweep parameter (lambda or epsilon)")
    error: float = Field(..., description="Primary error metric")
    ratio: Optional[float] = Field(None, description="error / previous error")
    secondary: Optional[float] = Field(None, description="Secondary (reported) error metric")


class ConvergenceTable(BaseModel):
    """Errors against a reference along a decreasing parameter grid."""

    name: str
    metric: str
    secondary_metric: Optional[str] = None
    rows: List[ConvergenceRow] = Field(default_factory=list)
    slope: Optional[float] = Field(None, description="Least-squares slope of log error vs log parameter")
    monotone: bool = False
    passed: bool = False


class DependenceRow(BaseModel):
    amplitude: float
    t: float
    lhs: float
    rhs: float


class DependenceReport(BaseModel):
    """Stability inequality check for pairs of data with equal initial means."""

    constant: float = Field(..., description="C = e^T max(1, 1/c_p^2)")
    poincare_constant: float
    rows: List[DependenceRow] = Field(default_factory=list)
    max_ratio: Dict[str, float] = Field(default_factory=dict, description="amplitude -> max_t lhs/rhs")
    xi_lhs: Dict[str, float] = Field(default_factory=dict, description="amplitude -> int |xi1 - xi2|_H^2")
    xi_rhs: Dict[str, float] = Field(default_factory=dict)
    ratio_monotone: bool = Field(True, description="max_ratio non-increasing along decreasing amplitudes")
    note: str = ""
    passed: bool = False


class MushyReport(BaseModel):
    bulk_nodes: List[int] = Field(default_factory=list)
    boundary_nodes: List[int] = Field(default_factory=list)
    bulk_fraction: float
    boundary_fraction: float


class OrderReport(BaseModel):
    spatial: ConvergenceTable
    temporal: ConvergenceTable
    spatial_range: List[float] = Field(default_factory=lambda: [1.7, 2.3])
    temporal_range: List[float] = Field(default_factory=lambda: [0.8, 1.2])
    passed: bool = False


class ConservationReport(BaseModel):
    max_drift: Dict[str, float] = Field(default_factory=dict, description="problem -> max |m(u^n) - m0|")
    tolerance: float = 1e-10
    passed: bool = False


class RunReport(BaseModel):
    """Outcome of a single integration."""

    config: Dict[str, Any] = Field(default_factory=dict)
    operators: Dict[str, Any] = Field(default_factory=dict)
    records: List[StepRecord] = Field(default_factory=list)
    ledger: Optional[BoundLedger] = None
    max_mass_drift: float = 0.0
    rejected_steps: int = 0
    status: str = "ok"
