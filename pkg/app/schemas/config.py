"""Run configuration schemas.

Validator messages start with the offending key ("epsilon: ...") so the config
file parser can point at the right line.
"""

from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.config import get_settings
from app.core.monotone import GraphKind, GraphSpec, PerturbationKind, PerturbationSpec

settings = get_settings()


class Problem(str, Enum):
    REGULARIZED_CH = "RegularizedCH"
    CH = "CH"
    STEFAN_LIMIT = "StefanLimit"


class SourcePreset(str, Enum):
    ZERO = "zero"
    BUMP = "bump"
    MMS = "mms"


class InitialPreset(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"
    MMS = "mms"


class GraphConfig(BaseModel):
    """Monotone graph selection."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: GraphKind = Field(GraphKind.STEFAN, description="Graph family")
    k_s: float = Field(1.0, gt=0, description="Solid conductivity")
    k_l: float = Field(1.0, gt=0, description="Liquid conductivity")
    L: float = Field(1.0, gt=0, description="Latent heat (plateau length)")

    def to_spec(self) -> GraphSpec:
        return GraphSpec(kind=self.kind, k_s=self.k_s, k_l=self.k_l, L=self.L)


class PerturbationConfig(BaseModel):
    """Lipschitz perturbation pi."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: PerturbationKind = Field(PerturbationKind.STEFAN_PLATEAU, description="Perturbation family")
    L: Optional[float] = Field(None, gt=0, description="Plateau length; defaults to the graph L")


class SolveConfig(BaseModel):
    """Parameters of one time integration."""

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)

    problem: Problem = Field(Problem.CH, description="Which problem to integrate")
    epsilon: float = Field(0.0625, ge=0, description="Interface parameter, (0, 1/4] for CH runs")
    lam: float = Field(0.0, ge=0, le=1, alias="lambda", description="Yosida parameter")
    dt: float = Field(0.005, gt=0, description="Time step")
    T: float = Field(1.0, gt=0, description="Final time")
    m0: float = Field(0.5, description="Initial mean")
    graph: GraphConfig = Field(default_factory=GraphConfig)
    perturbation: PerturbationConfig = Field(default_factory=PerturbationConfig)
    newton_tol: float = Field(default_factory=lambda: settings.newton_tol, gt=0)
    newton_max_iter: int = Field(default_factory=lambda: settings.newton_max_iter, ge=1)

    @model_validator(mode="after")
    def check_problem(self) -> "SolveConfig":
        if self.problem in (Problem.REGULARIZED_CH, Problem.CH):
            if not 0 < self.epsilon <= 0.25:
                raise ValueError(f"epsilon: must lie in (0, 1/4], got {self.epsilon}")
        if self.problem == Problem.REGULARIZED_CH and self.lam == 0:
            raise ValueError("lambda: RegularizedCH needs lambda > 0")
        if self.problem == Problem.CH:
            if self.lam != 0:
                raise ValueError("lambda: CH integrates the exact graph, set lambda = 0")
            if not self.graph_spec.is_lipschitz:
                raise ValueError(f"kind: CH needs a Lipschitz graph, got {self.graph.kind.value}")
        if self.problem == Problem.STEFAN_LIMIT:
            if self.lam != 0:
                raise ValueError("lambda: StefanLimit is solved with lambda = 0")
            if not self.graph_spec.is_single_valued:
                raise ValueError(f"kind: StefanLimit needs a single-valued graph, got {self.graph.kind.value}")
        if self.T < self.dt:
            raise ValueError(f"T: horizon {self.T} is shorter than dt {self.dt}")
        return self

    @property
    def graph_spec(self) -> GraphSpec:
        return self.graph.to_spec()

    @property
    def perturbation_spec(self) -> PerturbationSpec:
        return PerturbationSpec(kind=self.perturbation.kind, L=self.perturbation.L or self.graph.L)

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))


class MeshConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    size: int = Field(default_factory=lambda: settings.mesh_size, ge=2, description="Nodes per side")
    lumped: bool = Field(False, description="Assemble lumped mass matrices")


class SourceConfig(BaseModel):
    """Source preset; every preset is projected onto zero mean before use."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: SourcePreset = Field(SourcePreset.ZERO, description="Named source preset")
    amplitude: float = Field(1.0, description="Source amplitude")


class InitialConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    preset: InitialPreset = Field(InitialPreset.COSINE, description="Named initial-data preset")
    amplitude: float = Field(0.75, description="Amplitude of the zero-mean part")


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    dir: str = Field(default_factory=lambda: settings.output_dir, description="Output directory")
    field_stride: int = Field(0, ge=0, description="Dump fields every n steps (0 = never)")


class RunConfig(BaseModel):
    """Everything a `run` needs, one section per config-file block."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    mesh: MeshConfig = Field(default_factory=MeshConfig)
    solve: SolveConfig = Field(default_factory=SolveConfig)
    source: SourceConfig = Field(default_factory=SourceConfig)
    initial: InitialConfig = Field(default_factory=InitialConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    experiment: str = Field("run", description="Experiment selector")
