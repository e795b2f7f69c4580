"""Application configuration using Pydantic Settings."""

from functools import lru_cache
from typing import List

from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Process-wide defaults loaded from environment variables (prefix STEFAN_)."""

    model_config = SettingsConfigDict(
        env_file=".env",
        env_file_encoding="utf-8",
        env_prefix="STEFAN_",
        case_sensitive=False,
    )

    # Output
    output_dir: str = "results"
    csv_precision: int = 17

    # Mesh
    mesh_size: int = 33  # nodes per side of the unit square

    # Nonlinear solver
    newton_tol: float = 1e-11
    newton_max_iter: int = 40
    max_halvings: int = 4

    # Linear solvers
    linear_solver: str = "direct"  # or "cg"
    iterative_rtol: float = 1e-11
    dense_eigen_max_nodes: int = 400

    # Tolerances on the zero-mean constraint and rhs compatibility
    mean_tol: float = 1e-10
    compatibility_tol: float = 1e-8

    # Grid-validation window for the growth, Lipschitz and GMS certificates
    certificate_radius: float = 10.0
    certificate_step: float = 1e-3
    certificate_lambdas: List[float] = [1.0, 0.1, 0.01]

    # Harness
    uniformity_factor: float = 4.0
    epsilon_grid: List[float] = [1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64]
    lambda_grid: List[float] = [1e-1, 1e-2, 1e-3, 1e-4]
    threads: int = 1

    log_level: str = "INFO"


@lru_cache
def get_settings() -> Settings:
    """Get cached settings instance."""
    return Settings()
