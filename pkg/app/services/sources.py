"""Initial data and source presets, including the manufactured Stefan solution."""

import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from app.core.exceptions import ConfigError
from app.core.geometry import MeshPair, PairedField, mean, project_zero_mean, trace_conform
from app.core.monotone import GraphKind, GraphSpec
from app.schemas.config import InitialPreset, Problem, RunConfig, SourcePreset

logger = logging.getLogger(__name__)

BUMP_WIDTH = 0.05
MMS_SHIFT = 2.0
MMS_AMPLITUDE = 0.5


def _cosine_mode(points: np.ndarray) -> np.ndarray:
    return np.cos(np.pi * points[:, 0]) * np.cos(np.pi * points[:, 1])


def _bump(points: np.ndarray, center) -> np.ndarray:
    d2 = ((points - np.asarray(center)) ** 2).sum(axis=1)
    return np.exp(-d2 / BUMP_WIDTH)


def constant_initial(mesh: MeshPair, m0: float) -> PairedField:
    return PairedField.constant(mesh, m0)


def cosine_initial(mesh: MeshPair, m0: float, amplitude: float) -> PairedField:
    """m0 + P(amplitude cos(pi x) cos(pi y)); the mean is exactly m0."""
    mode = project_zero_mean(mesh, trace_conform(mesh, amplitude * _cosine_mode(mesh.nodes)))
    return trace_conform(mesh, mode.bulk + m0)


def bump_initial(mesh: MeshPair, m0: float, amplitude: float, center=(0.7, 0.3)) -> PairedField:
    mode = project_zero_mean(mesh, trace_conform(mesh, amplitude * _bump(mesh.nodes, center)))
    return trace_conform(mesh, mode.bulk + m0)


class SourceField:
    """Time-dependent source g(t) projected onto zero mean at every slice."""

    def __init__(self, mesh: MeshPair, raw: Optional[Callable[[float], PairedField]] = None):
        self.mesh = mesh
        self._raw = raw

    @property
    def is_zero(self) -> bool:
        return self._raw is None

    def __call__(self, t: float) -> PairedField:
        if self._raw is None:
            return PairedField(np.zeros(self.mesh.n_bulk), np.zeros(self.mesh.n_boundary))
        return project_zero_mean(self.mesh, self._raw(t))

    def scaled(self, factor: float) -> "SourceField":
        if self._raw is None:
            return self
        raw = self._raw
        return SourceField(self.mesh, lambda t: raw(t) * factor)

    def __add__(self, other: "SourceField") -> "SourceField":
        if other.is_zero:
            return self
        if self.is_zero:
            return other
        a, b = self._raw, other._raw
        return SourceField(self.mesh, lambda t: a(t) + b(t))


def zero_source(mesh: MeshPair) -> SourceField:
    return SourceField(mesh)


def bump_source(mesh: MeshPair, amplitude: float = 1.0, bulk_center=(0.3, 0.3), boundary_center=(0.7, 1.0)) -> SourceField:
    """Bulk bump paired with an independent boundary bump, pulsing in time."""
    bulk_shape = _bump(mesh.nodes, bulk_center)
    boundary_shape = _bump(mesh.nodes[mesh.boundary_nodes], boundary_center)

    def raw(t: float) -> PairedField:
        pulse = amplitude * (1.0 + 0.5 * np.sin(2 * np.pi * t))
        return PairedField(pulse * bulk_shape, -pulse * boundary_shape)

    return SourceField(mesh, raw)


class ManufacturedStefan:
    """u*(x, y, t) = L + shift + a cos(pi x) cos(pi y) e^{-t} on the unit square.

    u* stays above L, so beta(u*) = k_l (u* - L); the mode has zero normal derivative
    on every side and is an eigenfunction of the arc-length Laplacian of the boundary
    loop (eigenvalue -pi^2), so the sources follow in closed form.
    """

    def __init__(self, graph: GraphSpec, shift: float = MMS_SHIFT, amplitude: float = MMS_AMPLITUDE):
        if graph.kind != GraphKind.STEFAN:
            raise ConfigError("manufactured solution needs the Stefan graph", key="kind")
        if shift <= abs(amplitude):
            raise ConfigError("manufactured solution must stay in the liquid phase", key="amplitude")
        self.graph = graph
        self.shift = shift
        self.amplitude = amplitude

    def exact(self, mesh: MeshPair, t: float) -> PairedField:
        values = self.graph.L + self.shift + self.amplitude * _cosine_mode(mesh.nodes) * np.exp(-t)
        return trace_conform(mesh, values)

    def source(self, mesh: MeshPair) -> SourceField:
        k = self.graph.k_l
        bulk_mode = _cosine_mode(mesh.nodes)
        boundary_mode = bulk_mode[mesh.boundary_nodes]

        def raw(t: float) -> PairedField:
            scale = self.amplitude * np.exp(-t)
            # u*_t - k Lap u* in the bulk, u*_t - k Lap_Gamma u* on the boundary
            return PairedField(
                scale * (2 * np.pi**2 * k - 1) * bulk_mode,
                scale * (np.pi**2 * k - 1) * boundary_mode,
            )

        return SourceField(mesh, raw)


def build_initial(mesh: MeshPair, config: RunConfig) -> PairedField:
    preset = config.initial.preset
    m0 = config.solve.m0
    if preset == InitialPreset.CONSTANT:
        return constant_initial(mesh, m0)
    if preset == InitialPreset.COSINE:
        return cosine_initial(mesh, m0, config.initial.amplitude)

    manufactured = ManufacturedStefan(config.solve.graph_spec)
    expected = config.solve.graph_spec.L + manufactured.shift
    if abs(m0 - expected) > 1e-12 * max(1.0, abs(expected)):
        raise ConfigError(
            f"the mms initial datum has mean L + {manufactured.shift:g} = {expected:g}, got {m0:g}",
            key="m0",
        )
    u0 = manufactured.exact(mesh, 0.0)
    # the cosine mode integrates to zero only up to quadrature; pin the discrete mean to m0
    return trace_conform(mesh, u0.bulk + (m0 - mean(mesh, u0)))


def build_source(mesh: MeshPair, config: RunConfig) -> SourceField:
    preset = config.source.preset
    if preset == SourcePreset.ZERO:
        return zero_source(mesh)
    if preset == SourcePreset.BUMP:
        return bump_source(mesh, config.source.amplitude)
    if config.solve.problem != Problem.STEFAN_LIMIT:
        raise ConfigError("the mms source is manufactured for StefanLimit runs", key="preset")
    return ManufacturedStefan(config.solve.graph_spec).source(mesh).scaled(config.source.amplitude)
