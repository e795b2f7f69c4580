import numpy as np
import pytest
import scipy.linalg

from app.core import forms
from app.core.exceptions import IncompatibleRHS, NonConforming, NonZeroMean
from app.core.forms import (
    a_form,
    apply_F,
    apply_subdiff_phi,
    assemble_space,
    dual_norm,
    embed,
    h_inner,
    h_norm,
    invert_F,
    lift_source,
    operator_stats,
    phi,
    poincare_constant,
    v0_norm,
)
from app.core.geometry import PairedField, mean, project_zero_mean, trace_conform, unit_square

# two-triangle mesh, hand assembled
K_BULK = np.array(
    [
        [1.0, -0.5, 0.0, -0.5],
        [-0.5, 1.0, -0.5, 0.0],
        [0.0, -0.5, 1.0, -0.5],
        [-0.5, 0.0, -0.5, 1.0],
    ]
)
M_BULK = np.array(
    [
        [4.0, 1.0, 2.0, 1.0],
        [1.0, 2.0, 1.0, 0.0],
        [2.0, 1.0, 4.0, 1.0],
        [1.0, 0.0, 1.0, 2.0],
    ]
) / 24
K_GAMMA = np.array(
    [
        [2.0, -1.0, 0.0, -1.0],
        [-1.0, 2.0, -1.0, 0.0],
        [0.0, -1.0, 2.0, -1.0],
        [-1.0, 0.0, -1.0, 2.0],
    ]
)
M_GAMMA = np.array(
    [
        [4.0, 1.0, 0.0, 1.0],
        [1.0, 4.0, 1.0, 0.0],
        [0.0, 1.0, 4.0, 1.0],
        [1.0, 0.0, 1.0, 4.0],
    ]
) / 6


def zero_mean_conforming(space, rng):
    z = trace_conform(space.mesh, rng.normal(size=space.mesh.n_bulk))
    return project_zero_mean(space.mesh, z)


def test_two_triangle_matrices(tiny_space):
    assert np.allclose(tiny_space.stiffness_bulk.toarray(), K_BULK)
    assert np.allclose(tiny_space.mass_bulk.toarray(), M_BULK)
    assert np.allclose(tiny_space.stiffness_boundary.toarray(), K_GAMMA)
    assert np.allclose(tiny_space.mass_boundary.toarray(), M_GAMMA)
    assert np.allclose(tiny_space.stiffness.toarray(), K_BULK + K_GAMMA)
    assert np.allclose(tiny_space.mass.toarray(), M_BULK + M_GAMMA)
    assert np.allclose(tiny_space.weights, [4 / 3, 7 / 6, 4 / 3, 7 / 6])


def test_lumped_two_triangle(tiny_mesh):
    space = assemble_space(tiny_mesh, lumped=True)
    assert np.allclose(space.mass.toarray(), np.diag([4 / 3, 7 / 6, 4 / 3, 7 / 6]))
    assert np.allclose(space.weights, assemble_space(tiny_mesh).weights)


def test_stiffness_kills_constants(space9):
    assert np.allclose(space9.stiffness @ np.ones(space9.mesh.n_bulk), 0.0, atol=1e-12)
    assert abs(space9.stiffness - space9.stiffness.T).max() <= 1e-14


def test_weights_integrate_means(space9, rng):
    z = trace_conform(space9.mesh, rng.normal(size=space9.mesh.n_bulk))
    total = space9.mesh.area + space9.mesh.perimeter
    assert space9.weights @ z.bulk / total == pytest.approx(mean(space9.mesh, z), abs=1e-13)


def test_phi_is_half_the_form(space9, rng):
    z = zero_mean_conforming(space9, rng)
    assert 2 * phi(space9, z) == a_form(space9, z, z)
    assert v0_norm(space9, z) ** 2 == pytest.approx(a_form(space9, z, z), rel=1e-14)


def test_F_round_trip(space9, rng):
    z = zero_mean_conforming(space9, rng)
    back = invert_F(space9, apply_F(space9, z))
    assert np.abs(back.bulk - z.bulk).max() <= 1e-10 * np.abs(z.bulk).max()
    assert back.conforming


def test_F_round_trip_cg(square9, rng):
    space = assemble_space(square9, solver="cg")
    z = zero_mean_conforming(space, rng)
    back = invert_F(space, apply_F(space, z))
    assert np.abs(back.bulk - z.bulk).max() <= 1e-8 * np.abs(z.bulk).max()


def test_F_preconditions(space9, rng):
    z = zero_mean_conforming(space9, rng)
    with pytest.raises(NonZeroMean):
        apply_F(space9, z + PairedField.constant(space9.mesh, 1.0))
    with pytest.raises(NonConforming):
        apply_F(space9, PairedField(z.bulk, z.boundary + 0.1))
    with pytest.raises(IncompatibleRHS):
        invert_F(space9, np.ones(space9.mesh.n_bulk))
    with pytest.raises(IncompatibleRHS):
        invert_F(space9, np.zeros(3))


def test_dual_norm_matches_dense_formula(tiny_space, rng):
    g = project_zero_mean(tiny_space.mesh, PairedField(rng.normal(size=4), rng.normal(size=4)))
    b = embed(tiny_space, g)
    K = K_BULK + K_GAMMA
    # K x = b on the zero-mean subspace: the pseudo-inverse sees the constants as its null space
    x = np.linalg.pinv(K) @ b
    assert dual_norm(tiny_space, g) ** 2 == pytest.approx(b @ x, rel=1e-10)


def test_projection_idempotent(space9, rng):
    mesh = space9.mesh
    z = PairedField(rng.normal(size=mesh.n_bulk), rng.normal(size=mesh.n_boundary))
    p = project_zero_mean(mesh, z)
    assert abs(mean(mesh, p)) <= 1e-12
    assert np.abs(project_zero_mean(mesh, p).bulk - p.bulk).max() <= 1e-12


def test_poincare_constant_dense_reference(tiny_space):
    K = K_BULK + K_GAMMA
    V = K + M_BULK + M_GAMMA
    values = scipy.linalg.eigh(K, V, eigvals_only=True)
    assert poincare_constant(tiny_space) == pytest.approx(np.sort(values)[1], rel=1e-10)
    assert 0 < poincare_constant(tiny_space) < 1


def test_poincare_sparse_path_agrees(square9, monkeypatch):
    dense = assemble_space(square9).poincare
    monkeypatch.setattr(forms.settings, "dense_eigen_max_nodes", 10)
    sparse_value = assemble_space(square9).poincare
    assert sparse_value == pytest.approx(dense, rel=1e-8)


def test_poincare_constant_is_stable_under_refinement(space9):
    coarse = space9.poincare
    fine = assemble_space(unit_square(17)).poincare
    assert abs(coarse - fine) < 0.1 * coarse
    assert 0.7 < fine < 0.9


def test_lifting_estimate(space9, rng):
    c_p = poincare_constant(space9)
    mesh = space9.mesh
    for _ in range(100):
        g = project_zero_mean(mesh, PairedField(rng.normal(size=mesh.n_bulk), rng.normal(size=mesh.n_boundary)))
        f = lift_source(space9, g)
        assert v0_norm(space9, f) ** 2 <= h_norm(space9, g) ** 2 / c_p**2 * (1 + 1e-10)
        # a(f, z) = (g, z)_H for conforming z
        z = trace_conform(mesh, rng.normal(size=mesh.n_bulk))
        assert a_form(space9, f, z) == pytest.approx(h_inner(space9, g, z), rel=1e-9, abs=1e-11)


def test_lift_needs_zero_mean(space9):
    with pytest.raises(NonZeroMean):
        lift_source(space9, PairedField.constant(space9.mesh, 1.0))


def test_subdifferential_of_phi(lumped9, rng):
    z = zero_mean_conforming(lumped9, rng)
    w = trace_conform(lumped9.mesh, rng.normal(size=lumped9.mesh.n_bulk))
    y = apply_subdiff_phi(lumped9, z)
    lhs = y.bulk @ (lumped9.mass @ w.bulk)
    assert lhs == pytest.approx(a_form(lumped9, z, w), rel=1e-10, abs=1e-12)


def test_operator_stats(space9):
    stats = operator_stats(space9)
    assert stats["n_bulk"] == 81 and stats["n_boundary"] == 32
    assert stats["area"] == pytest.approx(1.0) and stats["perimeter"] == pytest.approx(4.0)
    assert stats["poincare_constant"] == space9.poincare


def test_flipped_boundary_sign_changes_the_operator(monkeypatch):
    mesh = unit_square(5)
    reference = assemble_space(mesh).stiffness.toarray()
    monkeypatch.setattr(forms, "BOUNDARY_STIFFNESS_SIGN", -1.0)
    mutated = assemble_space(mesh).stiffness.toarray()
    assert not np.allclose(reference, mutated)
    # the mutated operator is no longer positive semidefinite
    assert np.linalg.eigvalsh(mutated).min() < -1e-8
