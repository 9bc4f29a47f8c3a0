from __future__ import annotations

import numpy as np
import pytest

from tools import catalog
from tools.cell_solver import (
    adjoint_pairing,
    assemble_operator,
    centering_residual,
    corrector_gradient_lp,
    effective_diffusion,
    effective_model,
    effective_nonlinearity,
    solve_cell_poisson,
    solve_correctors,
    solve_invariant_measure,
    voigt_reuss_bounds,
)
from tools.coefficients import PeriodicCoefficients
from tools.errors import CenteringError, PreconditionError
from tools.torus import grid_points


def _layered() -> PeriodicCoefficients:
    return catalog.coefficient_family("layered(0.5)")


def _drifted(b_value: tuple[float, float]) -> PeriodicCoefficients:
    def a(y):
        return np.broadcast_to(np.eye(2), (y.shape[0], 2, 2)).copy()

    def zeros(y):
        return np.zeros((y.shape[0], 2))

    def b(y):
        return np.broadcast_to(np.asarray(b_value, dtype=float), (y.shape[0], 2)).copy()

    def c(y):
        return -np.ones(y.shape[0])

    return PeriodicCoefficients(2, a, zeros, b, c, 1.0, 1.0, "drifted")


def _stretched(axis: int, amp: float = 0.5) -> PeriodicCoefficients:
    """A = I except a_axis,axis = 1 + amp sin 2 pi y_axis, b = 0."""
    def a(y):
        out = np.broadcast_to(np.eye(2), (y.shape[0], 2, 2)).copy()
        out[:, axis, axis] = 1.0 + amp * np.sin(2 * np.pi * y[:, axis])
        return out

    def div_a(y):
        out = np.zeros((y.shape[0], 2))
        out[:, axis] = amp * 2 * np.pi * np.cos(2 * np.pi * y[:, axis])
        return out

    def zeros(y):
        return np.zeros((y.shape[0], 2))

    def c(y):
        return -np.ones(y.shape[0])

    return PeriodicCoefficients(2, a, div_a, zeros, c, 1.0, 1.0 / (1.0 - amp), f"stretched-{axis}")


def _a_bar(coeffs: PeriodicCoefficients, n: int) -> np.ndarray:
    m = solve_invariant_measure(coeffs, n)
    return effective_diffusion(coeffs, solve_correctors(coeffs, m), m)


def test_grid_must_be_power_of_two() -> None:
    with pytest.raises(PreconditionError):
        assemble_operator(_layered(), 24)
    with pytest.raises(PreconditionError):
        assemble_operator(_layered(), 8)


def test_operator_transpose_is_discrete_adjoint() -> None:
    coeffs = catalog.coefficient_family("checkerboard-smooth(0.5)")
    rng = np.random.default_rng(3)
    u, v = rng.normal(size=(2, 32 * 32))

    lhs, rhs = adjoint_pairing(coeffs, 32, u, v)

    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-8)


def test_identity_cell_problem_is_trivial() -> None:
    coeffs = catalog.coefficient_family("identity")
    m = solve_invariant_measure(coeffs, 16)
    correctors = solve_correctors(coeffs, m)

    assert np.allclose(m.values, 1.0)
    for omega in correctors.omega:
        assert np.max(np.abs(omega.values)) < 1e-10
    assert np.allclose(effective_diffusion(coeffs, correctors, m), np.eye(2), atol=1e-10)


def test_layered_measure_is_uniform_and_drift_centered() -> None:
    coeffs = _layered()
    m = solve_invariant_measure(coeffs, 32)

    assert np.allclose(m.values, 1.0, atol=1e-8)
    assert np.max(np.abs(centering_residual(coeffs, m))) < 1e-10


def test_layered_effective_diffusion_is_harmonic_mean() -> None:
    coeffs = _layered()
    m = solve_invariant_measure(coeffs, 32)
    correctors = solve_correctors(coeffs, m)

    a_bar = effective_diffusion(coeffs, correctors, m)

    assert a_bar == pytest.approx(np.eye(2), abs=1e-8)


def test_layered_corrector_gradient_norms() -> None:
    coeffs = _layered()
    m = solve_invariant_measure(coeffs, 32)
    correctors = solve_correctors(coeffs, m)

    norms = corrector_gradient_lp(correctors, 2.0)

    assert norms[0] == pytest.approx(np.sqrt(1.125), rel=1e-8)
    assert norms[1] == pytest.approx(1.0, rel=1e-10)
    with pytest.raises(PreconditionError):
        corrector_gradient_lp(correctors, 20.0)


def test_layered_voigt_and_reuss_bracket_effective_diffusion() -> None:
    coeffs = _layered()
    m = solve_invariant_measure(coeffs, 32)

    reuss, voigt = voigt_reuss_bounds(coeffs, m)

    assert reuss[0, 0] == pytest.approx(1.0, rel=1e-8)
    assert voigt[0, 0] == pytest.approx(1.0 / np.sqrt(0.75), rel=1e-6)
    assert reuss[1, 1] == pytest.approx(1.0)


def test_admissible_family_recovers_target_measure() -> None:
    spec = "admissible(0.5)"
    coeffs = catalog.coefficient_family(spec)
    target = catalog.admissible_target(spec)

    errors = []
    for n in (32, 64):
        m = solve_invariant_measure(coeffs, n)
        errors.append(float(np.max(np.abs(m.values - target(grid_points(n, 2))))))

    assert errors[1] < 1e-2
    assert errors[1] < errors[0] / 2.0


def test_uncentered_drift_is_rejected() -> None:
    coeffs = _drifted((1.0, 0.0))
    m = solve_invariant_measure(coeffs, 16)

    assert np.allclose(m.values, 1.0, atol=1e-10)
    assert np.allclose(centering_residual(coeffs, m), [1.0, 0.0], atol=1e-10)
    with pytest.raises(CenteringError):
        solve_correctors(coeffs, m)


def test_poisson_solution_for_single_mode() -> None:
    coeffs = catalog.coefficient_family("identity")
    n = 32
    m = solve_invariant_measure(coeffs, n)
    psi = np.sin(2.0 * np.pi * grid_points(n, 2)[:, 0])

    phi = solve_cell_poisson(coeffs, m, psi)

    expected = psi / (2.0 * n ** 2 * np.sin(np.pi / n) ** 2)
    assert np.allclose(phi.values, expected, atol=1e-9)


def test_poisson_rejects_uncentered_source() -> None:
    coeffs = catalog.coefficient_family("identity")
    m = solve_invariant_measure(coeffs, 16)

    with pytest.raises(CenteringError):
        solve_cell_poisson(coeffs, m, np.ones(256))


def test_krylov_and_direct_solvers_agree() -> None:
    coeffs = catalog.coefficient_family("checkerboard-smooth(0.5)")
    m = solve_invariant_measure(coeffs, 32)

    direct = solve_correctors(coeffs, m, method="direct")
    krylov = solve_correctors(coeffs, m, method="krylov")

    for a, b in zip(direct.omega, krylov.omega):
        assert np.max(np.abs(a.values - b.values)) < 1e-6
    with pytest.raises(PreconditionError):
        solve_correctors(coeffs, m, method="jacobi")


def test_correctors_have_zero_weighted_mean() -> None:
    coeffs = catalog.coefficient_family("checkerboard-smooth(0.5)")
    m = solve_invariant_measure(coeffs, 32)
    correctors = solve_correctors(coeffs, m)

    for omega in correctors.omega:
        assert abs(float(omega.mean(m))) < 1e-10


def test_nonlinearity_is_unchanged_when_correctors_vanish() -> None:
    coeffs = catalog.coefficient_family("identity")
    drv = catalog.driver("quadratic-gradient", "one")
    m = solve_invariant_measure(coeffs, 16)
    correctors = solve_correctors(coeffs, m)
    f_bar = effective_nonlinearity(drv, correctors, m)

    x = np.zeros((3, 2))
    y = np.zeros(3)
    z = np.array([[0.1, 0.2], [0.5, 0.5], [2.0, 0.0]])

    assert np.allclose(f_bar(x, y, z), drv.f(x, y, z))


def test_effective_model_report() -> None:
    coeffs = _layered()
    model = effective_model(coeffs, catalog.driver("decay", "one"), 32)

    assert model.isotropic_sigma2 == pytest.approx(1.0, rel=1e-6)
    assert model.C_bar is None
    assert model.report["grid_n"] == 32
    assert model.report["lp_2"][0] == pytest.approx(np.sqrt(1.125), rel=1e-8)
    assert model.report["m_mean"] == pytest.approx(1.0)
    assert model.report["adjoint_residual"] < 1e-8
    assert model.with_robin(-1.0, 0.0).C_bar == -1.0


def test_swapping_axes_swaps_effective_diffusion() -> None:
    a_bar = _a_bar(_stretched(0), 32)
    swapped = _a_bar(_stretched(1), 32)

    assert a_bar[0, 0] == pytest.approx(np.sqrt(0.75), rel=1e-3)
    assert a_bar[1, 1] == pytest.approx(1.0, rel=1e-8)
    assert np.allclose(swapped, a_bar[::-1, ::-1], atol=1e-8)


def test_checkerboard_effective_diffusion_converges_at_second_order() -> None:
    coeffs = catalog.coefficient_family("checkerboard-smooth(0.5)")
    a16, a32, a64 = (_a_bar(coeffs, n) for n in (16, 32, 64))

    coarse = np.max(np.abs(a16 - a32))
    fine = np.max(np.abs(a32 - a64))

    assert fine < 1e-2
    assert coarse / fine > 2.5


def test_corrector_gradient_norms_are_stable_under_refinement() -> None:
    coeffs = catalog.coefficient_family("checkerboard-smooth(0.5)")
    norms = {}
    for n in (32, 64):
        m = solve_invariant_measure(coeffs, n)
        correctors = solve_correctors(coeffs, m)
        norms[n] = np.concatenate([corrector_gradient_lp(correctors, p) for p in (2.0, 4.0)])

    assert np.allclose(norms[64], norms[32], rtol=1e-2)


def test_layered_nonlinearity_scales_first_gradient_component() -> None:
    coeffs = _layered()
    drv = catalog.driver("quadratic-gradient", "one")
    m = solve_invariant_measure(coeffs, 64)
    f_bar = effective_nonlinearity(drv, solve_correctors(coeffs, m), m)

    z = np.array([[0.3, 0.2], [0.0, 0.5], [0.4, 0.0]])
    # I + grad omega = diag(1 + 0.5 sin 2 pi x1, 1), whose square has mean 1.125
    expected = 1.125 * z[:, 0] ** 2 + z[:, 1] ** 2

    assert np.allclose(f_bar(np.zeros((3, 2)), np.zeros(3), z), expected, rtol=5e-3)


def test_nonlinearity_sums_over_every_cell_node() -> None:
    coeffs = catalog.coefficient_family("checkerboard-smooth(0.9)")
    drv = catalog.driver("quadratic-gradient", "one")
    m = solve_invariant_measure(coeffs, 64)
    correctors = solve_correctors(coeffs, m)
    z = np.array([[0.6, 0.3], [-0.2, 0.7]])
    x = np.zeros((2, 2))
    y = np.zeros(2)

    g = correctors.grad_omega_tilde.values
    weights = m.values / m.values.sum()
    zz = np.einsum("nij,pj->npi", g, z)
    values = drv.f(np.zeros((zz.shape[0] * 2, 2)), np.zeros(zz.shape[0] * 2), zz.reshape(-1, 2)).reshape(-1, 2)
    full = weights @ values

    batched = effective_nonlinearity(drv, correctors, m, batch_size=1000)(x, y, z)
    single = effective_nonlinearity(drv, correctors, m)(x, y, z)

    assert np.allclose(batched, full, rtol=1e-12, atol=0.0)
    assert np.allclose(single, full, rtol=1e-12, atol=0.0)


def test_nonlinearity_rejects_empty_batches() -> None:
    coeffs = catalog.coefficient_family("identity")
    m = solve_invariant_measure(coeffs, 16)

    with pytest.raises(PreconditionError):
        effective_nonlinearity(catalog.driver("quadratic-gradient", "one"), solve_correctors(coeffs, m), m, batch_size=0)
