from __future__ import annotations

import numpy as np
import pytest
from scipy.special import j0

from conftest import make_ensemble
from tools import catalog
from tools.boundary_measure import check_condition_n, effective_robin, flux_matrix_field, local_time_average
from tools.cell_solver import solve_correctors, solve_invariant_measure
from tools.domain import ConvexDomain
from tools.errors import NoBoundaryContactError, PreconditionError
from tools.reflected_sde import SimConfig, simulate_paths


def _two_path_ensemble(epsilon: float = 1.0):
    states = np.zeros((2, 3, 2))
    states[0, 1] = [1.0, 0.0]
    states[0, 2] = [0.0, 1.0]
    states[1, 2] = [-1.0, 0.0]
    d_k = np.array([[0.2, 0.1], [0.0, 0.3]])
    return make_ensemble(states, d_k, epsilon=epsilon)


def _first_coordinate(y: np.ndarray) -> np.ndarray:
    return y[:, 0]


def test_local_time_average_is_weighted_ratio() -> None:
    ens = _two_path_ensemble()

    avg = local_time_average(_first_coordinate, ens)

    expected = (0.2 * 1.0 + 0.1 * 0.0 + 0.3 * -1.0) / 0.6
    assert avg.value == pytest.approx(expected)
    assert avg.total_local_time == pytest.approx(0.6)
    assert avg.n_paths_used == 2
    assert np.isfinite(avg.std_error) and avg.std_error > 0.0


def test_average_uses_fast_variable() -> None:
    ens = _two_path_ensemble(epsilon=0.5)

    avg = local_time_average(_first_coordinate, ens)

    expected = (0.2 * 2.0 + 0.3 * -2.0) / 0.6
    assert avg.value == pytest.approx(expected)


def test_constant_robin_is_exact() -> None:
    ens = _two_path_ensemble()

    robin = effective_robin(catalog.robin_field("const(-0.7)"), ens, alpha=0.7)

    assert robin.value == pytest.approx(-0.7)
    assert robin.std_error == 0.0
    assert not robin.flagged


def test_robin_field_outside_range_is_rejected() -> None:
    ens = _two_path_ensemble()

    with pytest.raises(PreconditionError):
        effective_robin(catalog.robin_field("const(-2)"), ens, alpha=1.0)


def test_no_contact_raises() -> None:
    ens = make_ensemble(np.zeros((3, 4, 2)))

    with pytest.raises(NoBoundaryContactError):
        local_time_average(_first_coordinate, ens)


def test_condition_n_for_trivial_correctors() -> None:
    coeffs = catalog.coefficient_family("identity")
    m = solve_invariant_measure(coeffs, 16)
    correctors = solve_correctors(coeffs, m)
    disk = ConvexDomain.disk(1.0)

    field = flux_matrix_field(coeffs, correctors)
    report = check_condition_n(correctors, coeffs, _two_path_ensemble(), disk, samples=16)

    assert np.allclose(field.values, np.eye(2))
    assert np.allclose(report.matrix, np.eye(2))
    assert report.min_value == pytest.approx(4.0)
    assert report.satisfied
    assert report.to_dict()["satisfied"] is True


@pytest.mark.slow
def test_boundary_average_from_center_is_uniform_over_the_circle() -> None:
    ens = simulate_paths(
        catalog.coefficient_family("identity"),
        ConvexDomain.disk(1.0),
        SimConfig(epsilon=1.0, dt=0.005, horizon=1.0, n_paths=3000, x0=(0.0, 0.0), seed=13),
    )

    # contacts are rotation invariant in law, so h averages over theta on the unit circle
    cosine = local_time_average(catalog.torus_function("cos(1)"), ens)
    sine = local_time_average(catalog.torus_function("sin(1)"), ens)

    assert cosine.std_error > 0.0
    assert abs(cosine.value - j0(2 * np.pi)) <= 4.0 * cosine.std_error
    assert abs(sine.value) <= 4.0 * sine.std_error
