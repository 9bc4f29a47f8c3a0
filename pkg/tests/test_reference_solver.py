from __future__ import annotations

import numpy as np
import pytest

from tools.errors import OracleInapplicableError, PreconditionError
from tools.reference_solver import RadialProblem, isotropic_scalar, solve_radial


def _ones(r: np.ndarray) -> np.ndarray:
    return np.ones_like(r)


def _decay(r, y, z):
    return -np.asarray(y)


def test_neumann_problem_keeps_constants() -> None:
    sol = solve_radial(RadialProblem(1.0, 0.0, 1.0, 1.0, _ones, nr=50, nt=50))

    assert np.allclose(sol.u0, 1.0, atol=1e-12)
    assert sol.dt_halvings == 0


def test_linear_decay_matches_exponential() -> None:
    sol = solve_radial(RadialProblem(1.0, 0.0, 1.0, 1.0, _ones, _decay, nr=40, nt=400))

    assert sol.u_center == pytest.approx(np.exp(-1.0), rel=1e-4)
    assert sol.at(0.5) == pytest.approx(np.exp(-1.0), rel=1e-4)


def test_robin_boundary_lowers_the_solution_near_the_wall() -> None:
    sol = solve_radial(RadialProblem(1.0, -1.0, 1.0, 0.5, _ones, nr=200, nt=200))

    assert 0.0 < sol.at(1.0) < sol.at(0.5) < sol.u_center < 1.0


def test_radial_solution_converges_under_refinement() -> None:
    centers = [
        solve_radial(RadialProblem(2.0, -0.5, 1.0, 0.5, _ones, nr=nr, nt=nr)).u_center
        for nr in (50, 100, 200)
    ]

    assert abs(centers[2] - centers[1]) < abs(centers[1] - centers[0])
    assert abs(centers[2] - centers[1]) < 1e-3


def test_problem_validation() -> None:
    with pytest.raises(PreconditionError):
        RadialProblem(0.0, -1.0, 1.0, 1.0, _ones)
    with pytest.raises(PreconditionError):
        RadialProblem(1.0, 0.5, 1.0, 1.0, _ones)


def test_isotropic_scalar() -> None:
    assert isotropic_scalar(np.diag([2.0, 2.01])) == pytest.approx(2.005)
    with pytest.raises(OracleInapplicableError):
        isotropic_scalar(np.diag([1.0, 2.0]))
