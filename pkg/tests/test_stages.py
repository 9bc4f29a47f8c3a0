from __future__ import annotations

import json
import math

import numpy as np
import pytest

from conftest import make_ensemble
from stages import BoundaryStage, BsdeStage, CellStage, ReferenceStage, SimulationStage
from tools import catalog
from tools.coefficients import PeriodicCoefficients
from tools.domain import ConvexDomain
from tools.errors import NoBoundaryContactError, PreconditionError
from tools.reference_solver import RadialProblem
from tools.reflected_sde import SimConfig
from tools.regression import RegressionBasis


def _events(storage) -> list[dict]:
    return [json.loads(line) for line in storage.trace_file.read_text().splitlines()]


def _contact_ensemble():
    states = np.zeros((2, 3, 2))
    states[0, 1] = [1.0, 0.0]
    states[1, 2] = [0.0, -1.0]
    return make_ensemble(states, np.array([[0.2, 0.0], [0.0, 0.1]]))


def test_cell_stage_traces_call_and_result(storage) -> None:
    stage = CellStage(storage)

    model = stage.run(catalog.coefficient_family("layered(0.5)"), catalog.driver("decay", "one"), 16)

    kinds = [e["event_type"] for e in _events(storage)]
    assert kinds == ["stage_call", "stage_result"]
    assert _events(storage)[1]["data"]["validation"]["passed"] is True
    assert model.a_bar == pytest.approx(np.eye(2), abs=1e-8)


def test_cell_stage_report_rows(storage) -> None:
    stage = CellStage(storage)
    model = stage.run(catalog.coefficient_family("identity"), catalog.driver("zero", "one"), 16, p_list=(2.0,))

    rows = stage.report_rows(model, (2.0,))

    quantities = {r["quantity"] for r in rows}
    assert {"a_bar", "reuss", "voigt", "lp_2", "centering_residual", "m_min", "C_bar"} <= quantities
    assert math.isnan(rows[-1]["value"])
    assert len([r for r in rows if r["quantity"] == "a_bar"]) == 4


def test_cell_stage_rejects_invalid_family(storage) -> None:
    def a(y):
        out = np.broadcast_to(np.eye(2), (y.shape[0], 2, 2)).copy()
        out[:, 0, 1] = 0.2
        return out

    def zeros(y):
        return np.zeros((y.shape[0], 2))

    coeffs = PeriodicCoefficients(2, a, zeros, zeros, lambda y: -np.ones(y.shape[0]), 1.0, 2.0, "skewed")

    with pytest.raises(PreconditionError):
        CellStage(storage).run(coeffs, catalog.driver("zero", "one"), 16)
    error = _events(storage)[-1]
    assert error["event_type"] == "stage_error"
    assert error["data"]["error"] == "PreconditionError"


def test_simulation_stage_summary(storage) -> None:
    stage = SimulationStage(storage)
    cfg = SimConfig(epsilon=1.0, dt=0.01, horizon=0.05, n_paths=200, x0=(0.9, 0.0))

    ens = stage.run(catalog.coefficient_family("identity"), ConvexDomain.disk(1.0), cfg)
    summary = stage.summary(ens)

    assert summary["steps"] == 5
    assert summary["n_paths"] == 200
    assert summary["aborted"] == 0
    assert _events(storage)[-1]["data"]["k_mean"] == pytest.approx(summary["k_mean"])


def test_simulation_stage_traces_precondition_failure(storage) -> None:
    cfg = SimConfig(epsilon=1.0, dt=0.01, horizon=0.05, n_paths=10, x0=(3.0, 0.0))

    with pytest.raises(PreconditionError):
        SimulationStage(storage).run(catalog.coefficient_family("identity"), ConvexDomain.disk(1.0), cfg)
    assert _events(storage)[-1]["event_type"] == "stage_error"


def test_boundary_stage(storage) -> None:
    coeffs = catalog.coefficient_family("identity", robin="const(-0.5)")

    c_bar, cond = BoundaryStage(storage).run(coeffs, _contact_ensemble(), ConvexDomain.disk(1.0))

    assert c_bar.value == pytest.approx(-0.5)
    assert cond is None
    assert _events(storage)[-1]["data"]["C_bar"]["value"] == pytest.approx(-0.5)


def test_boundary_stage_without_contact(storage) -> None:
    coeffs = catalog.coefficient_family("identity")

    with pytest.raises(NoBoundaryContactError):
        BoundaryStage(storage).run(coeffs, make_ensemble(np.zeros((2, 3, 2))), ConvexDomain.disk(1.0))


def test_bsde_stage(storage) -> None:
    ens = make_ensemble(np.zeros((50, 3, 2)), dt=0.1)

    sol = BsdeStage(storage).run(
        ens, catalog.driver("decay", "one"), -1.0, RegressionBasis(degree=0), catalog.coefficient_family("identity")
    )

    assert sol.y0 == pytest.approx(0.81)
    result = _events(storage)[-1]["data"]
    assert result["y0"] == pytest.approx(0.81)
    assert result["basis"] == "polynomial(deg=0)"


def test_reference_stage_profile(storage) -> None:
    stage = ReferenceStage(storage)

    sol = stage.run(RadialProblem(1.0, 0.0, 1.0, 0.5, catalog.driver("zero", "one").g_radial, nr=20, nt=20))
    rows = stage.profile_rows(sol)

    assert len(rows) == 21
    assert rows[0] == {"r": 0.0, "u": pytest.approx(1.0)}
    assert _events(storage)[-1]["data"]["u_center"] == pytest.approx(1.0)
