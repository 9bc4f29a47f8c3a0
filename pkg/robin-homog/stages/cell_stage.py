import traceback
from typing import Dict, Any, List, Sequence

from tools.cell_solver import EffectiveModel, effective_model
from tools.coefficients import Driver, PeriodicCoefficients, validate
from tools.errors import PreconditionError, RobinHomogError
from tools.storage_tools import StorageManager


class CellStage:
    """Stage responsible for the torus step: measure, correctors and effective coefficients."""

    def __init__(self, storage_manager: StorageManager):
        self.name = "CellStage"
        self.storage = storage_manager

    def run(
        self,
        coeffs: PeriodicCoefficients,
        driver: Driver,
        grid_n: int,
        p_list: Sequence[float] = (2.0, 4.0),
        tol: float = 1e-8,
        method: str = "direct",
        fbar_batch: int = 1 << 18,
    ) -> EffectiveModel:
        """
        Validate the coefficients and solve the cell problems.

        Args:
            coeffs: periodic coefficients of the family
            driver: driver whose nonlinearity is averaged into f_bar
            grid_n: cell grid nodes per axis
            p_list: exponents of the corrector gradient table

        Returns:
            EffectiveModel with a_bar, f_bar, a_hat and the cell report
        """
        self.storage.log_trace("stage_call", {
            "stage": self.name,
            "action": "effective_model",
            "family": coeffs.name,
            "grid_n": grid_n,
            "method": method
        })

        try:
            check = validate(coeffs)
            if not check.passed:
                failed = [k for k, ok in check.checks.items() if not ok]
                raise PreconditionError(f"coefficient family {coeffs.name} fails validation: {failed}")
            model = effective_model(coeffs, driver, grid_n, p_list=p_list, tol=tol, method=method, fbar_batch=fbar_batch)
        except RobinHomogError as e:
            self._log_error("effective_model", e)
            raise

        self.storage.log_trace("stage_result", {
            "stage": self.name,
            "action": "effective_model",
            "a_bar": model.a_bar.tolist(),
            "m_min": model.report["m_min"],
            "validation": check.to_dict()
        })
        return model

    def report_rows(self, model: EffectiveModel, p_list: Sequence[float]) -> List[Dict[str, Any]]:
        """Flatten the cell report into (quantity, i, j, value) rows."""
        rows: List[Dict[str, Any]] = []
        dim = model.a_bar.shape[0]
        for i in range(dim):
            for j in range(dim):
                rows.append({"quantity": "a_bar", "i": i, "j": j, "value": float(model.a_bar[i, j])})
        for name in ("reuss", "voigt"):
            matrix = getattr(model, name)
            for i in range(dim):
                rows.append({"quantity": name, "i": i, "j": i, "value": float(matrix[i, i])})
        for p in p_list:
            for i, value in enumerate(model.report[f"lp_{p:g}"]):
                rows.append({"quantity": f"lp_{p:g}", "i": i, "j": -1, "value": float(value)})
        for i, value in enumerate(model.report["centering_residual"]):
            rows.append({"quantity": "centering_residual", "i": i, "j": -1, "value": float(value)})
        for key in ("m_min", "m_max", "m_mean", "adjoint_residual", "div_a_consistency", "z_lipschitz"):
            rows.append({"quantity": key, "i": -1, "j": -1, "value": float(model.report[key])})
        c_bar = float("nan") if model.C_bar is None else model.C_bar
        rows.append({"quantity": "C_bar", "i": -1, "j": -1, "value": c_bar})
        return rows

    def _log_error(self, action: str, error: Exception):
        self.storage.log_trace("stage_error", {
            "stage": self.name,
            "action": action,
            "error": type(error).__name__,
            "message": str(error),
            "traceback": traceback.format_exc().splitlines()[-3:]
        })
