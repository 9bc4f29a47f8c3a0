import traceback
from typing import Callable, Optional

import numpy as np

from tools.bsde import BsdeSolution, RobinTerm, solve_bsde
from tools.coefficients import Driver, PeriodicCoefficients
from tools.errors import RobinHomogError
from tools.reflected_sde import ReflectedPathEnsemble
from tools.regression import RegressionBasis
from tools.storage_tools import StorageManager


class BsdeStage:
    """Stage responsible for the backward regression on a simulated ensemble."""

    def __init__(self, storage_manager: StorageManager):
        self.name = "BsdeStage"
        self.storage = storage_manager

    def run(
        self,
        ensemble: ReflectedPathEnsemble,
        driver: Driver,
        robin: RobinTerm,
        basis: RegressionBasis,
        coeffs: PeriodicCoefficients,
        f: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None,
    ) -> BsdeSolution:
        """
        Solve the BSDE and trace y0 with its diagnostics.

        Args:
            ensemble: forward paths
            driver: terminal value and bounds
            robin: constant or torus field entering int c Y dK
            basis: regression basis
            coeffs: diffusion of the forward paths
            f: optional replacement nonlinearity (the averaged one)

        Returns:
            BsdeSolution
        """
        self.storage.log_trace("stage_call", {
            "stage": self.name,
            "action": "solve_bsde",
            "driver": driver.name,
            "robin": robin if not callable(robin) else coeffs.name,
            "basis": basis.describe(),
            "epsilon": ensemble.epsilon,
            "n_paths": ensemble.n_paths
        })

        try:
            solution = solve_bsde(ensemble, driver, robin, basis, coeffs, f=f)
        except RobinHomogError as e:
            self.storage.log_trace("stage_error", {
                "stage": self.name,
                "action": "solve_bsde",
                "error": type(e).__name__,
                "message": str(e),
                "traceback": traceback.format_exc().splitlines()[-3:]
            })
            raise

        self.storage.log_trace("stage_result", {
            "stage": self.name,
            "action": "solve_bsde",
            **solution.to_row(),
            **solution.diagnostics
        })
        return solution
