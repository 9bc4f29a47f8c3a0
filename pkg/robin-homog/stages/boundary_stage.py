import traceback
from typing import Optional, Tuple

from tools.boundary_measure import BoundaryAverage, ConditionNReport, check_condition_n, effective_robin
from tools.cell_solver import CorrectorSet
from tools.coefficients import PeriodicCoefficients
from tools.domain import ConvexDomain
from tools.errors import RobinHomogError
from tools.reflected_sde import ReflectedPathEnsemble
from tools.storage_tools import StorageManager


class BoundaryStage:
    """Stage responsible for local-time boundary averages: C_bar and the conormal flux condition."""

    def __init__(self, storage_manager: StorageManager):
        self.name = "BoundaryStage"
        self.storage = storage_manager

    def run(
        self,
        coeffs: PeriodicCoefficients,
        ensemble: ReflectedPathEnsemble,
        domain: ConvexDomain,
        correctors: Optional[CorrectorSet] = None,
        samples: int = 64,
    ) -> Tuple[BoundaryAverage, Optional[ConditionNReport]]:
        """
        Estimate C_bar on the ensemble and, with correctors, check the conormal flux condition.

        Returns:
            (C_bar estimate, condition report or None)
        """
        self.storage.log_trace("stage_call", {
            "stage": self.name,
            "action": "effective_robin",
            "epsilon": ensemble.epsilon,
            "n_paths": ensemble.n_paths
        })

        try:
            c_bar = effective_robin(coeffs.c, ensemble, coeffs.alpha)
            cond = None
            if correctors is not None:
                cond = check_condition_n(correctors, coeffs, ensemble, domain, samples=samples)
        except RobinHomogError as e:
            self.storage.log_trace("stage_error", {
                "stage": self.name,
                "action": "effective_robin",
                "error": type(e).__name__,
                "message": str(e),
                "traceback": traceback.format_exc().splitlines()[-3:]
            })
            raise

        self.storage.log_trace("stage_result", {
            "stage": self.name,
            "action": "effective_robin",
            "C_bar": c_bar.to_dict(),
            "condition_n": cond.to_dict() if cond is not None else None
        })
        return c_bar, cond
