import traceback
from typing import Dict, Any, List

from tools.errors import RobinHomogError
from tools.reference_solver import RadialProblem, RadialSolution, solve_radial
from tools.storage_tools import StorageManager


class ReferenceStage:
    """Stage responsible for the deterministic radial oracle."""

    def __init__(self, storage_manager: StorageManager):
        self.name = "ReferenceStage"
        self.storage = storage_manager

    def run(self, problem: RadialProblem) -> RadialSolution:
        self.storage.log_trace("stage_call", {
            "stage": self.name,
            "action": "solve_radial",
            "sigma2": problem.a_bar_scalar,
            "C_bar": problem.C_bar,
            "radius": problem.radius,
            "horizon": problem.horizon,
            "nr": problem.nr,
            "nt": problem.nt
        })

        try:
            solution = solve_radial(problem)
        except RobinHomogError as e:
            self.storage.log_trace("stage_error", {
                "stage": self.name,
                "action": "solve_radial",
                "error": type(e).__name__,
                "message": str(e),
                "traceback": traceback.format_exc().splitlines()[-3:]
            })
            raise

        self.storage.log_trace("stage_result", {
            "stage": self.name,
            "action": "solve_radial",
            "u_center": solution.u_center,
            "dt_halvings": solution.dt_halvings
        })
        return solution

    @staticmethod
    def profile_rows(solution: RadialSolution) -> List[Dict[str, Any]]:
        return [{"r": float(r), "u": float(u)} for r, u in zip(solution.r, solution.u0)]
