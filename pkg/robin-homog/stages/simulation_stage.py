import traceback
from typing import Dict, Any

from tools.coefficients import PeriodicCoefficients
from tools.domain import ConvexDomain
from tools.errors import RobinHomogError
from tools.reflected_sde import ReflectedPathEnsemble, SimConfig, local_time_stats, simulate_paths
from tools.storage_tools import StorageManager


class SimulationStage:
    """Stage responsible for simulating reflected path ensembles."""

    def __init__(self, storage_manager: StorageManager):
        self.name = "SimulationStage"
        self.storage = storage_manager

    def run(self, coeffs: PeriodicCoefficients, domain: ConvexDomain, cfg: SimConfig) -> ReflectedPathEnsemble:
        """
        Simulate one ensemble and trace its local-time statistics.

        Args:
            coeffs: coefficients of the diffusion
            domain: convex domain with its reflection geometry
            cfg: simulation parameters

        Returns:
            ReflectedPathEnsemble
        """
        self.storage.log_trace("stage_call", {
            "stage": self.name,
            "action": "simulate_paths",
            "family": coeffs.name,
            "domain": domain.kind,
            "epsilon": cfg.epsilon,
            "dt": cfg.dt,
            "horizon": cfg.horizon,
            "n_paths": cfg.n_paths,
            "seed": cfg.seed,
            "block_offset": cfg.block_offset
        })

        try:
            ensemble = simulate_paths(coeffs, domain, cfg)
        except RobinHomogError as e:
            self.storage.log_trace("stage_error", {
                "stage": self.name,
                "action": "simulate_paths",
                "error": type(e).__name__,
                "message": str(e),
                "traceback": traceback.format_exc().splitlines()[-3:]
            })
            raise

        self.storage.log_trace("stage_result", {
            "stage": self.name,
            "action": "simulate_paths",
            "aborted": int(ensemble.aborted.sum()),
            **local_time_stats(ensemble)
        })
        return ensemble

    def summary(self, ensemble: ReflectedPathEnsemble) -> Dict[str, Any]:
        stats = local_time_stats(ensemble)
        return {
            "epsilon": ensemble.epsilon,
            "dt": ensemble.dt,
            "steps": ensemble.steps,
            "n_paths": ensemble.n_paths,
            "aborted": int(ensemble.aborted.sum()),
            **stats
        }
