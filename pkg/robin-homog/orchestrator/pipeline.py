from typing import Dict, Any, Sequence

from tools.storage_tools import StorageManager

TASKS = ("run_cell", "run_epsilon", "estimate_boundary", "run_homogenized", "write_report", "complete")


class PipelineOrchestrator:
    """
    Rule-based orchestrator for the convergence pipeline.

    Order: cell step, one run per epsilon (largest first), boundary
    estimate at the finest epsilon, homogenized run, report.
    """

    def __init__(self, storage_manager: StorageManager, epsilons: Sequence[float]):
        self.storage = storage_manager
        self.epsilons = list(epsilons)

        self.storage.log_trace("orchestrator_init", {
            "orchestrator": "PipelineOrchestrator",
            "tasks": list(TASKS),
            "epsilons": self.epsilons
        })

    def decide_next_task(self, current_state: Dict[str, Any]) -> str:
        """
        Decide the next task from the pipeline state.

        Args:
            current_state: flags cell_done, boundary_done, homogenized_done,
                report_written and the list eps_done

        Returns:
            Next task name, one of TASKS
        """
        task = self._rule_based_decision(current_state)
        self.storage.log_trace("orchestrator_decision", {
            "orchestrator": "PipelineOrchestrator",
            "current_state": current_state,
            "decision": task
        })
        return task

    def next_epsilon(self, current_state: Dict[str, Any]) -> float:
        done = set(current_state.get('eps_done', []))
        for eps in self.epsilons:
            if eps not in done:
                return eps
        raise ValueError("every epsilon has been run")

    def _rule_based_decision(self, state: Dict[str, Any]) -> str:
        """Rule-based decision logic for determining next task."""
        if not state.get('cell_done', False):
            return 'run_cell'
        elif len(set(state.get('eps_done', []))) < len(self.epsilons):
            return 'run_epsilon'
        elif not state.get('boundary_done', False):
            return 'estimate_boundary'
        elif not state.get('homogenized_done', False):
            return 'run_homogenized'
        elif not state.get('report_written', False):
            return 'write_report'
        else:
            return 'complete'
