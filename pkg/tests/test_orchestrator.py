from __future__ import annotations

import json

import pytest

from orchestrator import PipelineOrchestrator


def test_task_sequence(storage) -> None:
    orch = PipelineOrchestrator(storage, [0.5, 0.25])
    state = {"cell_done": False, "eps_done": [], "boundary_done": False,
             "homogenized_done": False, "report_written": False}

    seen = []
    while True:
        task = orch.decide_next_task(state)
        seen.append(task)
        if task == "complete":
            break
        if task == "run_cell":
            state["cell_done"] = True
        elif task == "run_epsilon":
            state["eps_done"].append(orch.next_epsilon(state))
        elif task == "estimate_boundary":
            state["boundary_done"] = True
        elif task == "run_homogenized":
            state["homogenized_done"] = True
        elif task == "write_report":
            state["report_written"] = True

    assert seen == ["run_cell", "run_epsilon", "run_epsilon", "estimate_boundary",
                    "run_homogenized", "write_report", "complete"]
    assert state["eps_done"] == [0.5, 0.25]


def test_decisions_are_traced(storage) -> None:
    orch = PipelineOrchestrator(storage, [0.1])
    orch.decide_next_task({"cell_done": True})

    events = [json.loads(line) for line in storage.trace_file.read_text().splitlines()]
    assert events[0]["event_type"] == "orchestrator_init"
    assert events[1]["data"]["decision"] == "run_epsilon"


def test_next_epsilon_when_all_done(storage) -> None:
    orch = PipelineOrchestrator(storage, [0.1])

    with pytest.raises(ValueError):
        orch.next_epsilon({"eps_done": [0.1]})
