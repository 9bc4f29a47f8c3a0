from __future__ import annotations

import json
from dataclasses import replace

import numpy as np
import pandas as pd
import pytest

from conftest import make_ensemble
from tools.errors import PreconditionError
from tools.storage_tools import read_ensemble, write_ensemble


def _trace(storage) -> list[dict]:
    return [json.loads(line) for line in storage.trace_file.read_text().splitlines()]


def test_trace_serializes_numpy_values(storage) -> None:
    storage.log_trace("stage_result", {"a_bar": np.eye(2), "n": np.int64(3), "x": 0.5})

    entry = _trace(storage)[0]
    assert entry["event_type"] == "stage_result"
    assert entry["data"] == {"a_bar": [[1.0, 0.0], [0.0, 1.0]], "n": 3, "x": 0.5}


def test_save_table_writes_csv_and_traces(storage) -> None:
    path = storage.save_table("convergence", [{"epsilon": 0.5, "y0": 1.0 / 3.0}])

    frame = pd.read_csv(path)
    assert list(frame.columns) == ["epsilon", "y0"]
    assert frame["y0"].iloc[0] == pytest.approx(1.0 / 3.0, rel=1e-11)
    assert _trace(storage)[-1]["event_type"] == "table_saved"


def test_save_json(storage) -> None:
    path = storage.save_json("summary", {"slope": np.float64(0.5)})

    assert json.loads(path.read_text()) == {"slope": 0.5}


def test_ensemble_dump_restores_paths(storage) -> None:
    rng = np.random.default_rng(0)
    states = rng.normal(size=(3, 5, 2))
    d_k = np.abs(rng.normal(size=(3, 4))) * (rng.uniform(size=(3, 4)) > 0.5)
    d_m = rng.normal(size=(3, 4, 2))
    ens = make_ensemble(states, d_k, d_m, epsilon=0.25, dt=0.01)

    loaded = read_ensemble(storage.save_ensemble(ens))

    assert np.array_equal(loaded.states, ens.states)
    assert np.array_equal(loaded.d_m, ens.d_m)
    assert np.array_equal(loaded.d_k, ens.d_k)
    assert np.array_equal(loaded.boundary_flags, d_k > 0)
    assert loaded.epsilon == 0.25 and loaded.dt == 0.01


def test_aborted_paths_are_not_dumped(tmp_path) -> None:
    ens = make_ensemble(np.zeros((4, 3, 2)))
    aborted = np.array([False, True, False, False])
    ens = replace(ens, aborted=aborted)

    write_ensemble(tmp_path / "e.bin", ens)

    assert read_ensemble(tmp_path / "e.bin").n_paths == 3


def test_corrupt_dumps_are_rejected(tmp_path) -> None:
    short = tmp_path / "short.bin"
    short.write_bytes(b"RH")
    wrong = tmp_path / "wrong.bin"
    wrong.write_bytes(b"XXXX" + bytes(32))

    with pytest.raises(PreconditionError):
        read_ensemble(short)
    with pytest.raises(PreconditionError):
        read_ensemble(wrong)
